//! 2D radar SLAM with verified loop closure.
//!
//! The crate turns polar radar sweeps into odometry, retrieves loop candidates with a
//! coupled appearance/odometry search, verifies every candidate after registration
//! with learned alignment-quality classifiers, and corrects the trajectory with a
//! robust sparse pose graph. [`simworld`] provides a deterministic synthetic radar
//! world so every stage can be checked against ground truth.
//!
//! The geometric kernels ([`geometry`], [`posegraph`]) are generic over the scalar
//! type; the aliases below fix the common choices.

pub mod alignment;
pub mod geometry;
pub mod logistic;
pub mod loopclosure;
pub mod odometry;
pub mod pipeline;
pub mod placerec;
pub mod posegraph;
pub mod scalar;
pub mod sensing;
pub mod simworld;
pub mod spatial;
mod sparse;

pub use geometry::{Pose2, Twist2};
pub use scalar::Scalar;

pub type Pose2f = geometry::Pose2<f32>;
pub type Pose2d = geometry::Pose2<f64>;
pub type Twist2f = geometry::Twist2<f32>;
pub type Twist2d = geometry::Twist2<f64>;
pub type PoseGraphf = posegraph::PoseGraph<f32>;
pub type PoseGraphd = posegraph::PoseGraph<f64>;
