//! End-to-end orchestration: odometry, retrieval, verification and graph correction,
//! plus dataset handling, evaluation metrics and ablation switches.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod run;

pub use config::{Ablation, DescriptorSource, OptimizeTrigger, PipelineConfig};
pub use eval::{ate_rmse, kitti_rel, loop_eval, EvalError};
pub use run::{run_slam, Models, PipelineError, SlamOutput};
