//! Scan-to-multi-keyframe registration over oriented surface points, keyframe
//! lifecycle and odometry constraint emission.

use crate::geometry::{mat3_diag, mat3_zero, Mat3, Pose2, Twist2};
use crate::posegraph::{huber, huber_weight};
use crate::sensing::{
    extract_surface_points, kstrongest_filter, polar_to_peaks, PeakCloud, PolarScan, SurfacePoint, SurfacePointSet,
};
use crate::spatial::GridIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RegistrationError {
    #[error("no correspondences at the initial pose")]
    NoCorrespondences,
    #[error("registration diverged")]
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Normal alignment times the ratio of the two sample counts.
    Similarity,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    pub huber_delta: f64,
    pub correspondence_radius: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub weighting: Weighting,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self { huber_delta: 0.1, correspondence_radius: 4.5, max_iterations: 30, tolerance: 1e-6, weighting: Weighting::Similarity }
    }
}

/// Signed point-to-line distance of `src` (moved by `pose`) from the line through `dst`.
pub fn p2l_residual(src: &SurfacePoint, dst: &SurfacePoint, pose: &Pose2) -> f64 {
    let p = pose.transform_point(src.mean);
    dst.normal[0] * (p[0] - dst.mean[0]) + dst.normal[1] * (p[1] - dst.mean[1])
}

/// Derivative of [`p2l_residual`] with respect to `(x, y, theta)`.
fn p2l_jacobian(src: &SurfacePoint, dst: &SurfacePoint, pose: &Pose2) -> [f64; 3] {
    let (s, c) = pose.theta.sin_cos();
    let m = src.mean;
    let dr = [-s * m[0] - c * m[1], c * m[0] - s * m[1]];
    [dst.normal[0], dst.normal[1], dst.normal[0] * dr[0] + dst.normal[1] * dr[1]]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub src: usize,
    pub keyframe: usize,
    pub dst: usize,
    pub weight: f64,
}

/// `a_normal` is the source normal already rotated into the target frame.
fn similarity_weight(a: &SurfacePoint, a_normal: [f64; 2], b: &SurfacePoint, weighting: Weighting) -> f64 {
    match weighting {
        Weighting::Uniform => 1.0,
        Weighting::Similarity => {
            let align = (a_normal[0] * b.normal[0] + a_normal[1] * b.normal[1]).abs();
            align * a.weight.min(b.weight) / a.weight.max(b.weight)
        }
    }
}

/// Keyframe surfaces prepared for repeated nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct KeyframeTarget {
    pub surface: SurfacePointSet,
    index: GridIndex,
}

impl KeyframeTarget {
    pub fn new(surface: SurfacePointSet, radius: f64) -> Self {
        let pts = surface.points.iter().map(|p| p.mean).collect();
        Self { index: GridIndex::new(pts, radius.max(1e-6)), surface }
    }
}

/// Mutual nearest neighbours within `radius` between `current` (moved by `pose`)
/// and each target set.
pub fn associate(
    current: &SurfacePointSet,
    targets: &[KeyframeTarget],
    pose: &Pose2,
    cfg: &RegistrationConfig,
) -> Vec<Correspondence> {
    let radius = cfg.correspondence_radius;
    let moved: Vec<[f64; 2]> = current.points.iter().map(|p| pose.transform_point(p.mean)).collect();
    let cur_index = GridIndex::new(moved.clone(), radius.max(1e-6));
    let (sin, cos) = pose.theta.sin_cos();
    let mut out = Vec::new();
    for (k, t) in targets.iter().enumerate() {
        for (i, q) in moved.iter().enumerate() {
            let Some((j, _)) = t.index.nearest_within(*q, radius) else { continue };
            match cur_index.nearest_within(t.index.point(j), radius) {
                Some((back, _)) if back == i => {}
                _ => continue,
            }
            let src = &current.points[i];
            let n = [cos * src.normal[0] - sin * src.normal[1], sin * src.normal[0] + cos * src.normal[1]];
            let w = similarity_weight(src, n, &t.surface.points[j], cfg.weighting);
            if w > 0.0 {
                out.push(Correspondence { src: i, keyframe: k, dst: j, weight: w });
            }
        }
    }
    out
}

/// Registration cost for a fixed correspondence set.
pub struct FixedAssociation<'a> {
    pub current: &'a SurfacePointSet,
    pub targets: &'a [KeyframeTarget],
    pub correspondences: &'a [Correspondence],
    pub huber_delta: f64,
}

pub struct Linearization {
    pub cost: f64,
    /// Gradient of the cost.
    pub gradient: [f64; 3],
    /// Robustified Gauss-Newton approximation of half the Hessian, `Σ w ρ' JᵀJ`.
    pub jtj: Mat3,
}

impl FixedAssociation<'_> {
    fn pair(&self, c: &Correspondence) -> (&SurfacePoint, &SurfacePoint) {
        (&self.current.points[c.src], &self.targets[c.keyframe].surface.points[c.dst])
    }

    pub fn cost(&self, pose: &Pose2) -> f64 {
        self.correspondences
            .iter()
            .map(|c| {
                let (s, d) = self.pair(c);
                let g = p2l_residual(s, d, pose);
                c.weight * huber(g * g, self.huber_delta)
            })
            .sum()
    }

    pub fn linearize(&self, pose: &Pose2) -> Linearization {
        let mut cost = 0.0;
        let mut gradient = [0.0; 3];
        let mut jtj = mat3_zero();
        for c in self.correspondences {
            let (s, d) = self.pair(c);
            let g = p2l_residual(s, d, pose);
            let j = p2l_jacobian(s, d, pose);
            let rho_d = huber_weight(g * g, self.huber_delta);
            cost += c.weight * huber(g * g, self.huber_delta);
            for a in 0..3 {
                gradient[a] += 2.0 * c.weight * rho_d * g * j[a];
                for b in 0..3 {
                    jtj[a][b] += c.weight * rho_d * j[a] * j[b];
                }
            }
        }
        Linearization { cost, gradient, jtj }
    }

    /// Levenberg-Marquardt on the fixed association; returns the pose and the cost
    /// of every accepted iterate (starting with the initial cost).
    pub fn minimize(&self, init: &Pose2, max_iterations: usize, tolerance: f64) -> (Pose2, Vec<f64>) {
        let mut pose = *init;
        let mut lin = self.linearize(&pose);
        let mut history = vec![lin.cost];
        let mut lambda = 1e-4 * max_diag(&lin.jtj).max(1e-12);
        let mut nu = 2.0;
        for _ in 0..max_iterations {
            let Some(step) = damped_step(&lin, lambda) else { break };
            let cand = Pose2::new(pose.x + step[0], pose.y + step[1], pose.theta + step[2]);
            let new_cost = self.cost(&cand);
            if new_cost <= lin.cost {
                pose = cand;
                lin = self.linearize(&pose);
                history.push(lin.cost);
                lambda *= 1.0 / 3.0;
                nu = 2.0;
                if norm3(&step) < tolerance {
                    break;
                }
            } else {
                lambda *= nu;
                nu *= 2.0;
                if norm3(&step) < tolerance {
                    break;
                }
            }
        }
        (pose, history)
    }
}

fn max_diag(m: &Mat3) -> f64 {
    m[0][0].max(m[1][1]).max(m[2][2])
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Solves `(2 JᵀJ + λ I) δ = -∇f`.
fn damped_step(lin: &Linearization, lambda: f64) -> Option<[f64; 3]> {
    let mut a = lin.jtj;
    for (i, row) in a.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v *= 2.0;
        }
        row[i] += lambda;
    }
    let inv = crate::geometry::mat3_inverse(&a)?;
    let g = lin.gradient;
    let step = crate::geometry::mat3_vec(&inv, &[-g[0], -g[1], -g[2]]);
    step.iter().all(|v| v.is_finite()).then_some(step)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Registration {
    pub pose: Pose2,
    pub final_cost: f64,
    pub correspondences: usize,
    pub jacobian_gram: Mat3,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped steps spent on each fixed association before re-associating.
const INNER_ITERATIONS: usize = 10;

/// Registers `current` against the targets (expressed in a common frame) starting from `init`.
pub fn register(
    current: &SurfacePointSet,
    targets: &[KeyframeTarget],
    init: &Pose2,
    cfg: &RegistrationConfig,
) -> Result<Registration, RegistrationError> {
    let mut pose = *init;
    let mut corr = associate(current, targets, &pose, cfg);
    if corr.is_empty() {
        return Err(RegistrationError::NoCorrespondences);
    }
    let initial_cost = FixedAssociation { current, targets, correspondences: &corr, huber_delta: cfg.huber_delta }.cost(&pose);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let problem = FixedAssociation { current, targets, correspondences: &corr, huber_delta: cfg.huber_delta };
        let (next_pose, history) = problem.minimize(&pose, INNER_ITERATIONS, cfg.tolerance);
        let step = pose.between(&next_pose);
        pose = next_pose;
        if !pose.is_finite() {
            return Err(RegistrationError::Diverged);
        }
        let moved = history.len() > 1;
        let next = associate(current, targets, &pose, cfg);
        if next.is_empty() {
            return Err(RegistrationError::Diverged);
        }
        let same = next == corr;
        corr = next;
        if same && (!moved || step.translation_norm() + step.theta.abs() < cfg.tolerance) {
            converged = true;
            break;
        }
    }
    let problem = FixedAssociation { current, targets, correspondences: &corr, huber_delta: cfg.huber_delta };
    let lin = problem.linearize(&pose);
    if !converged && lin.cost > initial_cost {
        return Err(RegistrationError::Diverged);
    }
    Ok(Registration {
        pose,
        final_cost: lin.cost,
        correspondences: corr.len(),
        jacobian_gram: lin.jtj,
        iterations,
        converged,
    })
}

/// Tunables for peak extraction shared by odometry and loop closure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingConfig {
    pub k_strongest: usize,
    pub min_intensity: f64,
    pub cell_size: f64,
    pub min_samples: usize,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self { k_strongest: 12, min_intensity: 10.0, cell_size: 3.0, min_samples: 6 }
    }
}

/// Artificial odometry perturbation applied to every keyframe increment.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdomNoise {
    pub sigma_xy: f64,
    pub sigma_theta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdometryConfig {
    pub keyframe_spacing: f64,
    pub n_keyframes: usize,
    pub fixed_covariance: [f64; 3],
    pub registration: RegistrationConfig,
    pub noise: OdomNoise,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        Self {
            keyframe_spacing: 1.5,
            n_keyframes: 4,
            fixed_covariance: [1e-2, 1e-2, 1e-3],
            registration: RegistrationConfig::default(),
            noise: OdomNoise::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Keyframe {
    pub id: usize,
    /// Pose in the odometry frame.
    pub pose: Pose2,
    /// Peaks and surface points in the keyframe's own sensor frame.
    pub peaks: PeakCloud,
    pub surface: SurfacePointSet,
    pub timestamp: f64,
    pub scan_id: u64,
    /// Odometry path length from the first keyframe.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdomConstraint {
    pub from_id: usize,
    pub to_id: usize,
    pub relative: Pose2,
    pub covariance: Mat3,
    /// Registration information behind the constraint, for Hessian-based covariance.
    pub jacobian_gram: Mat3,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub scan_id: u64,
    pub t: f64,
    pub pose: Pose2,
    pub twist: Twist2,
    pub keyframe: Option<Arc<Keyframe>>,
    pub constraint: Option<OdomConstraint>,
    /// Registration failed and the constant-velocity prediction was used.
    pub degraded: bool,
    /// Keyframe the pose is anchored to, with the pose relative to it.
    pub anchor: usize,
    pub anchor_relative: Pose2,
}

/// Sequential odometry state machine.
pub struct Odometry {
    sensing: SensingConfig,
    cfg: OdometryConfig,
    keyframes: Vec<Arc<Keyframe>>,
    targets: Vec<KeyframeTarget>,
    pose: Pose2,
    twist: Twist2,
    last_t: Option<f64>,
    last_jtj: Mat3,
    rng: ChaCha8Rng,
}

impl Odometry {
    pub fn new(sensing: SensingConfig, cfg: OdometryConfig) -> Self {
        Self {
            sensing,
            cfg,
            keyframes: Vec::new(),
            targets: Vec::new(),
            pose: Pose2::identity(),
            twist: Twist2::zero(),
            last_t: None,
            last_jtj: mat3_zero(),
            rng: ChaCha8Rng::seed_from_u64(cfg.noise.seed),
        }
    }

    pub fn keyframes(&self) -> &[Arc<Keyframe>] {
        &self.keyframes
    }

    /// Filter, de-skew and summarize a sweep into peaks and surface points.
    pub fn preprocess(sensing: &SensingConfig, scan: &PolarScan, twist: &Twist2) -> (PeakCloud, SurfacePointSet) {
        let filtered = kstrongest_filter(scan, sensing.k_strongest, sensing.min_intensity);
        let peaks = polar_to_peaks(&filtered, twist);
        let surface = extract_surface_points(&peaks, sensing.cell_size, sensing.min_samples);
        (peaks, surface)
    }

    fn push_keyframe(&mut self, pose: Pose2, peaks: PeakCloud, surface: SurfacePointSet, t: f64, scan_id: u64) -> Arc<Keyframe> {
        let distance = match self.keyframes.last() {
            Some(k) => k.distance + k.pose.between(&pose).translation_norm(),
            None => 0.0,
        };
        let kf = Arc::new(Keyframe { id: self.keyframes.len(), pose, peaks, surface, timestamp: t, scan_id, distance });
        self.targets.push(KeyframeTarget::new(kf.surface.transformed(&pose), self.cfg.registration.correspondence_radius));
        self.keyframes.push(kf.clone());
        kf
    }

    pub fn step(&mut self, scan: &PolarScan) -> StepOutput {
        let t = scan.mid_time();
        let (peaks, surface) = Self::preprocess(&self.sensing, scan, &self.twist);
        let Some(last_t) = self.last_t else {
            self.last_t = Some(t);
            let kf = self.push_keyframe(Pose2::identity(), peaks, surface, t, scan.scan_id);
            return StepOutput {
                scan_id: scan.scan_id,
                t,
                pose: self.pose,
                twist: self.twist,
                keyframe: Some(kf),
                constraint: None,
                degraded: false,
                anchor: 0,
                anchor_relative: Pose2::identity(),
            };
        };
        let dt = (t - last_t).max(1e-9);
        let predicted = self.pose.compose(&self.twist.integrate(dt));
        let first = self.targets.len().saturating_sub(self.cfg.n_keyframes);
        let (pose, degraded) = match register(&surface, &self.targets[first..], &predicted, &self.cfg.registration) {
            Ok(r) => {
                self.last_jtj = r.jacobian_gram;
                (r.pose, false)
            }
            Err(e) => {
                log::debug!("scan {}: {e}, using constant-velocity prediction", scan.scan_id);
                (predicted, true)
            }
        };
        self.twist = Twist2::between(&self.pose, &pose, dt);
        self.pose = pose;
        self.last_t = Some(t);
        let last_kf = self.keyframes.last().expect("initialized").clone();
        let mut rel = last_kf.pose.between(&pose);
        let mut keyframe = None;
        let mut constraint = None;
        if rel.translation_norm() > self.cfg.keyframe_spacing {
            let noise = self.cfg.noise;
            if noise.sigma_xy > 0.0 || noise.sigma_theta > 0.0 {
                let nxy = Normal::new(0.0, noise.sigma_xy.max(0.0)).unwrap();
                let nth = Normal::new(0.0, noise.sigma_theta.max(0.0)).unwrap();
                let e = Pose2::new(nxy.sample(&mut self.rng), nxy.sample(&mut self.rng), nth.sample(&mut self.rng));
                rel = rel.compose(&e);
            }
            let kf_pose = last_kf.pose.compose(&rel);
            self.pose = kf_pose;
            let kf = self.push_keyframe(kf_pose, peaks, surface, t, scan.scan_id);
            constraint = Some(OdomConstraint {
                from_id: last_kf.id,
                to_id: kf.id,
                relative: rel,
                covariance: mat3_diag(self.cfg.fixed_covariance),
                jacobian_gram: self.last_jtj,
            });
            keyframe = Some(kf);
        }
        let anchor = self.keyframes.last().unwrap();
        StepOutput {
            scan_id: scan.scan_id,
            t,
            pose: self.pose,
            twist: self.twist,
            keyframe,
            constraint,
            degraded,
            anchor: anchor.id,
            anchor_relative: anchor.pose.between(&self.pose),
        }
    }
}
