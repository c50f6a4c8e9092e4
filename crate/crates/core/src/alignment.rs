//! Alignment-quality features for registered scan pairs, self-supervised training data
//! by error injection, and the logistic alignment classifier.

use crate::geometry::Pose2;
use crate::logistic::{fit, sigmoid, FitError, FitSettings};
use crate::odometry::{associate, register, FixedAssociation, Keyframe, KeyframeTarget, RegistrationConfig};
use crate::sensing::{PeakCloud, SurfacePointSet};
use crate::spatial::GridIndex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignError {
    #[error("every point lacks enough neighbours for an entropy estimate")]
    TooSparse,
    #[error("empty input cloud")]
    Empty,
    #[error("training failed: {0}")]
    Fit(#[from] FitError),
    #[error("model parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub entropy_radius: f64,
    pub overlap_radius: f64,
    pub det_floor: f64,
    pub min_neighbors: usize,
    pub l2: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { entropy_radius: 3.0, overlap_radius: 1.0, det_floor: 1e-12, min_neighbors: 3, l2: 1e-6 }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.entropy_radius > 0.0 && self.overlap_radius > 0.0 && self.det_floor > 0.0 && self.l2 >= 0.0) {
            return Err("alignment radii and determinant floor must be positive".into());
        }
        Ok(())
    }
}

pub const FEATURE_NAMES: [&str; 6] = ["h_j", "h_s", "h_o", "c_f", "c_o", "c_a"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityVector {
    pub h_j: f64,
    pub h_s: f64,
    pub h_o: f64,
    pub c_f: f64,
    pub c_o: f64,
    pub c_a: f64,
}

impl QualityVector {
    /// `[h_j, h_s, h_o, c_f, c_o, c_a, 1]`.
    pub fn to_array(&self) -> [f64; 7] {
        [self.h_j, self.h_s, self.h_o, self.c_f, self.c_o, self.c_a, 1.0]
    }
}

/// Running first and second moments of a neighbourhood, taken about the probe point.
#[derive(Default)]
struct Moments {
    n: usize,
    sx: f64,
    sy: f64,
    sxx: f64,
    sxy: f64,
    syy: f64,
}

impl Moments {
    fn add(&mut self, p: [f64; 2], origin: [f64; 2]) {
        let (x, y) = (p[0] - origin[0], p[1] - origin[1]);
        self.n += 1;
        self.sx += x;
        self.sy += y;
        self.sxx += x * x;
        self.sxy += x * y;
        self.syy += y * y;
    }

    /// Entropy of the Gaussian fitted with the population covariance.
    fn entropy(&self, det_floor: f64) -> f64 {
        let n = self.n as f64;
        let (mx, my) = (self.sx / n, self.sy / n);
        let det = (self.sxx / n - mx * mx) * (self.syy / n - my * my) - (self.sxy / n - mx * my).powi(2);
        0.5 * ((2.0 * PI * std::f64::consts::E).powi(2) * det.max(det_floor)).ln()
    }
}

/// Average per-point differential entropies of the joint cloud (`h_j`) and of each point's
/// own cloud (`h_s`). `rel` places `pq` in the frame of `pc`.
pub fn entropy_measures(pq: &PeakCloud, pc: &PeakCloud, rel: &Pose2, cfg: &AlignConfig) -> Result<(f64, f64), AlignError> {
    if pq.is_empty() || pc.is_empty() {
        return Err(AlignError::Empty);
    }
    let q: Vec<[f64; 2]> = pq.points.iter().map(|p| rel.transform_point(p.xy())).collect();
    let c = pc.xy();
    let nq = q.len();
    let joint: Vec<[f64; 2]> = q.iter().chain(&c).copied().collect();
    let joint_index = GridIndex::new(joint.clone(), cfg.entropy_radius);
    let q_index = GridIndex::new(q, cfg.entropy_radius);
    let c_index = GridIndex::new(c, cfg.entropy_radius);
    let per_point: Vec<Option<(f64, f64)>> = (0..joint.len())
        .into_par_iter()
        .map(|i| {
            let p = joint[i];
            let own = if i < nq { &q_index } else { &c_index };
            let mut sep = Moments::default();
            own.for_each_within(p, cfg.entropy_radius, |j, _| sep.add(own.point(j), p));
            if sep.n < cfg.min_neighbors {
                return None;
            }
            let mut all = Moments::default();
            joint_index.for_each_within(p, cfg.entropy_radius, |j, _| all.add(joint[j], p));
            Some((all.entropy(cfg.det_floor), sep.entropy(cfg.det_floor)))
        })
        .collect();
    let used: Vec<(f64, f64)> = per_point.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(AlignError::TooSparse);
    }
    let n = used.len() as f64;
    Ok((used.iter().map(|v| v.0).sum::<f64>() / n, used.iter().map(|v| v.1).sum::<f64>() / n))
}

/// Fraction of pooled points with a neighbour within `r` in the other cloud.
pub fn overlap(pq: &PeakCloud, pc: &PeakCloud, rel: &Pose2, r: f64) -> f64 {
    let q: Vec<[f64; 2]> = pq.points.iter().map(|p| rel.transform_point(p.xy())).collect();
    let c = pc.xy();
    let total = q.len() + c.len();
    if total == 0 {
        return 0.0;
    }
    let q_index = GridIndex::new(q.clone(), r);
    let c_index = GridIndex::new(c.clone(), r);
    let hits = q.iter().filter(|p| c_index.any_within(**p, r)).count() + c.iter().filter(|p| q_index.any_within(**p, r)).count();
    hits as f64 / total as f64
}

/// Single-keyframe point-to-line registration cost, correspondence count and mean set size.
pub fn cfear_measures(mq: &SurfacePointSet, mc: &SurfacePointSet, rel: &Pose2, reg: &RegistrationConfig) -> (f64, f64, f64) {
    let targets = [KeyframeTarget::new(mc.clone(), reg.correspondence_radius)];
    let corr = associate(mq, &targets, rel, reg);
    let c_f = FixedAssociation { current: mq, targets: &targets, correspondences: &corr, huber_delta: reg.huber_delta }.cost(rel);
    (c_f, corr.len() as f64, 0.5 * (mq.len() + mc.len()) as f64)
}

/// One side of a scan pair: peaks and surface points in the sensor frame.
#[derive(Debug, Clone, Copy)]
pub struct ScanView<'a> {
    pub peaks: &'a PeakCloud,
    pub surface: &'a SurfacePointSet,
}

impl<'a> ScanView<'a> {
    pub fn of(kf: &'a Keyframe) -> Self {
        Self { peaks: &kf.peaks, surface: &kf.surface }
    }
}

pub fn quality(q: ScanView, c: ScanView, rel: &Pose2, cfg: &AlignConfig, reg: &RegistrationConfig) -> Result<QualityVector, AlignError> {
    let (h_j, h_s) = entropy_measures(q.peaks, c.peaks, rel, cfg)?;
    let h_o = overlap(q.peaks, c.peaks, rel, cfg.overlap_radius);
    let (c_f, c_o, c_a) = cfear_measures(q.surface, c.surface, rel, reg);
    Ok(QualityVector { h_j, h_s, h_o, c_f, c_o, c_a })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub features: QualityVector,
    pub aligned: bool,
    pub weight: f64,
    /// Applied on the right of the reference alignment.
    pub injected_error: Pose2,
}

impl TrainingSample {
    pub fn error_magnitude(&self) -> f64 {
        self.injected_error.translation_norm()
    }
}

/// The twelve injected errors: 0.5/1/2 m along ±x and ±y, each with a clockwise
/// rotation of 0.5°/2°/15° respectively.
pub fn injected_errors() -> Vec<Pose2> {
    let levels = [(0.5, 0.5), (1.0, 2.0), (2.0, 15.0)];
    let dirs = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)];
    let mut out = Vec::with_capacity(12);
    for (m, deg) in levels {
        for (dx, dy) in dirs {
            out.push(Pose2::new(m * dx, m * dy, -f64::to_radians(deg)));
        }
    }
    out
}

/// Positive to negative weight ratio, the inverse of the 1:12 class frequency.
pub const POSITIVE_WEIGHT: f64 = 12.0;

/// Refines the reference alignment of each pair by single-keyframe registration, then
/// emits one aligned sample and twelve error-injected ones. Pairs whose registration or
/// feature extraction fails are skipped.
pub fn make_training_set(
    pairs: &[(ScanView, ScanView, Pose2)],
    cfg: &AlignConfig,
    reg: &RegistrationConfig,
) -> Vec<TrainingSample> {
    let errors = injected_errors();
    let per_pair: Vec<Option<Vec<TrainingSample>>> = pairs
        .par_iter()
        .map(|(q, c, rel)| {
            let target = [KeyframeTarget::new(c.surface.clone(), reg.correspondence_radius)];
            let aligned = register(q.surface, &target, rel, reg).ok()?.pose;
            let mut out = Vec::with_capacity(13);
            out.push(TrainingSample {
                features: quality(*q, *c, &aligned, cfg, reg).ok()?,
                aligned: true,
                weight: POSITIVE_WEIGHT,
                injected_error: Pose2::identity(),
            });
            for e in &errors {
                out.push(TrainingSample {
                    features: quality(*q, *c, &aligned.compose(e), cfg, reg).ok()?,
                    aligned: false,
                    weight: 1.0,
                    injected_error: *e,
                });
            }
            Some(out)
        })
        .collect();
    per_pair.into_iter().flatten().flatten().collect()
}

pub fn training_csv(samples: &[TrainingSample]) -> String {
    let mut s = String::from("h_j,h_s,h_o,c_f,c_o,c_a,label,weight,dx,dy,dtheta\n");
    for t in samples {
        let f = t.features;
        let e = t.injected_error;
        writeln!(
            s,
            "{:?},{:?},{:?},{:?},{:?},{:?},{},{:?},{:?},{:?},{:?}",
            f.h_j,
            f.h_s,
            f.h_o,
            f.c_f,
            f.c_o,
            f.c_a,
            u8::from(t.aligned),
            t.weight,
            e.x,
            e.y,
            e.theta
        )
        .unwrap();
    }
    s
}

/// `β` over standardized features plus the standardization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentModel {
    pub beta: [f64; 7],
    pub mean: [f64; 6],
    pub scale: [f64; 6],
}

impl AlignmentModel {
    pub fn from_beta(beta: [f64; 7]) -> Self {
        Self { beta, mean: [0.0; 6], scale: [1.0; 6] }
    }

    pub fn standardize(&self, x: &QualityVector) -> [f64; 7] {
        let mut v = x.to_array();
        for i in 0..6 {
            v[i] = (v[i] - self.mean[i]) / self.scale[i];
        }
        v
    }

    /// `(d_align, p_align)`.
    pub fn assess(&self, x: &QualityVector) -> (f64, f64) {
        let d: f64 = self.standardize(x).iter().zip(&self.beta).map(|(a, b)| a * b).sum();
        (d, sigmoid(d))
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        format!("beta: {}\nmean: {}\nscale: {}\n", join(&self.beta), join(&self.mean), join(&self.scale))
    }

    pub fn from_text(text: &str) -> Result<Self, AlignError> {
        let mut beta = None;
        let mut mean = None;
        let mut scale = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, rest) = line.split_once(':').ok_or_else(|| AlignError::Parse(format!("bad line {line:?}")))?;
            let vals: Vec<f64> = rest
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| AlignError::Parse(e.to_string())))
                .collect::<Result<_, _>>()?;
            match key.trim() {
                "beta" => beta = Some(vals),
                "mean" => mean = Some(vals),
                "scale" => scale = Some(vals),
                other => return Err(AlignError::Parse(format!("unknown key {other}"))),
            }
        }
        let beta: [f64; 7] = beta
            .ok_or_else(|| AlignError::Parse("missing beta".into()))?
            .try_into()
            .map_err(|_| AlignError::Parse("beta needs 7 values".into()))?;
        let mean: [f64; 6] = mean.unwrap_or(vec![0.0; 6]).try_into().map_err(|_| AlignError::Parse("mean needs 6 values".into()))?;
        let scale: [f64; 6] = scale.unwrap_or(vec![1.0; 6]).try_into().map_err(|_| AlignError::Parse("scale needs 6 values".into()))?;
        if beta.iter().chain(&mean).chain(&scale).any(|v| !v.is_finite()) || scale.iter().any(|s| *s <= 0.0) {
            return Err(AlignError::Parse("non-finite or non-positive values".into()));
        }
        Ok(Self { beta, mean, scale })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Indices into [`FEATURE_NAMES`] of constant columns.
    pub degenerate: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted logistic regression on standardized features.
pub fn train(samples: &[TrainingSample], cfg: &AlignConfig) -> Result<(AlignmentModel, TrainReport), AlignError> {
    if samples.is_empty() {
        return Err(FitError::Empty.into());
    }
    let n = samples.len() as f64;
    let mut mean = [0.0; 6];
    let mut scale = [1.0; 6];
    let mut degenerate = Vec::new();
    for i in 0..6 {
        let col: Vec<f64> = samples.iter().map(|s| s.features.to_array()[i]).collect();
        let m = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        mean[i] = m;
        if sd > 1e-12 * m.abs().max(1.0) {
            scale[i] = sd;
        } else {
            degenerate.push(i);
        }
    }
    if !degenerate.is_empty() {
        let names: Vec<&str> = degenerate.iter().map(|&i| FEATURE_NAMES[i]).collect();
        log::warn!("constant feature columns: {}", names.join(", "));
    }
    let model = AlignmentModel { beta: [0.0; 7], mean, scale };
    let x: Vec<Vec<f64>> = samples.iter().map(|s| model.standardize(&s.features).to_vec()).collect();
    let y: Vec<bool> = samples.iter().map(|s| s.aligned).collect();
    let w: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    let f = fit(&x, &y, &w, &FitSettings { l2: cfg.l2, ..FitSettings::default() })?;
    let beta: [f64; 7] = f.coefficients.try_into().expect("seven coefficients");
    Ok((AlignmentModel { beta, ..model }, TrainReport { degenerate, iterations: f.iterations, converged: f.converged }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::Peak;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: &[[f64; 2]]) -> PeakCloud {
        PeakCloud::new(points.iter().map(|p| Peak { x: p[0], y: p[1], intensity: 50.0 }).collect(), 0)
    }

    fn structured(seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        for w in 0..8 {
            let a = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
            let ang: f64 = rng.random_range(0.0..PI);
            for k in 0..40 {
                let s = k as f64 * 0.2;
                pts.push([a[0] + s * ang.cos() + rng.random_range(-0.05..0.05), a[1] + s * ang.sin() + rng.random_range(-0.05..0.05)]);
            }
            let _ = w;
        }
        pts
    }

    #[test]
    fn identical_clouds_have_equal_entropies() {
        let p = cloud(&structured(1));
        let (hj, hs) = entropy_measures(&p, &p, &Pose2::identity(), &AlignConfig::default()).unwrap();
        assert_relative_eq!(hj, hs, epsilon = 1e-9);
    }

    #[test]
    fn misalignment_raises_joint_entropy() {
        let p = cloud(&structured(2));
        let cfg = AlignConfig::default();
        let (hj0, hs0) = entropy_measures(&p, &p, &Pose2::identity(), &cfg).unwrap();
        let (hj, hs) = entropy_measures(&p, &p, &Pose2::new(0.5, 0.3, 0.02), &cfg).unwrap();
        assert!(hj - hs > hj0 - hs0 + 0.1, "{} vs {}", hj - hs, hj0 - hs0);
    }

    #[test]
    fn isolated_pair_is_too_sparse() {
        let a = cloud(&[[0.0, 0.0]]);
        let b = cloud(&[[0.1, 0.0]]);
        assert_eq!(entropy_measures(&a, &b, &Pose2::identity(), &AlignConfig::default()), Err(AlignError::TooSparse));
    }

    #[test]
    fn overlap_examples() {
        let p = cloud(&structured(3));
        assert_eq!(overlap(&p, &p, &Pose2::identity(), 1.0), 1.0);
        assert_eq!(overlap(&p, &p, &Pose2::new(500.0, 0.0, 0.0), 1.0), 0.0);
        let a = cloud(&[[0.0, 0.0], [10.0, 0.0]]);
        let b = cloud(&[[0.0, 0.0], [50.0, 0.0]]);
        assert_eq!(overlap(&a, &b, &Pose2::identity(), 1.0), 0.5);
    }

    #[test]
    fn assess_examples() {
        let x = QualityVector { h_j: 1.0, h_s: 2.0, h_o: 0.5, c_f: 3.0, c_o: 10.0, c_a: 20.0 };
        let m = AlignmentModel::from_beta([0.0; 7]);
        assert_eq!(m.assess(&x), (0.0, 0.5));
        let m = AlignmentModel::from_beta([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let (d, p) = m.assess(&x);
        assert_eq!(d, 1.0);
        assert_relative_eq!(p, 0.7310585786300049, epsilon = 1e-15);
    }

    #[test]
    fn injected_error_table() {
        let e = injected_errors();
        assert_eq!(e.len(), 12);
        assert_eq!(e[0], Pose2::new(0.5, 0.0, -0.5f64.to_radians()));
        assert!(e.iter().all(|p| p.theta < 0.0));
        assert_eq!(e.iter().filter(|p| p.translation_norm() == 2.0).count(), 4);
    }

    #[test]
    fn model_text_round_trip() {
        let m = AlignmentModel { beta: [1.0, -2.0, 0.5, 0.25, 3.0, -1.5, 0.125], mean: [1.0; 6], scale: [2.0; 6] };
        let back = AlignmentModel::from_text(&m.to_text()).unwrap();
        assert_eq!(m, back);
        assert!(AlignmentModel::from_text("beta: 1 2").is_err());
    }

    fn sample(features: [f64; 6], aligned: bool) -> TrainingSample {
        let [h_j, h_s, h_o, c_f, c_o, c_a] = features;
        TrainingSample {
            features: QualityVector { h_j, h_s, h_o, c_f, c_o, c_a },
            aligned,
            weight: if aligned { POSITIVE_WEIGHT } else { 1.0 },
            injected_error: Pose2::identity(),
        }
    }

    #[test]
    fn separable_toy_training_accuracy_and_degenerate_report() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<TrainingSample> = (0..130)
            .map(|i| {
                let aligned = i % 13 == 0;
                let base = if aligned { 0.0 } else { 3.0 };
                sample([base + rng.random_range(0.0..1.0), 1.0, rng.random::<f64>(), base, 5.0, 7.0], aligned)
            })
            .collect();
        let (model, report) = train(&samples, &AlignConfig::default()).unwrap();
        assert_eq!(report.degenerate, vec![1, 4, 5]);
        let correct = samples.iter().filter(|s| (model.assess(&s.features).0 > 0.0) == s.aligned).count();
        assert_eq!(correct, samples.len());
        let (again, _) = train(&samples, &AlignConfig::default()).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let csv = training_csv(&[sample([1.0, 2.0, 0.5, 0.1, 3.0, 4.0], true)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "h_j,h_s,h_o,c_f,c_o,c_a,label,weight,dx,dy,dtheta");
        assert_eq!(lines[1], "1.0,2.0,0.5,0.1,3.0,4.0,1,12.0,0.0,0.0,0.0");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn overlap_swap_symmetry(seed in 0u64..500, x in -2.0..2.0f64, y in -2.0..2.0f64, t in -0.5..0.5f64) {
            let a = cloud(&structured(seed));
            let b = cloud(&structured(seed + 1000));
            let rel = Pose2::new(x, y, t);
            prop_assert!((overlap(&a, &b, &rel, 1.0) - overlap(&b, &a, &rel.inverse(), 1.0)).abs() < 1e-9);
        }

        #[test]
        fn entropy_invariant_to_common_rigid_motion(seed in 0u64..500, x in -30.0..30.0f64, y in -30.0..30.0f64, t in -3.0..3.0f64) {
            let a = cloud(&structured(seed));
            let b = cloud(&structured(seed + 7));
            let rel = Pose2::new(0.3, -0.2, 0.05);
            let g = Pose2::new(x, y, t);
            // moving c's frame by g: points of b become g·b and rel becomes g ⊗ rel
            let bg = b.transformed(&g);
            let cfg = AlignConfig::default();
            let (hj, hs) = entropy_measures(&a, &b, &rel, &cfg).unwrap();
            let (hj2, hs2) = entropy_measures(&a, &bg, &g.compose(&rel), &cfg).unwrap();
            prop_assert!((hj - hj2).abs() < 1e-6 && (hs - hs2).abs() < 1e-6);
        }
    }
}
