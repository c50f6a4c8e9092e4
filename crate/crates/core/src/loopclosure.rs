//! Loop candidate registration, unified verification and candidate selection.

use crate::alignment::{quality, AlignConfig, AlignmentModel, ScanView};
use crate::geometry::{Mat3, Pose2};
use crate::logistic::{fit, sigmoid, FitError, FitSettings};
use crate::odometry::{register, Keyframe, KeyframeTarget, Registration, RegistrationConfig, RegistrationError};
use crate::placerec::{retrieve, DbEntry, LoopCandidate, PlaceRecConfig, Query};
use crate::posegraph::CovarianceSpec;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// `[d_odom, d_sc, d_align, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopFeature {
    pub d_odom: f64,
    pub d_sc: f64,
    pub d_align: f64,
}

impl LoopFeature {
    pub fn to_array(&self) -> [f64; 4] {
        [self.d_odom, self.d_sc, self.d_align, 1.0]
    }
}

/// Which verification inputs are in use; disabled ones are zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMask {
    pub odom: bool,
    pub sc: bool,
    pub align: bool,
}

impl FeatureMask {
    pub const ALL: Self = Self { odom: true, sc: true, align: true };

    pub fn apply(&self, f: &LoopFeature) -> [f64; 4] {
        let on = |b: bool, v: f64| if b { v } else { 0.0 };
        [on(self.odom, f.d_odom), on(self.sc, f.d_sc), on(self.align, f.d_align), 1.0]
    }

    fn active(&self) -> Vec<usize> {
        [self.odom, self.sc, self.align, true].iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect()
    }
}

impl Default for FeatureMask {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifierModel {
    pub theta: [f64; 4],
    pub y_th: f64,
    pub mask: FeatureMask,
}

impl Default for VerifierModel {
    /// Hand-tuned: appearance and odometry distances count against a loop, alignment for it.
    fn default() -> Self {
        Self { theta: [-6.0, -8.0, 1.0, 6.0], y_th: 0.9, mask: FeatureMask::ALL }
    }
}

impl VerifierModel {
    pub fn validate(&self) -> Result<(), String> {
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err("verifier weights must be finite".into());
        }
        if !(self.y_th > 0.0 && self.y_th < 1.0) {
            return Err("y_th must lie in (0, 1)".into());
        }
        Ok(())
    }

    pub fn logit(&self, f: &LoopFeature) -> f64 {
        self.mask.apply(f).iter().zip(&self.theta).map(|(a, b)| a * b).sum()
    }

    /// `(y_loop, accepted)`.
    pub fn verify(&self, f: &LoopFeature) -> (f64, bool) {
        let y = sigmoid(self.logit(f));
        (y, y > self.y_th)
    }
}

pub fn verify(features: &LoopFeature, model: &VerifierModel) -> (f64, bool) {
    model.verify(features)
}

/// Fits `Θ` on labelled loop features; masked inputs get zero weight.
/// Classes are balanced by inverse frequency.
pub fn train_verifier(samples: &[(LoopFeature, bool)], mask: FeatureMask, y_th: f64) -> Result<VerifierModel, FitError> {
    let cols = mask.active();
    let x: Vec<Vec<f64>> = samples.iter().map(|(f, _)| cols.iter().map(|&c| f.to_array()[c]).collect()).collect();
    let y: Vec<bool> = samples.iter().map(|s| s.1).collect();
    let n_pos = y.iter().filter(|v| **v).count().max(1) as f64;
    let n_neg = y.iter().filter(|v| !**v).count().max(1) as f64;
    let w: Vec<f64> = y.iter().map(|&l| if l { samples.len() as f64 / (2.0 * n_pos) } else { samples.len() as f64 / (2.0 * n_neg) }).collect();
    let f = fit(&x, &y, &w, &FitSettings { l2: 1e-3, ..FitSettings::default() })?;
    let mut theta = [0.0; 4];
    for (c, v) in cols.iter().zip(f.coefficients) {
        theta[*c] = v;
    }
    Ok(VerifierModel { theta, y_th, mask })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConstraint {
    pub query_id: usize,
    pub cand_id: usize,
    /// Pose of the query keyframe in the candidate frame.
    pub relative: Pose2,
    pub covariance: Mat3,
    pub y_loop: f64,
    pub d_sc: f64,
}

/// One line of the loop log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub query_id: usize,
    pub cand_id: usize,
    pub d_sc: f64,
    pub d_odom: f64,
    pub d_align: f64,
    pub y_loop: f64,
    pub accepted: bool,
    pub x_loop: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Only the top retrieval is evaluated.
    First,
    /// All candidates are evaluated; the accepted one with the highest `y_loop` wins.
    #[default]
    Best,
}

impl std::str::FromStr for Selection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "first" => Ok(Self::First),
            "best" => Ok(Self::Best),
            other => Err(format!("unknown strategy {other:?}, expected first or best")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub n_cand: usize,
    pub strategy: Selection,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self { n_cand: 3, strategy: Selection::Best }
    }
}

/// Everything loop closure needs besides the keyframes themselves.
#[derive(Debug, Clone)]
pub struct LoopContext<'a> {
    pub align_model: &'a AlignmentModel,
    pub verifier: &'a VerifierModel,
    pub align: &'a AlignConfig,
    pub registration: &'a RegistrationConfig,
    pub covariance: &'a CovarianceSpec,
    pub placerec: &'a PlaceRecConfig,
    pub loops: &'a LoopConfig,
}

/// Refines the place-recognition guess by single-keyframe registration.
pub fn register_candidate(
    q: &Keyframe,
    cand: &LoopCandidate,
    c: &Keyframe,
    reg: &RegistrationConfig,
) -> Result<Registration, RegistrationError> {
    let target = [KeyframeTarget::new(c.surface.clone(), reg.correspondence_radius)];
    register(&q.surface, &target, &cand.initial_guess(), reg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluated {
    pub record: LoopRecord,
    pub constraint: Option<LoopConstraint>,
}

/// Registers, scores and verifies one candidate. Failed registration falls back to the
/// unrefined guess; failed feature extraction rejects the candidate.
pub fn evaluate_candidate(q: &Keyframe, c: &Keyframe, cand: &LoopCandidate, ctx: &LoopContext) -> Evaluated {
    let (rel, jtj) = match register_candidate(q, cand, c, ctx.registration) {
        Ok(r) => (r.pose, Some(r.jacobian_gram)),
        Err(e) => {
            log::debug!("loop {}->{}: {e}", cand.query_id, cand.cand_id);
            (cand.initial_guess(), None)
        }
    };
    let d_align = quality(ScanView::of(q), ScanView::of(c), &rel, ctx.align, ctx.registration).ok().map(|x| ctx.align_model.assess(&x).0);
    let features = LoopFeature { d_odom: cand.d_odom, d_sc: cand.d_sc, d_align: d_align.unwrap_or(0.0) };
    let (y_loop, accepted) = match d_align {
        Some(_) => ctx.verifier.verify(&features),
        None => (0.0, false),
    };
    let record = LoopRecord {
        query_id: cand.query_id,
        cand_id: cand.cand_id,
        d_sc: cand.d_sc,
        d_odom: cand.d_odom,
        d_align: features.d_align,
        y_loop,
        accepted,
        x_loop: rel.to_array(),
    };
    let constraint = accepted.then(|| LoopConstraint {
        query_id: cand.query_id,
        cand_id: cand.cand_id,
        relative: rel,
        covariance: ctx.covariance.loop_closure(&jtj.unwrap_or([[0.0; 3]; 3])),
        y_loop,
        d_sc: cand.d_sc,
    });
    Evaluated { record, constraint }
}

/// Picks at most one constraint from evaluated candidates (in retrieval order).
pub fn select(evaluated: &[Evaluated], strategy: Selection) -> Option<LoopConstraint> {
    let accepted = evaluated.iter().filter_map(|e| e.constraint);
    match strategy {
        Selection::First => evaluated.first().and_then(|e| e.constraint),
        Selection::Best => accepted.reduce(|best, c| {
            if c.y_loop > best.y_loop || (c.y_loop == best.y_loop && c.d_sc < best.d_sc) {
                c
            } else {
                best
            }
        }),
    }
}

/// Retrieves, registers and verifies candidates for `query`; returns the selected
/// constraint (if any) and one log record per evaluated candidate.
pub fn close_loops(
    query: &Query,
    keyframes: &[Arc<Keyframe>],
    db: &[Arc<DbEntry>],
    ctx: &LoopContext,
) -> (Option<LoopConstraint>, Vec<LoopRecord>) {
    let n = match ctx.loops.strategy {
        Selection::First => 1,
        Selection::Best => ctx.loops.n_cand,
    };
    let candidates = retrieve(query, db, n, ctx.placerec);
    let q = &keyframes[query.id];
    let evaluated: Vec<Evaluated> =
        candidates.iter().map(|cand| evaluate_candidate(q, &keyframes[cand.cand_id], cand, ctx)).collect();
    let chosen = select(&evaluated, ctx.loops.strategy);
    (chosen, evaluated.iter().map(|e| e.record).collect())
}
