use super::dataset::PoseRow;
use crate::geometry::Pose2;
use crate::loopclosure::LoopRecord;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no estimate/ground-truth pairs within the time gap")]
    NoAssociations,
    #[error("trajectory shorter than the shortest evaluation segment")]
    TooShort,
}

pub const MAX_TIME_GAP: f64 = 0.1;

/// Nearest-time pairs `(estimate, ground truth)` no further apart than `max_gap` seconds.
pub fn associate(est: &[PoseRow], gt: &[PoseRow], max_gap: f64) -> Vec<(Pose2, Pose2)> {
    let mut sorted: Vec<&PoseRow> = gt.iter().collect();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    let times: Vec<f64> = sorted.iter().map(|r| r.t).collect();
    let mut out = Vec::new();
    for e in est {
        let i = times.partition_point(|t| *t < e.t);
        let best = [i.checked_sub(1), (i < times.len()).then_some(i)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (times[a] - e.t).abs().total_cmp(&(times[b] - e.t).abs()));
        if let Some(j) = best {
            if (times[j] - e.t).abs() <= max_gap {
                out.push((e.pose(), sorted[j].pose()));
            }
        }
    }
    out
}

/// Root-mean-square translational distance over associated poses (frames assumed
/// pre-aligned at the anchor).
pub fn ate_rmse(est: &[PoseRow], gt: &[PoseRow]) -> Result<f64, EvalError> {
    let pairs = associate(est, gt, MAX_TIME_GAP);
    if pairs.is_empty() {
        return Err(EvalError::NoAssociations);
    }
    let sum: f64 = pairs.iter().map(|(e, g)| (e.x - g.x).powi(2) + (e.y - g.y).powi(2)).sum();
    Ok((sum / pairs.len() as f64).sqrt())
}

/// Expresses `est` in the ground-truth frame by matching the first associated pose.
pub fn anchor_align(est: &[PoseRow], gt: &[PoseRow]) -> Vec<PoseRow> {
    let Some(first) = est.first() else { return Vec::new() };
    let Some((e0, g0)) = associate(std::slice::from_ref(first), gt, MAX_TIME_GAP).first().copied() else {
        return est.to_vec();
    };
    let t = g0.compose(&e0.inverse());
    est.iter().map(|r| PoseRow::new(r.scan_id, r.t, t.compose(&r.pose()))).collect()
}

pub const SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeError {
    /// Mean translational drift, percent.
    pub translation_pct: f64,
    /// Mean rotational drift, degrees per metre.
    pub rotation_deg_per_m: f64,
    pub segments: usize,
}

/// Segment-based relative error averaged over all start poses and segment lengths that fit.
pub fn kitti_rel(est: &[PoseRow], gt: &[PoseRow]) -> Result<RelativeError, EvalError> {
    let pairs = associate(est, gt, MAX_TIME_GAP);
    if pairs.is_empty() {
        return Err(EvalError::NoAssociations);
    }
    let mut dist = vec![0.0; pairs.len()];
    for i in 1..pairs.len() {
        let (a, b) = (pairs[i - 1].1, pairs[i].1);
        dist[i] = dist[i - 1] + (b.x - a.x).hypot(b.y - a.y);
    }
    let (mut t_sum, mut r_sum, mut n) = (0.0, 0.0, 0usize);
    for first in 0..pairs.len() {
        for len in SEGMENT_LENGTHS {
            let goal = dist[first] + len;
            let last = first + dist[first..].partition_point(|d| *d < goal);
            if last >= pairs.len() {
                continue;
            }
            let dg = pairs[first].1.between(&pairs[last].1);
            let de = pairs[first].0.between(&pairs[last].0);
            let err = de.between(&dg);
            t_sum += err.translation_norm() / len;
            r_sum += err.theta.abs().to_degrees() / len;
            n += 1;
        }
    }
    if n == 0 {
        return Err(EvalError::TooShort);
    }
    Ok(RelativeError { translation_pct: 100.0 * t_sum / n as f64, rotation_deg_per_m: r_sum / n as f64, segments: n })
}

pub const LOOP_MAX_TRANSLATION: f64 = 4.0;
pub const LOOP_MAX_ROTATION_DEG: f64 = 2.5;

/// Whether an estimated loop transform lies within 4 m / 2.5° of the ground-truth one.
pub fn loop_is_correct(x_loop: &Pose2, gt_query: &Pose2, gt_cand: &Pose2) -> bool {
    let err = gt_cand.between(gt_query).between(x_loop);
    err.translation_norm() <= LOOP_MAX_TRANSLATION && err.theta.abs().to_degrees() <= LOOP_MAX_ROTATION_DEG
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub y_th: f64,
    /// Undefined (`None`) when no loop is selected.
    pub precision: Option<f64>,
    pub recall: f64,
    pub selected: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopEval {
    pub positives: usize,
    pub curve: Vec<PrPoint>,
}

impl LoopEval {
    pub fn at(&self, y_th: f64) -> Option<&PrPoint> {
        self.curve.iter().find(|p| (p.y_th - y_th).abs() < 1e-12)
    }

    pub fn max_precision(&self) -> Option<f64> {
        self.curve.iter().filter_map(|p| p.precision).reduce(f64::max)
    }
}

/// Thresholds `0, 0.01, …, 1`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Precision/recall of the loop log as `y_th` sweeps `thresholds`. At each threshold every
/// query keeps its highest-`y_loop` record above the threshold. Recall is relative to
/// `positives`, by default the number of queries with at least one correct record.
pub fn loop_eval(
    records: &[LoopRecord],
    gt_keyframes: &BTreeMap<usize, Pose2>,
    positives: Option<usize>,
    thresholds: &[f64],
) -> LoopEval {
    let correct: Vec<bool> = records
        .iter()
        .map(|r| match (gt_keyframes.get(&r.query_id), gt_keyframes.get(&r.cand_id)) {
            (Some(q), Some(c)) => loop_is_correct(&Pose2::from_array(r.x_loop), q, c),
            _ => false,
        })
        .collect();
    let positives = positives.unwrap_or_else(|| {
        let queries: BTreeSet<usize> = records.iter().zip(&correct).filter(|(_, c)| **c).map(|(r, _)| r.query_id).collect();
        queries.len()
    });
    let curve = thresholds
        .iter()
        .map(|&th| {
            let mut best: BTreeMap<usize, usize> = BTreeMap::new();
            for (i, r) in records.iter().enumerate() {
                if r.y_loop > th {
                    let e = best.entry(r.query_id).or_insert(i);
                    if r.y_loop > records[*e].y_loop {
                        *e = i;
                    }
                }
            }
            let selected = best.len();
            let n_correct = best.values().filter(|&&i| correct[i]).count();
            PrPoint {
                y_th: th,
                precision: (selected > 0).then(|| n_correct as f64 / selected as f64),
                recall: if positives > 0 { n_correct as f64 / positives as f64 } else { 0.0 },
                selected,
                correct: n_correct,
            }
        })
        .collect();
    LoopEval { positives, curve }
}
