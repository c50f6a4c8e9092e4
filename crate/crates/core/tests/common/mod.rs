#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use radarslam::alignment::AlignmentModel;
use radarslam::geometry::{mat3_diag, mat3_inverse, wrap_angle, Mat3};
use radarslam::loopclosure::{close_loops, LoopConfig, LoopConstraint, LoopContext, Selection};
use radarslam::odometry::{Keyframe, Odometry, SensingConfig};
use radarslam::pipeline::dataset::PoseRow;
use radarslam::pipeline::run::{build_place_index, self_train_alignment};
use radarslam::pipeline::PipelineConfig;
use radarslam::placerec::{DbEntry, Query, Snapshot};
use radarslam::posegraph::{huber, EdgeKind, PoseGraph};
use radarslam::sensing::PolarScan;
use radarslam::simworld::{RadarParams, RevisitPattern, Scenario, SimFrame};
use radarslam::Pose2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::sync::Arc;

pub fn frames(seed: u64, course: [f64; 2], pattern: RevisitPattern, revisits: usize, noisy: bool) -> Vec<SimFrame> {
    let mut sc = Scenario::rectangle(seed, course, pattern, revisits);
    if noisy {
        sc.radar = RadarParams::noisy(seed);
    }
    sc.generate().expect("valid scenario").1
}

pub fn scans(frames: &[SimFrame]) -> Vec<PolarScan> {
    frames.iter().map(|f| f.scan.clone()).collect()
}

pub fn gt_rows(frames: &[SimFrame]) -> Vec<PoseRow> {
    frames.iter().map(|f| PoseRow::new(f.scan.scan_id, f.t, f.gt_pose)).collect()
}

/// Keyframes placed at ground-truth poses every `spacing` metres, without running odometry.
pub fn gt_keyframes(frames: &[SimFrame], spacing: f64) -> Vec<Arc<Keyframe>> {
    let sensing = SensingConfig::default();
    let mut out: Vec<Arc<Keyframe>> = Vec::new();
    let mut last: Option<Pose2> = None;
    let mut distance = 0.0;
    for f in frames {
        let step = last.map(|p| p.between(&f.gt_pose).translation_norm());
        if step.is_some_and(|s| s <= spacing) {
            continue;
        }
        distance += step.unwrap_or(0.0);
        let (peaks, surface) = Odometry::preprocess(&sensing, &f.scan, &f.gt_twist);
        out.push(Arc::new(Keyframe {
            id: out.len(),
            pose: f.gt_pose,
            peaks,
            surface,
            timestamp: f.t,
            scan_id: f.scan.scan_id,
            distance,
        }));
        last = Some(f.gt_pose);
    }
    out
}

/// Ground-truth keyframes of a one-revisit course with everything loop closure needs.
pub struct LoopBench {
    pub kfs: Vec<Arc<Keyframe>>,
    pub cfg: PipelineConfig,
    pub model: AlignmentModel,
    pub db: Snapshot,
    pub queries: Vec<Query>,
}

impl LoopBench {
    pub fn new(seed: u64, pattern: RevisitPattern) -> Self {
        let kfs = gt_keyframes(&frames(seed, [60.0, 40.0], pattern, 1, true), 1.5);
        let cfg = PipelineConfig::default().with_seed(seed);
        let (model, _, _) = self_train_alignment(&kfs, &cfg).unwrap();
        let (db, queries) = build_place_index(&kfs, &[], &cfg);
        Self { kfs, cfg, model, db: db.snapshot(), queries }
    }

    pub fn context<'a>(&'a self, loops: &'a LoopConfig) -> LoopContext<'a> {
        LoopContext {
            align_model: &self.model,
            verifier: &self.cfg.verifier,
            align: &self.cfg.alignment,
            registration: &self.cfg.odometry.registration,
            covariance: &self.cfg.covariance,
            placerec: &self.cfg.placerec,
            loops,
        }
    }

    pub fn close(&self, q: usize, db: &[Arc<DbEntry>], strategy: Selection) -> Option<LoopConstraint> {
        let loops = LoopConfig { strategy, ..LoopConfig::default() };
        close_loops(&self.queries[q], &self.kfs, db, &self.context(&loops)).0
    }

    /// Second-lap keyframes paired with the nearest first-lap keyframe.
    pub fn revisits(&self) -> Vec<(usize, usize)> {
        let lap = self.kfs.len() / 2;
        (lap + 5..self.kfs.len() - 5)
            .step_by(6)
            .map(|q| {
                let gap = |c: &usize| self.kfs[*c].pose.between(&self.kfs[q].pose).translation_norm();
                (q, (0..lap).min_by(|a, b| gap(a).total_cmp(&gap(b))).unwrap())
            })
            .collect()
    }
}

pub fn max_displacement(a: &PoseGraph, b: &PoseGraph) -> f64 {
    a.nodes()
        .map(|(id, p)| {
            let q = b.pose(id).unwrap();
            (p.x - q.x).hypot(p.y - q.y)
        })
        .fold(0.0, f64::max)
}

/// A ring of `n` poses with noisy dead-reckoned initial values and odometry edges.
/// Returns the graph and the true poses.
pub fn noisy_ring(n: usize, radius: f64, sigma_xy: f64, sigma_theta: f64, seed: u64) -> (PoseGraph, Vec<Pose2>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nxy = Normal::new(0.0, sigma_xy).unwrap();
    let nth = Normal::new(0.0, sigma_theta).unwrap();
    let step_angle = std::f64::consts::TAU / n as f64;
    let truth: Vec<Pose2> = (0..n)
        .map(|i| {
            let a = i as f64 * step_angle;
            Pose2::new(radius * a.sin(), radius * (1.0 - a.cos()), a)
        })
        .collect();
    let mut g = PoseGraph::new();
    let cov = mat3_diag([1e-2, 1e-2, 1e-3]);
    let mut dead = truth[0];
    g.add_node(0, dead);
    for i in 1..n {
        let exact = truth[i - 1].between(&truth[i]);
        let meas = exact.compose(&Pose2::new(nxy.sample(&mut rng), nxy.sample(&mut rng), nth.sample(&mut rng)));
        dead = dead.compose(&meas);
        g.add_node(i, dead);
        g.add_odometry(i - 1, i, meas, cov);
    }
    (g, truth)
}

fn residual(yi: &Pose2, yj: &Pose2, z: &Pose2) -> [f64; 3] {
    let e = z.inverse().compose(&yi.inverse().compose(yj));
    [e.x, e.y, wrap_angle(e.theta)]
}

fn quad(r: &[f64; 3], info: &Mat3) -> f64 {
    (0..3).map(|a| (0..3).map(|b| r[a] * info[a][b] * r[b]).sum::<f64>()).sum()
}

/// Robust cost evaluated from scratch: quadratic odometry terms, Huber loop terms.
pub fn reference_cost(g: &PoseGraph, poses: &[Pose2], ids: &[usize], delta: f64) -> f64 {
    let idx = |id: usize| ids.iter().position(|v| *v == id).unwrap();
    g.edges
        .iter()
        .map(|e| {
            let info = mat3_inverse(&e.covariance).unwrap();
            let s = quad(&residual(&poses[idx(e.from)], &poses[idx(e.to)], &e.measurement), &info);
            if e.kind == EdgeKind::Loop {
                huber(s, delta)
            } else {
                s
            }
        })
        .sum()
}

/// Dense Gauss-Newton with numeric Jacobians and iteratively reweighted Huber loop terms,
/// anchored at the first node. Returns poses in node insertion order.
pub fn dense_reference(g: &PoseGraph, delta: f64) -> Vec<Pose2> {
    let ids: Vec<usize> = g.nodes().map(|(id, _)| id).collect();
    let mut poses: Vec<Pose2> = g.nodes().map(|(_, p)| p).collect();
    let n = 3 * (poses.len() - 1);
    let idx = |id: usize| ids.iter().position(|v| *v == id).unwrap();
    let h = 1e-7;
    for _ in 0..200 {
        let mut hess = DMatrix::<f64>::zeros(n, n);
        let mut grad = DVector::<f64>::zeros(n);
        for e in &g.edges {
            let info = mat3_inverse(&e.covariance).unwrap();
            let (a, b) = (idx(e.from), idx(e.to));
            let r = residual(&poses[a], &poses[b], &e.measurement);
            let w = if e.kind == EdgeKind::Loop {
                let s = quad(&r, &info);
                if s <= delta * delta {
                    1.0
                } else {
                    delta / s.sqrt()
                }
            } else {
                1.0
            };
            let mut jac = [[0.0; 6]; 3];
            for (side, node) in [a, b].into_iter().enumerate() {
                for k in 0..3 {
                    let bump = |s: f64| {
                        let mut p = poses.clone();
                        let mut v = p[node].to_array();
                        v[k] += s;
                        p[node] = Pose2::from_array(v);
                        residual(&p[a], &p[b], &e.measurement)
                    };
                    let (rp, rm) = (bump(h), bump(-h));
                    for row in 0..3 {
                        jac[row][3 * side + k] = (rp[row] - rm[row]) / (2.0 * h);
                    }
                }
            }
            let slot = |side: usize| [a, b][side].checked_sub(1).map(|i| 3 * i);
            for c1 in 0..6 {
                let Some(o1) = slot(c1 / 3) else { continue };
                let mut jtir = 0.0;
                for r1 in 0..3 {
                    for r2 in 0..3 {
                        jtir += jac[r1][c1] * info[r1][r2] * r[r2];
                    }
                }
                grad[o1 + c1 % 3] += w * jtir;
                for c2 in 0..6 {
                    let Some(o2) = slot(c2 / 3) else { continue };
                    let mut v = 0.0;
                    for r1 in 0..3 {
                        for r2 in 0..3 {
                            v += jac[r1][c1] * info[r1][r2] * jac[r2][c2];
                        }
                    }
                    hess[(o1 + c1 % 3, o2 + c2 % 3)] += w * v;
                }
            }
        }
        let step = hess.cholesky().expect("positive definite normal equations").solve(&(-grad));
        let before = reference_cost(g, &poses, &ids, delta);
        let mut t = 1.0;
        let trial = loop {
            let cand: Vec<Pose2> = poses
                .iter()
                .enumerate()
                .map(|(i, p)| match i {
                    0 => *p,
                    i => Pose2::new(p.x + t * step[3 * i - 3], p.y + t * step[3 * i - 2], p.theta + t * step[3 * i - 1]),
                })
                .collect();
            if reference_cost(g, &cand, &ids, delta) <= before || t < 1e-6 {
                break cand;
            }
            t *= 0.5;
        };
        poses = trial;
        if t * step.norm() < 1e-12 {
            break;
        }
    }
    poses
}
