use super::config::{Ablation, ConfigError, DescriptorSource, OptimizeTrigger, PipelineConfig};
use super::dataset::{poses_csv, DatasetError, PoseRow};
use super::eval::{anchor_align, ate_rmse, default_thresholds, kitti_rel, loop_eval, loop_is_correct, LoopEval, RelativeError};
use crate::alignment::{make_training_set, train, AlignError, AlignmentModel, ScanView, TrainReport, TrainingSample};
use crate::geometry::Pose2;
use crate::loopclosure::{close_loops, LoopConstraint, LoopContext, LoopFeature, LoopRecord, VerifierModel};
use crate::odometry::{Keyframe, OdomConstraint, Odometry};
use crate::placerec::{aggregate_cloud, polar_descriptor, DbEntry, Descriptor, DescriptorDatabase, Query};
use crate::posegraph::{optimize, GraphError, OptimizeReport, PoseGraph, SolveStatus};
use crate::sensing::PolarScan;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("no scans to process")]
    Empty,
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("alignment training: {0}")]
    Align(#[from] AlignError),
    #[error("alignment training: no usable keyframe pairs")]
    NoTrainingPairs,
    #[error("pose graph: {0}")]
    Graph(#[from] GraphError),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Pretrained models; missing ones are self-trained (alignment) or taken from the config (verifier).
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub align: Option<AlignmentModel>,
    pub verifier: Option<VerifierModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTiming {
    pub odometry_s: f64,
    pub alignment_training_s: f64,
    pub descriptors_s: f64,
    pub loop_closure_s: f64,
    pub optimization_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub solves: usize,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SlamOutput {
    pub keyframes: Vec<Arc<Keyframe>>,
    pub odom_constraints: Vec<OdomConstraint>,
    /// Per-scan odometry poses.
    pub odometry: Vec<PoseRow>,
    /// Per-scan poses after graph correction.
    pub trajectory: Vec<PoseRow>,
    pub loops: Vec<LoopConstraint>,
    pub records: Vec<LoopRecord>,
    pub database: DescriptorDatabase,
    pub graph: PoseGraph,
    pub solve: SolveSummary,
    pub align_model: AlignmentModel,
    pub align_training: Option<(Vec<TrainingSample>, TrainReport)>,
    pub timing: StageTiming,
}

impl SlamOutput {
    pub fn keyframe_pose(&self, id: usize) -> Pose2 {
        self.graph.pose(id).expect("keyframe node")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScanTrack {
    pub scan_id: u64,
    pub t: f64,
    pub pose: Pose2,
    pub anchor: usize,
    pub anchor_relative: Pose2,
}

/// Front-end result shared by every back-end variant.
#[derive(Debug, Clone)]
pub struct OdometryRun {
    pub keyframes: Vec<Arc<Keyframe>>,
    pub constraints: Vec<OdomConstraint>,
    pub tracks: Vec<ScanTrack>,
    /// Raw polar descriptor of every keyframe's own sweep.
    pub polar_descriptors: Vec<Descriptor>,
    pub seconds: f64,
}

impl OdometryRun {
    pub fn poses(&self) -> Vec<PoseRow> {
        self.tracks.iter().map(|t| PoseRow::new(t.scan_id, t.t, t.pose)).collect()
    }
}

pub fn run_odometry(scans: &[PolarScan], cfg: &PipelineConfig) -> Result<OdometryRun, PipelineError> {
    if scans.is_empty() {
        return Err(PipelineError::Empty);
    }
    cfg.validate().map_err(|e| PipelineError::Config(ConfigError::Invalid(e)))?;
    let clock = Instant::now();
    let mut odo = Odometry::new(cfg.sensing, cfg.odometry);
    let mut tracks = Vec::with_capacity(scans.len());
    let mut constraints = Vec::new();
    let mut polar_descriptors = Vec::new();
    let pc = &cfg.placerec;
    for scan in scans {
        let out = odo.step(scan);
        if out.keyframe.is_some() {
            polar_descriptors.push(polar_descriptor(scan, pc.ring, pc.sec, pc.max_range));
        }
        constraints.extend(out.constraint);
        tracks.push(ScanTrack { scan_id: out.scan_id, t: out.t, pose: out.pose, anchor: out.anchor, anchor_relative: out.anchor_relative });
    }
    log::info!("odometry: {} scans, {} keyframes", scans.len(), odo.keyframes().len());
    Ok(OdometryRun { keyframes: odo.keyframes().to_vec(), constraints, tracks, polar_descriptors, seconds: clock.elapsed().as_secs_f64() })
}

/// Consecutive keyframe pairs `(later, earlier, relative pose of later in earlier)`,
/// thinned evenly to at most `limit`.
pub fn consecutive_pairs(keyframes: &[Arc<Keyframe>], limit: usize) -> Vec<(usize, usize, Pose2)> {
    let all: Vec<(usize, usize, Pose2)> =
        (1..keyframes.len()).map(|i| (i, i - 1, keyframes[i - 1].pose.between(&keyframes[i].pose))).collect();
    if all.len() <= limit {
        return all;
    }
    (0..limit).map(|k| all[k * all.len() / limit]).collect()
}

/// Self-supervised alignment training on the run's own consecutive keyframes.
pub fn self_train_alignment(
    keyframes: &[Arc<Keyframe>],
    cfg: &PipelineConfig,
) -> Result<(AlignmentModel, Vec<TrainingSample>, TrainReport), PipelineError> {
    let pairs = consecutive_pairs(keyframes, cfg.run.align_training_pairs);
    let views: Vec<(ScanView, ScanView, Pose2)> =
        pairs.iter().map(|&(q, c, rel)| (ScanView::of(&keyframes[q]), ScanView::of(&keyframes[c]), rel)).collect();
    let samples = make_training_set(&views, &cfg.alignment, &cfg.odometry.registration);
    if samples.is_empty() {
        return Err(PipelineError::NoTrainingPairs);
    }
    let (model, report) = train(&samples, &cfg.alignment)?;
    Ok((model, samples, report))
}

/// Place-recognition inputs for every keyframe: database entries and queries.
pub fn build_place_index(
    keyframes: &[Arc<Keyframe>],
    polar: &[Descriptor],
    cfg: &PipelineConfig,
) -> (DescriptorDatabase, Vec<Query>) {
    let pc = &cfg.placerec;
    let queries: Vec<Query> = (0..keyframes.len())
        .into_par_iter()
        .map(|i| {
            let kf = &keyframes[i];
            match cfg.run.descriptor_source {
                DescriptorSource::Aggregated => {
                    let neighbors: Vec<&Keyframe> =
                        [i.checked_sub(1), (i + 1 < keyframes.len()).then_some(i + 1)].into_iter().flatten().map(|j| &*keyframes[j]).collect();
                    let cloud = aggregate_cloud(kf, &neighbors);
                    Query::from_cloud(kf.id, kf.pose, kf.distance, &cloud, pc)
                }
                DescriptorSource::RawPolar => {
                    Query::from_descriptors(kf.id, kf.pose, kf.distance, vec![polar[i].clone()])
                }
            }
        })
        .collect();
    let mut db = DescriptorDatabase::new();
    for q in &queries {
        db.insert(DbEntry::new(q.id, q.pose, q.distance, q.augmentations[0].descriptor.clone()));
    }
    (db, queries)
}

fn summarize(acc: &mut SolveSummary, r: &OptimizeReport) {
    if acc.solves == 0 {
        acc.initial_cost = r.initial_cost;
    }
    acc.solves += 1;
    acc.iterations += r.iterations;
    acc.final_cost = r.final_cost;
    acc.converged = r.status == SolveStatus::Converged;
}

/// Builds the odometry-only pose graph.
pub fn odometry_graph(keyframes: &[Arc<Keyframe>], constraints: &[OdomConstraint], cfg: &PipelineConfig) -> PoseGraph {
    let mut g = PoseGraph::new();
    for kf in keyframes {
        g.add_node(kf.id, kf.pose);
    }
    for c in constraints {
        g.add_odometry(c.from_id, c.to_id, c.relative, cfg.covariance.odometry(&c.jacobian_gram));
    }
    g
}

/// Runs odometry, loop detection and verification, and graph correction over `scans`.
pub fn run_slam(scans: &[PolarScan], cfg: &PipelineConfig, models: &Models) -> Result<SlamOutput, PipelineError> {
    let odo = run_odometry(scans, cfg)?;
    run_back_end(&odo, cfg, models)
}

/// Loop closure and graph correction on top of a finished odometry run.
pub fn run_back_end(odo: &OdometryRun, cfg: &PipelineConfig, models: &Models) -> Result<SlamOutput, PipelineError> {
    cfg.validate().map_err(|e| PipelineError::Config(ConfigError::Invalid(e)))?;
    let keyframes = odo.keyframes.clone();
    let mut timing = StageTiming { odometry_s: odo.seconds, ..StageTiming::default() };

    let clock = Instant::now();
    let (align_model, align_training) = match &models.align {
        Some(m) => (m.clone(), None),
        None => {
            let (m, samples, report) = self_train_alignment(&keyframes, cfg)?;
            (m, Some((samples, report)))
        }
    };
    timing.alignment_training_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let (db, queries) = build_place_index(&keyframes, &odo.polar_descriptors, cfg);
    timing.descriptors_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let verifier = models.verifier.unwrap_or(cfg.verifier);
    let ctx = LoopContext {
        align_model: &align_model,
        verifier: &verifier,
        align: &cfg.alignment,
        registration: &cfg.odometry.registration,
        covariance: &cfg.covariance,
        placerec: &cfg.placerec,
        loops: &cfg.loops,
    };
    let snapshot = db.snapshot();
    let per_query: Vec<(Option<LoopConstraint>, Vec<LoopRecord>)> =
        queries.par_iter().map(|q| close_loops(q, &keyframes, &snapshot, &ctx)).collect();
    let mut loops = Vec::new();
    let mut records = Vec::new();
    for (c, r) in per_query {
        loops.extend(c);
        records.extend(r);
    }
    timing.loop_closure_s = clock.elapsed().as_secs_f64();
    log::info!("loop closure: {} candidates evaluated, {} loops accepted", records.len(), loops.len());

    let clock = Instant::now();
    let mut graph = odometry_graph(&keyframes, &odo.constraints, cfg);
    let mut solve = SolveSummary { solves: 0, iterations: 0, initial_cost: 0.0, final_cost: 0.0, converged: true };
    let add_loop = |g: &mut PoseGraph, l: &LoopConstraint| g.add_loop(l.cand_id, l.query_id, l.relative, l.covariance);
    match cfg.run.optimize {
        OptimizeTrigger::AtEnd => {
            for l in &loops {
                add_loop(&mut graph, l);
            }
            if !loops.is_empty() {
                let r = optimize(&graph, &cfg.solver)?;
                summarize(&mut solve, &r);
                graph = r.graph;
            }
        }
        OptimizeTrigger::Continuous => {
            for l in &loops {
                add_loop(&mut graph, l);
                let r = optimize(&graph, &cfg.solver)?;
                summarize(&mut solve, &r);
                graph = r.graph;
            }
        }
    }
    timing.optimization_s = clock.elapsed().as_secs_f64();

    let trajectory = if loops.is_empty() {
        odo.poses()
    } else {
        odo.tracks
            .iter()
            .map(|t| PoseRow::new(t.scan_id, t.t, graph.pose(t.anchor).expect("anchor node").compose(&t.anchor_relative)))
            .collect()
    };
    Ok(SlamOutput {
        keyframes,
        odom_constraints: odo.constraints.clone(),
        odometry: odo.poses(),
        trajectory,
        loops,
        records,
        database: db,
        graph,
        solve,
        align_model,
        align_training,
        timing,
    })
}

/// Ground-truth pose of every keyframe, looked up by scan id.
pub fn keyframe_ground_truth(keyframes: &[Arc<Keyframe>], gt: &[PoseRow]) -> BTreeMap<usize, Pose2> {
    let by_scan: BTreeMap<u64, Pose2> = gt.iter().map(|r| (r.scan_id, r.pose())).collect();
    keyframes.iter().filter_map(|k| by_scan.get(&k.scan_id).map(|p| (k.id, *p))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scans: usize,
    pub keyframes: usize,
    pub candidates_evaluated: usize,
    pub loops_emitted: usize,
    pub loops_correct: Option<usize>,
    pub ate_rmse: Option<f64>,
    pub ate_rmse_odometry: Option<f64>,
    pub kitti_rel: Option<RelativeError>,
    pub kitti_rel_odometry: Option<RelativeError>,
    pub loop_pr: Option<LoopEval>,
    pub solve: SolveSummary,
}

pub fn evaluate(out: &SlamOutput, gt: Option<&[PoseRow]>) -> EvalReport {
    let mut report = EvalReport {
        scans: out.trajectory.len(),
        keyframes: out.keyframes.len(),
        candidates_evaluated: out.records.len(),
        loops_emitted: out.loops.len(),
        loops_correct: None,
        ate_rmse: None,
        ate_rmse_odometry: None,
        kitti_rel: None,
        kitti_rel_odometry: None,
        loop_pr: None,
        solve: out.solve,
    };
    let Some(gt) = gt else { return report };
    let est = anchor_align(&out.trajectory, gt);
    let odo = anchor_align(&out.odometry, gt);
    report.ate_rmse = ate_rmse(&est, gt).ok();
    report.ate_rmse_odometry = ate_rmse(&odo, gt).ok();
    report.kitti_rel = kitti_rel(&est, gt).ok();
    report.kitti_rel_odometry = kitti_rel(&odo, gt).ok();
    let kf_gt = keyframe_ground_truth(&out.keyframes, gt);
    report.loops_correct = Some(
        out.loops
            .iter()
            .filter(|l| match (kf_gt.get(&l.query_id), kf_gt.get(&l.cand_id)) {
                (Some(q), Some(c)) => loop_is_correct(&l.relative, q, c),
                _ => false,
            })
            .count(),
    );
    report.loop_pr = Some(loop_eval(&out.records, &kf_gt, None, &default_thresholds()));
    report
}

/// Verifier training pairs from a loop log: features labelled by the correctness rule.
pub fn verifier_samples(records: &[LoopRecord], gt_keyframes: &BTreeMap<usize, Pose2>) -> Vec<(LoopFeature, bool)> {
    records
        .iter()
        .filter_map(|r| {
            let (q, c) = (gt_keyframes.get(&r.query_id)?, gt_keyframes.get(&r.cand_id)?);
            let f = LoopFeature { d_odom: r.d_odom, d_sc: r.d_sc, d_align: r.d_align };
            Some((f, loop_is_correct(&Pose2::from_array(r.x_loop), q, c)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub report: EvalReport,
}

/// Runs every variant in `variants` on one shared odometry run and alignment model.
pub fn run_ablation(
    odo: &OdometryRun,
    gt: Option<&[PoseRow]>,
    cfg: &PipelineConfig,
    models: &Models,
    variants: &[Ablation],
) -> Result<Vec<AblationRow>, PipelineError> {
    let align = match &models.align {
        Some(m) => m.clone(),
        None => self_train_alignment(&odo.keyframes, cfg)?.0,
    };
    let models = Models { align: Some(align), verifier: models.verifier };
    variants
        .iter()
        .map(|&ablation| {
            let vcfg = cfg.clone().with_ablation(ablation);
            let mut vmodels = models.clone();
            if let Some(v) = &mut vmodels.verifier {
                v.mask = ablation.mask();
            }
            let out = run_back_end(odo, &vcfg, &vmodels)?;
            log::info!("{}: {} loops", ablation.name(), out.loops.len());
            Ok(AblationRow { ablation, report: evaluate(&out, gt) })
        })
        .collect()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    std::fs::write(path, contents).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

pub fn loops_jsonl(records: &[LoopRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
}

/// Writes `trajectory.csv`, `odometry.csv`, `loops.jsonl`, `graph.g2o`, `report.json`,
/// `timing.json` and `alignment.model` into `dir`.
pub fn write_outputs(dir: &Path, out: &SlamOutput, report: &EvalReport) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
    write(&dir.join("trajectory.csv"), poses_csv(&out.trajectory))?;
    write(&dir.join("odometry.csv"), poses_csv(&out.odometry))?;
    write(&dir.join("loops.jsonl"), loops_jsonl(&out.records))?;
    write(&dir.join("graph.g2o"), out.graph.to_g2o())?;
    write(&dir.join("report.json"), serde_json::to_string_pretty(report).expect("report serializes") + "\n")?;
    write(&dir.join("timing.json"), serde_json::to_string_pretty(&out.timing).expect("timing serializes") + "\n")?;
    write(&dir.join("alignment.model"), out.align_model.to_text())?;
    Ok(())
}

pub fn dump_descriptors(dir: &Path, out: &SlamOutput) -> Result<(), PipelineError> {
    let dir = dir.join("descriptors");
    std::fs::create_dir_all(&dir).map_err(|source| PipelineError::Io { path: dir.clone(), source })?;
    out.database.dump(&dir).map_err(|source| PipelineError::Io { path: dir.clone(), source })
}
