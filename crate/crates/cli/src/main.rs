use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use radarslam::alignment::{training_csv, AlignmentModel};
use radarslam::logistic::auc;
use radarslam::loopclosure::{train_verifier, LoopConfig, LoopRecord, Selection, VerifierModel};
use radarslam::pipeline::dataset::{read_poses_csv, Dataset, PoseRow};
use radarslam::pipeline::eval::{anchor_align, default_thresholds, loop_eval};
use radarslam::pipeline::run::{
    dump_descriptors, evaluate, keyframe_ground_truth, odometry_graph, run_ablation, run_back_end, run_odometry,
    self_train_alignment, verifier_samples, write_outputs,
};
use radarslam::pipeline::{ate_rmse, kitti_rel, Ablation, Models, PipelineConfig};
use radarslam::posegraph::CovarianceMode;
use radarslam::simworld::{write_dataset, RadarParams, RevisitPattern, Scenario};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "radarslam", version, about = "2D radar SLAM with verified loop closure")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    strategy: Option<Strategy>,
    #[arg(long, global = true, value_enum)]
    cov: Option<Cov>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    First,
    Best,
}

#[derive(Clone, Copy, ValueEnum)]
enum Cov {
    Fixed,
    Dynamic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pattern {
    Same,
    Reverse,
    Lateral,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and sequence in the portable dataset format.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Rectangle course width and height, metres.
        #[arg(long, num_args = 2, default_values_t = [120.0, 80.0])]
        course: Vec<f64>,
        #[arg(long, default_value_t = 2)]
        revisits: usize,
        #[arg(long, value_enum, default_value_t = Pattern::Same)]
        pattern: Pattern,
        /// Lateral displacement of revisits for `--pattern lateral`, metres.
        #[arg(long, default_value_t = 3.0)]
        lateral: f64,
        /// Add beam noise and range jitter to the sweeps.
        #[arg(long)]
        noisy: bool,
    },
    /// Odometry only.
    Odometry {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: odometry, loop closure and graph correction.
    Slam {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ablation: Option<Ablation>,
    },
    /// Self-supervised alignment classifier training on a sequence.
    TrainAlign {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the loop verifier on candidates labelled by ground truth.
    TrainVerify {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Candidates evaluated per query while collecting training data.
        #[arg(long, default_value_t = 3)]
        n_cand: usize,
    },
    /// Score an existing trajectory (and loop log) against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        /// Loop log plus the keyframe table written by `slam`.
        #[arg(long)]
        loops: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the T1..T8 loop-detection variants on one dataset.
    Ablation {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(s) = common.strategy {
        cfg.loops = match s {
            Strategy::First => LoopConfig { n_cand: 1, strategy: Selection::First },
            Strategy::Best => LoopConfig { n_cand: cfg.loops.n_cand.max(3), strategy: Selection::Best },
        };
    }
    if let Some(c) = common.cov {
        cfg = cfg.with_covariance(match c {
            Cov::Fixed => CovarianceMode::Fixed,
            Cov::Dynamic => CovarianceMode::Dynamic,
        });
    }
    cfg.validate().map_err(anyhow::Error::msg)?;
    Ok(cfg)
}

fn load_models(cfg: &PipelineConfig) -> Result<Models> {
    let align = match &cfg.run.align_model {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(AlignmentModel::from_text(&text)?)
        }
        None => None,
    };
    let verifier = match &cfg.run.verifier_model {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let v: VerifierModel = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            v.validate().map_err(anyhow::Error::msg)?;
            Some(v)
        }
        None => None,
    };
    Ok(Models { align, verifier })
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let ds = Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))?;
    if ds.scans.is_empty() {
        bail!("dataset {} has no scans", path.display());
    }
    log::info!("{} scans from {}", ds.scans.len(), path.display());
    Ok(ds)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn json(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn simulate(out: &Path, seed: u64, course: &[f64], revisits: usize, pattern: Pattern, lateral: f64, noisy: bool) -> Result<()> {
    let pattern = match pattern {
        Pattern::Same => RevisitPattern::SameDirection,
        Pattern::Reverse => RevisitPattern::ReverseDirection,
        Pattern::Lateral => RevisitPattern::LateralOffset(lateral),
    };
    let mut scenario = Scenario::rectangle(seed, [course[0], course[1]], pattern, revisits);
    if noisy {
        scenario.radar = RadarParams::noisy(seed);
    }
    let (_, frames) = scenario.generate()?;
    write_dataset(out, &frames)?;
    write(&out.join("scenario.json"), json(&scenario))?;
    println!("wrote {} scans to {}", frames.len(), out.display());
    Ok(())
}

fn print_report(report: &radarslam::pipeline::run::EvalReport) {
    println!("keyframes {}  loops {}", report.keyframes, report.loops_emitted);
    if let (Some(slam), Some(odo)) = (report.ate_rmse, report.ate_rmse_odometry) {
        println!("ATE rmse  slam {slam:.3} m  odometry {odo:.3} m");
    }
    if let Some(c) = report.loops_correct {
        println!("correct loops {c}/{}", report.loops_emitted);
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Simulate { out, course, revisits, pattern, lateral, noisy } => {
            simulate(&out, cli.common.seed.unwrap_or(0), &course, revisits, pattern, lateral, noisy)
        }
        Command::Odometry { dataset, out } => {
            let ds = load_dataset(&dataset)?;
            let odo = run_odometry(&ds.scans, &cfg)?;
            create_dir(&out)?;
            let poses = odo.poses();
            write(&out.join("trajectory.csv"), radarslam::pipeline::dataset::poses_csv(&poses))?;
            write(&out.join("graph.g2o"), odometry_graph(&odo.keyframes, &odo.constraints, &cfg).to_g2o())?;
            if let Some(gt) = &ds.gt {
                let aligned = anchor_align(&poses, gt);
                let report = serde_json::json!({
                    "keyframes": odo.keyframes.len(),
                    "ate_rmse": ate_rmse(&aligned, gt).ok(),
                    "kitti_rel": kitti_rel(&aligned, gt).ok(),
                });
                write(&out.join("report.json"), json(&report))?;
                println!("{report}");
            }
            Ok(())
        }
        Command::Slam { dataset, out, ablation } => {
            let cfg = match ablation {
                Some(a) => cfg.with_ablation(a),
                None => cfg,
            };
            let ds = load_dataset(&dataset)?;
            let models = load_models(&cfg)?;
            let odo = run_odometry(&ds.scans, &cfg)?;
            let slam = run_back_end(&odo, &cfg, &models)?;
            let report = evaluate(&slam, ds.gt.as_deref());
            write_outputs(&out, &slam, &report)?;
            write(&out.join("keyframes.csv"), keyframes_csv(&slam))?;
            write(&out.join("config.toml"), cfg.to_toml())?;
            if cfg.run.dump_descriptors {
                dump_descriptors(&out, &slam)?;
            }
            print_report(&report);
            Ok(())
        }
        Command::TrainAlign { dataset, out } => {
            let ds = load_dataset(&dataset)?;
            let odo = run_odometry(&ds.scans, &cfg)?;
            let (model, samples, report) = self_train_alignment(&odo.keyframes, &cfg)?;
            create_dir(&out)?;
            write(&out.join("alignment.model"), model.to_text())?;
            write(&out.join("alignment_training.csv"), training_csv(&samples))?;
            if !report.degenerate.is_empty() {
                log::warn!("constant feature columns: {:?}", report.degenerate);
            }
            let scores: Vec<f64> = samples.iter().map(|s| model.assess(&s.features).0).collect();
            let labels: Vec<bool> = samples.iter().map(|s| s.aligned).collect();
            println!("{} samples, training AUC {:?}", samples.len(), auc(&scores, &labels));
            Ok(())
        }
        Command::TrainVerify { dataset, out, n_cand } => {
            let ds = load_dataset(&dataset)?;
            let Some(gt) = ds.gt.as_deref() else { bail!("train-verify needs gt_poses.csv in the dataset") };
            let mut collect = cfg.clone();
            collect.loops = LoopConfig { n_cand, strategy: Selection::Best };
            let models = load_models(&cfg)?;
            let odo = run_odometry(&ds.scans, &collect)?;
            let slam = run_back_end(&odo, &collect, &models)?;
            let kf_gt = keyframe_ground_truth(&slam.keyframes, gt);
            let samples = verifier_samples(&slam.records, &kf_gt);
            let positives = samples.iter().filter(|s| s.1).count();
            let model = train_verifier(&samples, cfg.verifier.mask, cfg.verifier.y_th)
                .with_context(|| format!("fitting verifier on {} samples ({positives} correct)", samples.len()))?;
            create_dir(&out)?;
            write(&out.join("verifier.json"), json(&model))?;
            write(&out.join("alignment.model"), slam.align_model.to_text())?;
            println!("{} samples ({positives} correct), theta {:?}", samples.len(), model.theta);
            Ok(())
        }
        Command::Eval { gt, trajectory, loops, out } => {
            let gt = read_poses_csv(&gt)?;
            let est = anchor_align(&read_poses_csv(&trajectory)?, &gt);
            let mut report = serde_json::json!({
                "ate_rmse": ate_rmse(&est, &gt).ok(),
                "kitti_rel": kitti_rel(&est, &gt).ok(),
            });
            if let Some(loops) = loops {
                let dir = loops.parent().unwrap_or(Path::new("."));
                let keyframes = read_poses_csv(&dir.join("keyframes.csv"))?;
                let by_scan: std::collections::BTreeMap<u64, PoseRow> = gt.iter().map(|r| (r.scan_id, *r)).collect();
                let kf_gt = keyframes
                    .iter()
                    .enumerate()
                    .filter_map(|(id, k)| by_scan.get(&k.scan_id).map(|g| (id, g.pose())))
                    .collect();
                let text = std::fs::read_to_string(&loops).with_context(|| format!("reading {}", loops.display()))?;
                let records: Vec<LoopRecord> =
                    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
                report["loop_pr"] = serde_json::to_value(loop_eval(&records, &kf_gt, None, &default_thresholds()))?;
            }
            let text = json(&report);
            match out {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Ablation { dataset, out } => {
            let ds = load_dataset(&dataset)?;
            let models = load_models(&cfg)?;
            let odo = run_odometry(&ds.scans, &cfg)?;
            let rows = run_ablation(&odo, ds.gt.as_deref(), &cfg, &models, &Ablation::ALL)?;
            create_dir(&out)?;
            write(&out.join("ablation.json"), json(&rows))?;
            println!("variant  loops  correct  max_precision  ATE");
            for r in &rows {
                let pr = r.report.loop_pr.as_ref();
                println!(
                    "{:<8} {:>5}  {:>7}  {:>13}  {}",
                    r.ablation.name(),
                    r.report.loops_emitted,
                    r.report.loops_correct.map_or("-".into(), |c| c.to_string()),
                    pr.and_then(|p| p.max_precision()).map_or("-".into(), |p| format!("{p:.3}")),
                    r.report.ate_rmse.map_or("-".into(), |a| format!("{a:.3}")),
                );
            }
            Ok(())
        }
    }
}

/// Keyframe table in the trajectory CSV layout, row index = keyframe id.
fn keyframes_csv(slam: &radarslam::pipeline::SlamOutput) -> String {
    let rows: Vec<PoseRow> = slam.keyframes.iter().map(|k| PoseRow::new(k.scan_id, k.timestamp, slam.keyframe_pose(k.id))).collect();
    radarslam::pipeline::dataset::poses_csv(&rows)
}
