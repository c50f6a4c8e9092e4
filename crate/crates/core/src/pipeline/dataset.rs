use crate::geometry::Pose2;
use crate::sensing::{read_scan_dir, PolarScan, ScanError};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One timestamped pose; the row format of `gt_poses.csv` and `trajectory.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub scan_id: u64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl PoseRow {
    pub fn new(scan_id: u64, t: f64, pose: Pose2) -> Self {
        Self { scan_id, t, x: pose.x, y: pose.y, theta: pose.theta }
    }

    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x, self.y, self.theta)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error("pose csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub fn read_poses_csv(path: &Path) -> Result<Vec<PoseRow>, DatasetError> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<Result<Vec<PoseRow>, _>>()?)
}

pub fn poses_csv(rows: &[PoseRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub scans: Vec<PolarScan>,
    pub gt: Option<Vec<PoseRow>>,
}

impl Dataset {
    /// A scan directory with an optional `gt_poses.csv` beside the scans.
    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let scans = read_scan_dir(dir)?;
        let gt_path = dir.join("gt_poses.csv");
        let gt = if gt_path.exists() { Some(read_poses_csv(&gt_path)?) } else { None };
        Ok(Self { scans, gt })
    }
}
