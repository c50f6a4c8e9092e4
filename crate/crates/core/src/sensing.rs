//! Polar radar sweeps to motion-compensated peak clouds and oriented surface points.

use crate::geometry::{mean_cov2, Pose2, Twist2};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("scan has no azimuth rows")]
    Empty,
    #[error("intensity matrix has {got} values, expected {want}")]
    Shape { got: usize, want: usize },
    #[error("negative or non-finite intensity at row {row}, bin {bin}")]
    BadIntensity { row: usize, bin: usize },
    #[error("azimuth angles must be strictly increasing within [0, 2pi)")]
    BadAzimuth,
    #[error("timestamps must be non-decreasing")]
    BadTimestamps,
    #[error("range resolution must be positive")]
    BadResolution,
    #[error("parse error in {context}: {msg}")]
    Parse { context: String, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One radar sweep: `n_azimuth` rows of `n_bins` range-bin intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarScan {
    intensities: Vec<f64>,
    n_bins: usize,
    pub range_resolution: f64,
    pub azimuths: Vec<f64>,
    pub timestamps: Vec<f64>,
    pub scan_id: u64,
}

impl PolarScan {
    pub fn new(
        intensities: Vec<f64>,
        n_bins: usize,
        range_resolution: f64,
        azimuths: Vec<f64>,
        timestamps: Vec<f64>,
        scan_id: u64,
    ) -> Result<Self, ScanError> {
        let n_az = azimuths.len();
        if n_az == 0 {
            return Err(ScanError::Empty);
        }
        if intensities.len() != n_az * n_bins || timestamps.len() != n_az {
            return Err(ScanError::Shape { got: intensities.len(), want: n_az * n_bins });
        }
        if !(range_resolution > 0.0) {
            return Err(ScanError::BadResolution);
        }
        if let Some(i) = intensities.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(ScanError::BadIntensity { row: i / n_bins.max(1), bin: i % n_bins.max(1) });
        }
        let two_pi = 2.0 * std::f64::consts::PI;
        if azimuths.iter().any(|a| !(*a >= 0.0 && *a < two_pi)) || azimuths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ScanError::BadAzimuth);
        }
        if timestamps.windows(2).any(|w| w[1] < w[0]) || timestamps.iter().any(|t| !t.is_finite()) {
            return Err(ScanError::BadTimestamps);
        }
        Ok(Self { intensities, n_bins, range_resolution, azimuths, timestamps, scan_id })
    }

    pub fn n_azimuth(&self) -> usize {
        self.azimuths.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.intensities[i * self.n_bins..(i + 1) * self.n_bins]
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    /// Midpoint of the sweep's time span; the de-skew reference instant.
    pub fn mid_time(&self) -> f64 {
        0.5 * (self.timestamps[0] + self.timestamps[self.timestamps.len() - 1])
    }

    pub fn nonzero_count(&self) -> usize {
        self.intensities.iter().filter(|v| **v > 0.0).count()
    }

    /// Writes the portable text format.
    pub fn write_text<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n_azimuth {}", self.n_azimuth())?;
        writeln!(w, "n_bins {}", self.n_bins)?;
        writeln!(w, "range_resolution {:?}", self.range_resolution)?;
        let mut line = String::new();
        for i in 0..self.n_azimuth() {
            line.clear();
            write!(line, "{:?} {:?}", self.timestamps[i], self.azimuths[i]).unwrap();
            for v in self.row(i) {
                if *v == 0.0 {
                    line.push_str(" 0");
                } else {
                    write!(line, " {v:?}").unwrap();
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_text(text: &str, scan_id: u64) -> Result<Self, ScanError> {
        let perr = |msg: String| ScanError::Parse { context: format!("scan {scan_id}"), msg };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut header = |key: &str| -> Result<String, ScanError> {
            let l = lines.next().ok_or_else(|| perr(format!("missing header {key}")))?;
            let mut parts = l.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some(k), Some(v)) if k == key => Ok(v.to_string()),
                _ => Err(perr(format!("expected header {key}, got {l:?}"))),
            }
        };
        let n_az: usize = header("n_azimuth")?.parse().map_err(|e| perr(format!("n_azimuth: {e}")))?;
        let n_bins: usize = header("n_bins")?.parse().map_err(|e| perr(format!("n_bins: {e}")))?;
        let res: f64 = header("range_resolution")?.parse().map_err(|e| perr(format!("range_resolution: {e}")))?;
        let mut intensities = Vec::with_capacity(n_az * n_bins);
        let mut azimuths = Vec::with_capacity(n_az);
        let mut timestamps = Vec::with_capacity(n_az);
        for (r, l) in lines.enumerate() {
            let vals: Result<Vec<f64>, _> = l.split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| perr(format!("row {r}: {e}")))?;
            if vals.len() != n_bins + 2 {
                return Err(perr(format!("row {r} has {} fields, expected {}", vals.len(), n_bins + 2)));
            }
            timestamps.push(vals[0]);
            azimuths.push(vals[1]);
            intensities.extend_from_slice(&vals[2..]);
        }
        if azimuths.len() != n_az {
            return Err(perr(format!("found {} rows, header says {n_az}", azimuths.len())));
        }
        Self::new(intensities, n_bins, res, azimuths, timestamps, scan_id)
    }
}

/// Writes scans plus a `scans.index` manifest (`scan_id file`) ordered by time.
pub fn write_scan_dir(dir: &Path, scans: &[PolarScan]) -> Result<(), ScanError> {
    fs::create_dir_all(dir)?;
    let mut index = String::new();
    let mut order: Vec<&PolarScan> = scans.iter().collect();
    order.sort_by(|a, b| a.timestamps[0].total_cmp(&b.timestamps[0]).then(a.scan_id.cmp(&b.scan_id)));
    for s in order {
        let name = format!("scan_{:06}.txt", s.scan_id);
        let mut buf = Vec::new();
        s.write_text(&mut buf)?;
        fs::write(dir.join(&name), buf)?;
        writeln!(index, "{} {}", s.scan_id, name).unwrap();
    }
    fs::write(dir.join("scans.index"), index)?;
    Ok(())
}

/// Reads every scan listed in `dir/scans.index`, in manifest order.
pub fn read_scan_dir(dir: &Path) -> Result<Vec<PolarScan>, ScanError> {
    let index = fs::read_to_string(dir.join("scans.index"))?;
    let mut out = Vec::new();
    for (n, line) in index.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut parts = line.split_whitespace();
        let (Some(id), Some(name)) = (parts.next(), parts.next()) else {
            return Err(ScanError::Parse { context: "scans.index".into(), msg: format!("line {}", n + 1) });
        };
        let id: u64 = id
            .parse()
            .map_err(|e| ScanError::Parse { context: "scans.index".into(), msg: format!("line {}: {e}", n + 1) })?;
        out.push(PolarScan::read_text(&fs::read_to_string(dir.join(name))?, id)?);
    }
    Ok(out)
}

/// Keeps the `k` strongest bins of every azimuth row that exceed `min_intensity`.
/// Ties prefer the smaller bin index.
pub fn kstrongest_filter(scan: &PolarScan, k: usize, min_intensity: f64) -> PolarScan {
    assert!(k >= 1, "k must be at least 1");
    let n_bins = scan.n_bins;
    let mut out = vec![0.0; scan.intensities.len()];
    let mut order: Vec<usize> = Vec::with_capacity(n_bins);
    for r in 0..scan.n_azimuth() {
        let row = scan.row(r);
        order.clear();
        order.extend((0..n_bins).filter(|&b| row[b] > min_intensity && row[b] > 0.0));
        if order.len() > k {
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            order.truncate(k);
        }
        for &b in &order {
            out[r * n_bins + b] = row[b];
        }
    }
    PolarScan { intensities: out, ..scan.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub x: f64,
    pub y: f64,
    pub intensity: f64,
}

impl Peak {
    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Cartesian radar peaks expressed in the sensor frame at mid-sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakCloud {
    pub points: Vec<Peak>,
    /// Pose of the frame the points are expressed in (identity for the sensor frame).
    pub frame: Pose2,
    pub source_scan: u64,
}

impl PeakCloud {
    pub fn new(points: Vec<Peak>, source_scan: u64) -> Self {
        Self { points, frame: Pose2::identity(), source_scan }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies `t` to every point.
    pub fn transformed(&self, t: &Pose2) -> PeakCloud {
        let points = self
            .points
            .iter()
            .map(|p| {
                let q = t.transform_point([p.x, p.y]);
                Peak { x: q[0], y: q[1], intensity: p.intensity }
            })
            .collect();
        PeakCloud { points, frame: self.frame.compose(&t.inverse()), source_scan: self.source_scan }
    }

    pub fn xy(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(Peak::xy).collect()
    }
}

/// Converts retained bins to Cartesian points, de-skewed into the mid-sweep frame
/// assuming `twist` was constant during the sweep.
pub fn polar_to_peaks(filtered: &PolarScan, twist: &Twist2) -> PeakCloud {
    let t_mid = filtered.mid_time();
    let mut points = Vec::with_capacity(filtered.nonzero_count());
    for r in 0..filtered.n_azimuth() {
        let row = filtered.row(r);
        if row.iter().all(|v| *v == 0.0) {
            continue;
        }
        let motion = twist.integrate(filtered.timestamps[r] - t_mid);
        let (s, c) = filtered.azimuths[r].sin_cos();
        for (b, &v) in row.iter().enumerate() {
            if v > 0.0 {
                let range = (b as f64 + 0.5) * filtered.range_resolution;
                let p = motion.transform_point([range * c, range * s]);
                points.push(Peak { x: p[0], y: p[1], intensity: v });
            }
        }
    }
    PeakCloud::new(points, filtered.scan_id)
}

/// Grid-cell summary: mean position, unit normal and supporting sample count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub mean: [f64; 2],
    pub normal: [f64; 2],
    pub weight: f64,
}

impl SurfacePoint {
    pub fn transformed(&self, t: &Pose2) -> SurfacePoint {
        SurfacePoint { mean: t.transform_point(self.mean), normal: t.rotate_vector(self.normal), weight: self.weight }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSet {
    pub points: Vec<SurfacePoint>,
    pub frame: Pose2,
    pub source_scan: u64,
}

impl SurfacePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &Pose2) -> SurfacePointSet {
        SurfacePointSet {
            points: self.points.iter().map(|p| p.transformed(t)).collect(),
            frame: self.frame.compose(&t.inverse()),
            source_scan: self.source_scan,
        }
    }
}

/// Summarizes each grid cell holding at least `min_samples` peaks as an oriented
/// surface point. Normals point toward the frame origin.
pub fn extract_surface_points(cloud: &PeakCloud, cell_size: f64, min_samples: usize) -> SurfacePointSet {
    assert!(cell_size > 0.0, "cell_size must be positive");
    let mut cells: BTreeMap<(i64, i64), Vec<[f64; 2]>> = BTreeMap::new();
    for p in &cloud.points {
        let key = ((p.x / cell_size).floor() as i64, (p.y / cell_size).floor() as i64);
        cells.entry(key).or_default().push([p.x, p.y]);
    }
    let mut points = Vec::new();
    for pts in cells.values() {
        if pts.len() < min_samples.max(1) {
            continue;
        }
        let Some((mean, cov)) = mean_cov2(pts.iter().copied()) else { continue };
        let scale = cell_size * cell_size;
        if cov.xx + cov.yy <= 1e-12 * scale {
            continue;
        }
        let mut normal = cov.minor_axis();
        if normal[0] * -mean[0] + normal[1] * -mean[1] < 0.0 {
            normal = [-normal[0], -normal[1]];
        }
        points.push(SurfacePoint { mean, normal, weight: pts.len() as f64 });
    }
    SurfacePointSet { points, frame: cloud.frame, source_scan: cloud.source_scan }
}
