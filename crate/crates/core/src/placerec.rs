//! Scan Context place recognition with origin augmentation and a coupled
//! appearance/odometry two-step search.

use crate::geometry::{wrap_angle, Pose2};
use crate::odometry::Keyframe;
use crate::sensing::{PeakCloud, PolarScan};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlaceRecConfig {
    pub ring: usize,
    pub sec: usize,
    pub max_range: f64,
    /// Positional slack before odometry drift is penalized (m).
    pub epsilon: f64,
    /// Relative drift assumed for odometry.
    pub sigma: f64,
    /// Stage-one candidates kept per query augmentation.
    pub fanout: usize,
    /// Keyframes just before the query that are never candidates.
    pub exclusion: usize,
    pub offsets: Vec<f64>,
    /// Use `offsets` (otherwise only the unshifted query).
    pub augment: bool,
    /// Embed `d_odom` into both search stages.
    pub coupled: bool,
    /// Restrict the shift search around the sector-key alignment.
    pub fast_shift: bool,
    pub fast_shift_radius: usize,
}

impl Default for PlaceRecConfig {
    fn default() -> Self {
        Self {
            ring: 40,
            sec: 120,
            max_range: 80.0,
            epsilon: 5.0,
            sigma: 0.05,
            fanout: 10,
            exclusion: 20,
            offsets: vec![0.0, 2.0, -2.0, 4.0, -4.0],
            augment: true,
            coupled: true,
            fast_shift: false,
            fast_shift_radius: 6,
        }
    }
}

impl PlaceRecConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.ring == 0 || self.sec == 0 {
            return Err("ring and sec must be at least 1".into());
        }
        if !(self.max_range > 0.0) || !(self.sigma > 0.0) || !(self.epsilon >= 0.0) {
            return Err("max_range and sigma must be positive, epsilon non-negative".into());
        }
        if self.fanout == 0 {
            return Err("fanout must be at least 1".into());
        }
        if self.offsets.first() != Some(&0.0) {
            return Err("the first augmentation offset must be 0".into());
        }
        Ok(())
    }

    pub fn active_offsets(&self) -> &[f64] {
        if self.augment {
            &self.offsets
        } else {
            &self.offsets[..1]
        }
    }
}

/// `ring × sec` polar grid; empty cells hold −1, occupied ones the summed intensity / 1000.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub ring: usize,
    pub sec: usize,
    grid: Vec<f64>,
    pub keyframe_id: usize,
    pub aug_offset: f64,
}

pub const EMPTY_CELL: f64 = -1.0;

impl Descriptor {
    pub fn empty(ring: usize, sec: usize) -> Self {
        Self { ring, sec, grid: vec![EMPTY_CELL; ring * sec], keyframe_id: 0, aug_offset: 0.0 }
    }

    pub fn from_grid(ring: usize, sec: usize, grid: Vec<f64>) -> Self {
        assert_eq!(grid.len(), ring * sec, "grid size");
        Self { ring, sec, grid, keyframe_id: 0, aug_offset: 0.0 }
    }

    pub fn get(&self, r: usize, s: usize) -> f64 {
        self.grid[r * self.sec + s]
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Column `s` moves to column `s + shift`.
    pub fn rotated_columns(&self, shift: usize) -> Self {
        let mut out = self.clone();
        for r in 0..self.ring {
            for s in 0..self.sec {
                out.grid[r * self.sec + (s + shift) % self.sec] = self.get(r, s);
            }
        }
        out
    }

    fn column_is_empty(&self, s: usize) -> bool {
        (0..self.ring).all(|r| self.get(r, s) == EMPTY_CELL)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in 0..self.ring {
            let row: Vec<String> = (0..self.sec).map(|s| format!("{:?}", self.get(r, s))).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        out
    }

    /// Writes `desc_{id}_{offset}.mat` into `dir`.
    pub fn dump(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("desc_{}_{}.mat", self.keyframe_id, self.aug_offset)), self.to_text())
    }
}

/// Union of a keyframe's peaks and its odometry neighbours', expressed in the keyframe frame.
pub fn aggregate_cloud(kf: &Keyframe, neighbors: &[&Keyframe]) -> PeakCloud {
    let mut points = kf.peaks.points.clone();
    for n in neighbors {
        let rel = kf.pose.between(&n.pose);
        points.extend(n.peaks.transformed(&rel).points);
    }
    PeakCloud { points, frame: kf.pose, source_scan: kf.peaks.source_scan }
}

/// Input translated by `−offset` along the sensor y-axis (origin moved to `+offset`).
pub fn shift_origin(cloud: &PeakCloud, offset: f64) -> PeakCloud {
    cloud.transformed(&Pose2::new(0.0, -offset, 0.0))
}

pub fn augment_origins(cloud: &PeakCloud, offsets: &[f64]) -> Vec<(f64, PeakCloud)> {
    offsets.iter().map(|&o| (o, shift_origin(cloud, o))).collect()
}

pub fn build_descriptor(cloud: &PeakCloud, ring: usize, sec: usize, max_range: f64) -> Descriptor {
    assert!(ring >= 1 && sec >= 1 && max_range > 0.0);
    let mut sum = vec![0.0; ring * sec];
    let mut hit = vec![false; ring * sec];
    for p in &cloud.points {
        let range = p.x.hypot(p.y);
        if !(range < max_range) {
            continue;
        }
        let r = ((range / max_range * ring as f64) as usize).min(ring - 1);
        let bearing = p.y.atan2(p.x).rem_euclid(TAU);
        let s = ((bearing / TAU * sec as f64) as usize).min(sec - 1);
        sum[r * sec + s] += p.intensity;
        hit[r * sec + s] = true;
    }
    let grid = sum.iter().zip(&hit).map(|(v, h)| if *h { v / 1000.0 } else { EMPTY_CELL }).collect();
    Descriptor::from_grid(ring, sec, grid)
}

/// Raw polar sweep area-averaged straight into the grid, without peak extraction.
pub fn polar_descriptor(scan: &PolarScan, ring: usize, sec: usize, max_range: f64) -> Descriptor {
    let mut sum = vec![0.0; ring * sec];
    let mut count = vec![0usize; ring * sec];
    for a in 0..scan.n_azimuth() {
        let s = ((scan.azimuths[a].rem_euclid(TAU) / TAU * sec as f64) as usize).min(sec - 1);
        for (b, v) in scan.row(a).iter().enumerate() {
            let range = (b as f64 + 0.5) * scan.range_resolution;
            if range >= max_range {
                break;
            }
            let r = ((range / max_range * ring as f64) as usize).min(ring - 1);
            sum[r * sec + s] += v;
            count[r * sec + s] += 1;
        }
    }
    let grid = sum
        .iter()
        .zip(&count)
        .map(|(v, &n)| if n == 0 || *v <= 0.0 { EMPTY_CELL } else { v / n as f64 / 1000.0 })
        .collect();
    Descriptor::from_grid(ring, sec, grid)
}

/// Per-ring occupancy ratio, optionally extended with a scaled odometry-similarity element.
#[derive(Debug, Clone, PartialEq)]
pub struct RingKey {
    pub values: Vec<f64>,
}

pub fn ring_key(desc: &Descriptor, d_odom: Option<f64>) -> RingKey {
    let mut values: Vec<f64> = (0..desc.ring)
        .map(|r| (0..desc.sec).filter(|&s| desc.get(r, s) != EMPTY_CELL).count() as f64 / desc.sec as f64)
        .collect();
    if let Some(d) = d_odom {
        values.push(d * desc.ring as f64 / 4.0);
    }
    RingKey { values }
}

impl RingKey {
    pub fn distance2(&self, other: &RingKey) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "ring key length");
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

/// Column-normalized grid plus per-ring spectra, reusable across comparisons.
#[derive(Debug, Clone)]
pub struct PreparedDescriptor {
    ring: usize,
    sec: usize,
    unit_columns: Vec<f64>,
    spectra: Vec<Complex<f64>>,
    sector_key: Vec<f64>,
}

impl PreparedDescriptor {
    pub fn new(desc: &Descriptor) -> Self {
        let (ring, sec) = (desc.ring, desc.sec);
        let mut unit_columns = vec![0.0; ring * sec];
        for s in 0..sec {
            if desc.column_is_empty(s) {
                continue;
            }
            let norm = (0..ring).map(|r| desc.get(r, s).powi(2)).sum::<f64>().sqrt();
            for r in 0..ring {
                unit_columns[r * sec + s] = desc.get(r, s) / norm;
            }
        }
        let fft = FftPlanner::new().plan_fft_forward(sec);
        let mut spectra: Vec<Complex<f64>> = unit_columns.iter().map(|v| Complex::new(*v, 0.0)).collect();
        for row in spectra.chunks_mut(sec) {
            fft.process(row);
        }
        let sector_key = (0..sec)
            .map(|s| (0..ring).filter(|&r| desc.get(r, s) != EMPTY_CELL).count() as f64 / ring as f64)
            .collect();
        Self { ring, sec, unit_columns, spectra, sector_key }
    }

    /// Mean column cosine distance with `other` rotated back by `shift`.
    pub fn distance_at(&self, other: &Self, shift: usize) -> f64 {
        let sec = self.sec;
        let mut dot = 0.0;
        for r in 0..self.ring {
            let q = &self.unit_columns[r * sec..(r + 1) * sec];
            let c = &other.unit_columns[r * sec..(r + 1) * sec];
            for j in 0..sec {
                dot += q[j] * c[(j + shift) % sec];
            }
        }
        1.0 - dot / sec as f64
    }

    fn correlation(&self, other: &Self) -> Vec<f64> {
        let sec = self.sec;
        let mut acc = vec![Complex::new(0.0, 0.0); sec];
        for r in 0..self.ring {
            let q = &self.spectra[r * sec..(r + 1) * sec];
            let c = &other.spectra[r * sec..(r + 1) * sec];
            for k in 0..sec {
                acc[k] += q[k].conj() * c[k];
            }
        }
        FftPlanner::new().plan_fft_inverse(sec).process(&mut acc);
        acc.iter().map(|v| v.re / sec as f64).collect()
    }

    /// `(d_sc, shift)`: the best shift over all sectors (or around the sector-key alignment
    /// when `fast` is set). Near-ties go to the lowest shift.
    pub fn distance(&self, other: &Self, fast: Option<usize>) -> (f64, usize) {
        assert!(self.ring == other.ring && self.sec == other.sec, "descriptor dimensions differ");
        let sec = self.sec;
        let shifts: Vec<usize> = match fast {
            Some(radius) if 2 * radius + 1 < sec => {
                let center = self.sector_key_shift(other);
                (0..=2 * radius).map(|k| (center + sec + k - radius) % sec).collect()
            }
            _ => (0..sec).collect(),
        };
        let corr = self.correlation(other);
        let best = shifts.iter().map(|&s| corr[s]).fold(f64::NEG_INFINITY, f64::max);
        let mut shift = shifts.iter().copied().filter(|&s| corr[s] >= best - 1e-9).min().unwrap_or(0);
        let mut d = self.distance_at(other, shift);
        for &s in &shifts {
            if corr[s] >= best - 1e-9 && s != shift {
                let ds = self.distance_at(other, s);
                if ds < d {
                    d = ds;
                    shift = s;
                }
            }
        }
        (d.clamp(0.0, 2.0), shift)
    }

    fn sector_key_shift(&self, other: &Self) -> usize {
        let sec = self.sec;
        let mut best = (f64::INFINITY, 0);
        for s in 0..sec {
            let d: f64 = (0..sec).map(|j| (self.sector_key[j] - other.sector_key[(j + s) % sec]).abs()).sum();
            if d < best.0 {
                best = (d, s);
            }
        }
        best.1
    }
}

/// Minimum mean column cosine distance over all cyclic shifts, and the minimizing shift.
pub fn sc_distance(iq: &Descriptor, ic: &Descriptor) -> (f64, usize) {
    PreparedDescriptor::new(iq).distance(&PreparedDescriptor::new(ic), None)
}

/// Yaw implied by a column shift, wrapped to (−π, π].
pub fn shift_to_angle(shift: usize, sec: usize) -> f64 {
    wrap_angle(shift as f64 * TAU / sec as f64)
}

/// `1 − exp(−t_err² / 2σ²)` with `t_err = max(gap − ε, 0) / dist`.
pub fn odom_distance(gap: f64, dist: f64, epsilon: f64, sigma: f64) -> f64 {
    if dist <= 0.0 {
        return if gap <= epsilon { 0.0 } else { 1.0 };
    }
    let t_err = (gap - epsilon).max(0.0) / dist;
    1.0 - (-(t_err * t_err) / (2.0 * sigma * sigma)).exp()
}

/// Odometry consistency of closing a loop between `q` and the earlier keyframe `c`.
pub fn odometry_similarity(q: &Keyframe, c: &Keyframe, cfg: &PlaceRecConfig) -> f64 {
    odom_similarity_raw(&q.pose, q.distance, &c.pose, c.distance, cfg)
}

fn odom_similarity_raw(qp: &Pose2, qd: f64, cp: &Pose2, cd: f64, cfg: &PlaceRecConfig) -> f64 {
    let gap = (qp.x - cp.x).hypot(qp.y - cp.y);
    odom_distance(gap, (qd - cd).abs(), cfg.epsilon, cfg.sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopCandidate {
    pub query_id: usize,
    pub cand_id: usize,
    pub rot_shift: usize,
    pub rotation: f64,
    pub lateral_guess: f64,
    pub d_sc: f64,
    pub d_odom: f64,
    pub score: f64,
}

impl LoopCandidate {
    /// Pose of the query in the candidate frame implied by the matched rotation and origin shift.
    pub fn initial_guess(&self) -> Pose2 {
        let t = Pose2::new(0.0, 0.0, self.rotation).rotate_vector([0.0, -self.lateral_guess]);
        Pose2::new(t[0], t[1], self.rotation)
    }
}

/// A stored keyframe: unshifted descriptor, its ring key and odometry state.
#[derive(Debug, Clone)]
pub struct DbEntry {
    pub id: usize,
    pub pose: Pose2,
    pub distance: f64,
    pub descriptor: Descriptor,
    pub key: RingKey,
    prepared: PreparedDescriptor,
}

impl DbEntry {
    pub fn new(id: usize, pose: Pose2, distance: f64, mut descriptor: Descriptor) -> Self {
        descriptor.keyframe_id = id;
        descriptor.aug_offset = 0.0;
        let key = ring_key(&descriptor, None);
        let prepared = PreparedDescriptor::new(&descriptor);
        Self { id, pose, distance, descriptor, key, prepared }
    }
}

#[derive(Debug, Clone)]
pub struct QueryAugmentation {
    pub descriptor: Descriptor,
    pub key: RingKey,
    prepared: PreparedDescriptor,
}

/// A query keyframe with one descriptor per active origin offset.
#[derive(Debug, Clone)]
pub struct Query {
    pub id: usize,
    pub pose: Pose2,
    pub distance: f64,
    pub augmentations: Vec<QueryAugmentation>,
}

impl Query {
    pub fn from_descriptors(id: usize, pose: Pose2, distance: f64, descriptors: Vec<Descriptor>) -> Self {
        let augmentations = descriptors
            .into_iter()
            .map(|mut d| {
                d.keyframe_id = id;
                QueryAugmentation { key: ring_key(&d, None), prepared: PreparedDescriptor::new(&d), descriptor: d }
            })
            .collect();
        Self { id, pose, distance, augmentations }
    }

    pub fn from_cloud(id: usize, pose: Pose2, distance: f64, cloud: &PeakCloud, cfg: &PlaceRecConfig) -> Self {
        let descriptors = augment_origins(cloud, cfg.active_offsets())
            .into_iter()
            .map(|(o, c)| {
                let mut d = build_descriptor(&c, cfg.ring, cfg.sec, cfg.max_range);
                d.aug_offset = o;
                d
            })
            .collect();
        Self::from_descriptors(id, pose, distance, descriptors)
    }
}

/// Append-only descriptor store; readers work on cheap immutable snapshots.
#[derive(Debug, Clone, Default)]
pub struct DescriptorDatabase {
    entries: Arc<Vec<Arc<DbEntry>>>,
}

pub type Snapshot = Arc<Vec<Arc<DbEntry>>>;

impl DescriptorDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: DbEntry) {
        if let Some(last) = self.entries.last() {
            assert!(entry.id > last.id, "entries must be inserted in id order");
        }
        Arc::make_mut(&mut self.entries).push(Arc::new(entry));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn snapshot(&self) -> Snapshot {
        self.entries.clone()
    }

    pub fn dump(&self, dir: &Path) -> std::io::Result<()> {
        self.entries.iter().try_for_each(|e| e.descriptor.dump(dir))
    }
}

fn eligible<'a>(query: &Query, db: &'a [Arc<DbEntry>], cfg: &PlaceRecConfig) -> impl Iterator<Item = &'a Arc<DbEntry>> {
    let qid = query.id;
    let window = cfg.exclusion;
    db.iter().filter(move |e| e.id < qid && qid - e.id > window)
}

/// Two-step coupled retrieval: ring-key nearest neighbours per augmentation, then exact
/// Scan Context distances; at most `n_cand` distinct keyframes ordered by score.
pub fn retrieve(query: &Query, db: &[Arc<DbEntry>], n_cand: usize, cfg: &PlaceRecConfig) -> Vec<LoopCandidate> {
    let pool: Vec<(&Arc<DbEntry>, f64)> = eligible(query, db, cfg)
        .map(|e| (e, odom_similarity_raw(&query.pose, query.distance, &e.pose, e.distance, cfg)))
        .collect();
    if pool.is_empty() || n_cand == 0 {
        return Vec::new();
    }
    let odom_scale = cfg.ring as f64 / 4.0;
    let fast = cfg.fast_shift.then_some(cfg.fast_shift_radius);
    let mut best: std::collections::BTreeMap<usize, LoopCandidate> = std::collections::BTreeMap::new();
    for aug in &query.augmentations {
        let mut ranked: Vec<(f64, usize)> = pool
            .iter()
            .enumerate()
            .map(|(i, (e, d_odom))| {
                let extra = if cfg.coupled { (odom_scale * d_odom).powi(2) } else { 0.0 };
                (aug.key.distance2(&e.key) + extra, i)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        ranked.truncate(cfg.fanout);
        for (_, i) in ranked {
            let (entry, d_odom) = pool[i];
            let (d_sc, shift) = aug.prepared.distance(&entry.prepared, fast);
            let score = if cfg.coupled { d_sc + d_odom } else { d_sc };
            let cand = LoopCandidate {
                query_id: query.id,
                cand_id: entry.id,
                rot_shift: shift,
                rotation: shift_to_angle(shift, cfg.sec),
                lateral_guess: aug.descriptor.aug_offset,
                d_sc,
                d_odom,
                score,
            };
            match best.get(&entry.id) {
                Some(b) if b.score <= cand.score => {}
                _ => {
                    best.insert(entry.id, cand);
                }
            }
        }
    }
    let mut out: Vec<LoopCandidate> = best.into_values().collect();
    out.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.d_sc.total_cmp(&b.d_sc)).then(a.cand_id.cmp(&b.cand_id)));
    out.truncate(n_cand);
    out
}

/// Reference implementation: exact scores for every (augmentation, keyframe) pair.
pub fn retrieve_exhaustive(query: &Query, db: &[Arc<DbEntry>], n_cand: usize, cfg: &PlaceRecConfig) -> Vec<LoopCandidate> {
    let cfg = PlaceRecConfig { fanout: usize::MAX, ..cfg.clone() };
    retrieve(query, db, n_cand, &cfg)
}
