//! Deterministic synthetic radar world: landmark maps, scripted trajectories with
//! revisits, and raytraced polar sweeps with genuine motion distortion.

use crate::geometry::{Pose2, Twist2};
use crate::sensing::{write_scan_dir, PolarScan, ScanError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Fixed sweep rate of the simulated sensor.
pub const SCAN_RATE_HZ: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub reflectivity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Extent {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    UrbanWalls,
    OpenField,
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub landmarks: Vec<Landmark>,
    pub extent: Extent,
    pub seed: u64,
}

/// Spacing of landmark samples along generated walls, metres.
const WALL_SAMPLE_SPACING: f64 = 0.35;

/// World generator with an optional clearance corridor kept free of landmarks.
#[derive(Debug, Clone)]
pub struct WorldBuilder {
    seed: u64,
    n_landmarks: usize,
    extent: Extent,
    structure: Structure,
    corridor: Option<(Vec<[f64; 2]>, f64)>,
}

impl WorldBuilder {
    pub fn new(seed: u64, n_landmarks: usize, extent: Extent, structure: Structure) -> Self {
        Self { seed, n_landmarks, extent, structure, corridor: None }
    }

    /// Rejects landmarks closer than `half_width` to the polyline.
    pub fn keep_clear(mut self, polyline: Vec<[f64; 2]>, half_width: f64) -> Self {
        self.corridor = Some((polyline, half_width));
        self
    }

    fn admissible(&self, p: [f64; 2]) -> bool {
        if !self.extent.contains(p) {
            return false;
        }
        match &self.corridor {
            Some((line, hw)) => distance_to_polyline(p, line) > *hw,
            None => true,
        }
    }

    pub fn build(&self) -> World {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut landmarks = Vec::with_capacity(self.n_landmarks);
        let (n_walls, n_points) = match self.structure {
            Structure::UrbanWalls => (self.n_landmarks, 0),
            Structure::OpenField => (0, self.n_landmarks),
            Structure::Mixed => (self.n_landmarks / 2, self.n_landmarks - self.n_landmarks / 2),
        };
        let e = self.extent;
        let mut attempts = 0usize;
        let max_attempts = 200 * (self.n_landmarks + 1);
        while landmarks.len() < n_walls && attempts < max_attempts {
            attempts += 1;
            let start = [rng.random_range(e.min[0]..=e.max[0]), rng.random_range(e.min[1]..=e.max[1])];
            let len = rng.random_range(4.0..20.0);
            // Bias toward axis-aligned walls, with some arbitrary orientations.
            let heading = if rng.random_bool(0.7) {
                (rng.random_range(0..4) as f64) * PI / 2.0 + rng.random_range(-0.05..0.05)
            } else {
                rng.random_range(0.0..2.0 * PI)
            };
            let base = rng.random_range(800.0..3000.0);
            let n = (len / WALL_SAMPLE_SPACING).ceil() as usize;
            let (s, c) = f64::sin_cos(heading);
            let jagged = rng.random_bool(0.3);
            for i in 0..n {
                if landmarks.len() >= n_walls {
                    break;
                }
                let t = i as f64 * WALL_SAMPLE_SPACING;
                let off = if jagged && i % 6 == 3 { 0.6 } else { 0.0 };
                let p = [start[0] + c * t - s * off, start[1] + s * t + c * off];
                if self.admissible(p) {
                    let refl = base * rng.random_range(0.8..1.2);
                    landmarks.push(Landmark { x: p[0], y: p[1], reflectivity: refl });
                }
            }
        }
        attempts = 0;
        while landmarks.len() < n_walls + n_points && attempts < max_attempts {
            attempts += 1;
            let p = [rng.random_range(e.min[0]..=e.max[0]), rng.random_range(e.min[1]..=e.max[1])];
            if self.admissible(p) {
                landmarks.push(Landmark { x: p[0], y: p[1], reflectivity: rng.random_range(1500.0..4000.0) });
            }
        }
        World { landmarks, extent: self.extent, seed: self.seed }
    }
}

pub fn generate_world(seed: u64, n_landmarks: usize, extent: Extent, structure: Structure) -> World {
    WorldBuilder::new(seed, n_landmarks, extent, structure).build()
}

fn distance_to_polyline(p: [f64; 2], line: &[[f64; 2]]) -> f64 {
    if line.len() == 1 {
        return (p[0] - line[0][0]).hypot(p[1] - line[0][1]);
    }
    line.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let ab = [b[0] - a[0], b[1] - a[1]];
            let l2 = ab[0] * ab[0] + ab[1] * ab[1];
            let t = if l2 > 0.0 { (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
            (p[0] - a[0] - t * ab[0]).hypot(p[1] - a[1] - t * ab[1])
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarParams {
    pub n_azimuth: usize,
    pub n_bins: usize,
    pub range_resolution: f64,
    /// Std-dev of additive Gaussian intensity noise on every cell.
    pub beam_noise_std: f64,
    /// Returned intensity is `reflectivity / range^intensity_falloff`.
    pub intensity_falloff: f64,
    /// Per-azimuth uniform range jitter in whole bins.
    pub range_jitter_bins: u32,
    pub noise_seed: u64,
}

impl Default for RadarParams {
    fn default() -> Self {
        Self {
            n_azimuth: 400,
            n_bins: 400,
            range_resolution: 0.25,
            beam_noise_std: 0.0,
            intensity_falloff: 1.0,
            range_jitter_bins: 0,
            noise_seed: 0,
        }
    }
}

impl RadarParams {
    pub fn max_range(&self) -> f64 {
        self.n_bins as f64 * self.range_resolution
    }

    /// Default geometry with the noise model switched on.
    pub fn noisy(seed: u64) -> Self {
        Self { beam_noise_std: 2.0, range_jitter_bins: 1, noise_seed: seed, ..Self::default() }
    }
}

/// Raytraces one sweep centred (in time) on `t_mid`. `pose` is the sensor pose at
/// `t_mid`; during the sweep the sensor moves along `twist`.
pub fn raytrace_scan(
    world: &World,
    pose: &Pose2,
    twist: &Twist2,
    params: &RadarParams,
    scan_id: u64,
    t_mid: f64,
) -> PolarScan {
    let n_az = params.n_azimuth;
    let n_bins = params.n_bins;
    let period = 1.0 / SCAN_RATE_HZ;
    let d_az = 2.0 * PI / n_az as f64;
    let azimuths: Vec<f64> = (0..n_az).map(|i| i as f64 * d_az).collect();
    let row_dt: Vec<f64> = (0..n_az).map(|i| (i as f64 + 0.5 - n_az as f64 / 2.0) * period / n_az as f64).collect();
    let timestamps: Vec<f64> = row_dt.iter().map(|dt| t_mid + dt).collect();
    let row_pose: Vec<Pose2> = row_dt.iter().map(|dt| pose.compose(&twist.integrate(*dt))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.noise_seed ^ scan_id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let jitter: Vec<i64> = (0..n_az)
        .map(|_| {
            if params.range_jitter_bins == 0 {
                0
            } else {
                let j = params.range_jitter_bins as i64;
                rng.random_range(-j..=j)
            }
        })
        .collect();
    let mut intensities = vec![0.0; n_az * n_bins];
    let max_range = params.max_range();
    let reach = max_range + (twist.vx.hypot(twist.vy)) * period;
    let row_of = |bearing: f64| -> usize { ((bearing.rem_euclid(2.0 * PI) / d_az).round() as usize) % n_az };
    for lm in &world.landmarks {
        let dx = lm.x - pose.x;
        let dy = lm.y - pose.y;
        if dx.hypot(dy) > reach {
            continue;
        }
        let local = pose.inverse().transform_point([lm.x, lm.y]);
        let mut row = row_of(local[1].atan2(local[0]));
        for _ in 0..4 {
            let l = row_pose[row].inverse().transform_point([lm.x, lm.y]);
            let next = row_of(l[1].atan2(l[0]));
            if next == row {
                break;
            }
            row = next;
        }
        let l = row_pose[row].inverse().transform_point([lm.x, lm.y]);
        let range = l[0].hypot(l[1]);
        let bin = (range / params.range_resolution).floor() as i64 + jitter[row];
        if bin < 0 || bin >= n_bins as i64 || range >= max_range {
            continue;
        }
        intensities[row * n_bins + bin as usize] += lm.reflectivity / range.max(1.0).powf(params.intensity_falloff);
    }
    if params.beam_noise_std > 0.0 {
        let normal = Normal::new(0.0, params.beam_noise_std).expect("finite noise std");
        for v in intensities.iter_mut() {
            *v = (*v + normal.sample(&mut rng)).max(0.0);
        }
    }
    PolarScan::new(intensities, n_bins, params.range_resolution, azimuths, timestamps, scan_id)
        .expect("simulator produces valid scans")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "offset")]
pub enum RevisitPattern {
    SameDirection,
    ReverseDirection,
    /// Later passes run parallel to the first, displaced to the left by this many metres
    /// (alternating sides on successive passes).
    LateralOffset(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub waypoints: Vec<Pose2>,
    pub speed: f64,
    pub revisit_pattern: RevisitPattern,
    /// Number of additional passes after the first (0 = no revisit).
    pub revisits: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("trajectory needs at least two distinct waypoints")]
    TooFewWaypoints,
    #[error("speed must be positive")]
    BadSpeed,
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Arclength-parameterized smooth path through the waypoints.
#[derive(Debug, Clone)]
pub struct Path2 {
    pts: Vec<[f64; 2]>,
    cum: Vec<f64>,
    closed: bool,
}

const PATH_RESOLUTION: f64 = 0.05;
const HEADING_BASELINE: f64 = 0.5;

impl Path2 {
    /// Rounds the waypoint polyline with corner cutting and resamples it densely.
    pub fn new(waypoints: &[[f64; 2]], closed: bool) -> Self {
        let mut poly: Vec<[f64; 2]> = waypoints.to_vec();
        poly.dedup();
        if closed && poly.len() > 2 && poly.first() == poly.last() {
            poly.pop();
        }
        for _ in 0..4 {
            poly = chaikin(&poly, closed);
        }
        if closed {
            poly.push(poly[0]);
        }
        // resample
        let mut cum = vec![0.0];
        for w in poly.windows(2) {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            cum.push(cum.last().unwrap() + d);
        }
        let total = *cum.last().unwrap();
        let n = (total / PATH_RESOLUTION).ceil().max(1.0) as usize;
        let mut pts = Vec::with_capacity(n + 1);
        let mut seg = 0;
        for i in 0..=n {
            let s = total * i as f64 / n as f64;
            while seg + 2 < cum.len() && cum[seg + 1] < s {
                seg += 1;
            }
            let (a, b) = (poly[seg], poly[seg + 1]);
            let l = cum[seg + 1] - cum[seg];
            let t = if l > 0.0 { ((s - cum[seg]) / l).clamp(0.0, 1.0) } else { 0.0 };
            pts.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
        let mut rcum = vec![0.0];
        for w in pts.windows(2) {
            rcum.push(rcum.last().unwrap() + (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
        }
        Self { pts, cum: rcum, closed }
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    fn clamp_s(&self, s: f64) -> f64 {
        if self.closed {
            s.rem_euclid(self.length())
        } else {
            s.clamp(0.0, self.length())
        }
    }

    /// Position at arclength `s` (wraps on closed paths, clamps on open ones).
    pub fn point(&self, s: f64) -> [f64; 2] {
        let s = self.clamp_s(s);
        let i = match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.pts.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.pts.len() - 2),
        };
        let l = self.cum[i + 1] - self.cum[i];
        let t = if l > 0.0 { (s - self.cum[i]) / l } else { 0.0 };
        let (a, b) = (self.pts[i], self.pts[i + 1]);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    pub fn heading(&self, s: f64) -> f64 {
        let (s0, s1) = if self.closed {
            (s - HEADING_BASELINE, s + HEADING_BASELINE)
        } else {
            ((s - HEADING_BASELINE).max(0.0), (s + HEADING_BASELINE).min(self.length()))
        };
        let a = self.point(s0);
        let b = self.point(s1);
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    /// Left-pointing unit normal.
    pub fn normal(&self, s: f64) -> [f64; 2] {
        let h = self.heading(s);
        [-h.sin(), h.cos()]
    }

    pub fn offset_point(&self, s: f64, offset: f64) -> [f64; 2] {
        let p = self.point(s);
        let n = self.normal(s);
        [p[0] + offset * n[0], p[1] + offset * n[1]]
    }

    pub fn polyline(&self) -> &[[f64; 2]] {
        &self.pts
    }
}

fn chaikin(poly: &[[f64; 2]], closed: bool) -> Vec<[f64; 2]> {
    if poly.len() < 3 {
        return poly.to_vec();
    }
    let mut out = Vec::with_capacity(poly.len() * 2 + 2);
    let n = poly.len();
    let segs = if closed { n } else { n - 1 };
    if !closed {
        out.push(poly[0]);
    }
    for i in 0..segs {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        out.push([0.75 * a[0] + 0.25 * b[0], 0.75 * a[1] + 0.25 * b[1]]);
        out.push([0.25 * a[0] + 0.75 * b[0], 0.25 * a[1] + 0.75 * b[1]]);
    }
    if !closed {
        out.push(poly[n - 1]);
    }
    out
}

/// One simulated sweep with its ground truth.
#[derive(Debug, Clone)]
pub struct SimFrame {
    pub scan: PolarScan,
    pub t: f64,
    pub gt_pose: Pose2,
    pub gt_twist: Twist2,
    pub pass: usize,
    /// Arclength along the base path the pose was generated from.
    pub arclength: f64,
}

/// Length over which lateral offsets blend in at the start of a pass, metres.
pub const OFFSET_RAMP: f64 = 15.0;
/// Duration of a turn-in-place between reverse passes, seconds.
pub const U_TURN_DURATION: f64 = 4.0;

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

impl TrajectorySpec {
    pub fn path(&self) -> Result<Path2, SimError> {
        let pts: Vec<[f64; 2]> = self.waypoints.iter().map(|p| [p.x, p.y]).collect();
        let mut distinct = pts.clone();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(SimError::TooFewWaypoints);
        }
        let closed = self.revisits > 0 && !matches!(self.revisit_pattern, RevisitPattern::ReverseDirection);
        Ok(Path2::new(&pts, closed))
    }

    /// Ground-truth poses (and pass/arclength tags) at the scan rate.
    pub fn sample_poses(&self) -> Result<Vec<(Pose2, usize, f64)>, SimError> {
        if !(self.speed > 0.0) {
            return Err(SimError::BadSpeed);
        }
        let path = self.path()?;
        let len = path.length();
        let ds = self.speed / SCAN_RATE_HZ;
        let mut out: Vec<(Pose2, usize, f64)> = Vec::new();
        let pose_at = |s: f64, offset: &dyn Fn(f64) -> f64, reverse: bool| -> Pose2 {
            let p = path.offset_point(s, offset(s));
            let (a, b) = (
                path.offset_point(s - HEADING_BASELINE, offset(s - HEADING_BASELINE)),
                path.offset_point(s + HEADING_BASELINE, offset(s + HEADING_BASELINE)),
            );
            let (a, b) = if path.is_closed() {
                (a, b)
            } else {
                let s0 = (s - HEADING_BASELINE).max(0.0);
                let s1 = (s + HEADING_BASELINE).min(len);
                (path.offset_point(s0, offset(s0)), path.offset_point(s1, offset(s1)))
            };
            let mut h = (b[1] - a[1]).atan2(b[0] - a[0]);
            if reverse {
                h += PI;
            }
            Pose2::new(p[0], p[1], h)
        };
        // first pass
        let n0 = (len / ds).floor() as usize;
        for k in 0..=n0 {
            let s = k as f64 * ds;
            out.push((pose_at(s, &|_| 0.0, false), 0, s));
        }
        let mut s_cursor = n0 as f64 * ds;
        let mut prev_offset = 0.0;
        let mut reversed = false;
        for pass in 1..=self.revisits {
            match self.revisit_pattern {
                RevisitPattern::SameDirection => {
                    let start = s_cursor + ds;
                    let n = (len / ds).floor() as usize;
                    for k in 0..n {
                        let s = start + k as f64 * ds;
                        out.push((pose_at(s, &|_| 0.0, false), pass, s.rem_euclid(len)));
                    }
                    s_cursor = start + (n - 1) as f64 * ds;
                }
                RevisitPattern::LateralOffset(d) => {
                    let target = if pass % 2 == 1 { d } else { -d };
                    let from = prev_offset;
                    let start = s_cursor + ds;
                    let n = (len / ds).floor() as usize;
                    let offset = move |s: f64| from + (target - from) * smoothstep((s - start) / OFFSET_RAMP);
                    for k in 0..n {
                        let s = start + k as f64 * ds;
                        out.push((pose_at(s, &offset, false), pass, s.rem_euclid(len)));
                    }
                    s_cursor = start + (n - 1) as f64 * ds;
                    prev_offset = target;
                }
                RevisitPattern::ReverseDirection => {
                    // turn in place with a smooth angular-rate profile
                    let last = out.last().unwrap().0;
                    let n_turn = (U_TURN_DURATION * SCAN_RATE_HZ).round() as usize;
                    let s_here = out.last().unwrap().2;
                    for k in 1..=n_turn {
                        let u = k as f64 / n_turn as f64;
                        let swept = PI * (u - (2.0 * PI * u).sin() / (2.0 * PI));
                        out.push((Pose2::new(last.x, last.y, last.theta + swept), pass, s_here));
                    }
                    reversed = !reversed;
                    let n = (len / ds).floor() as usize;
                    for k in 1..=n {
                        let s = if reversed { len - k as f64 * ds } else { k as f64 * ds };
                        out.push((pose_at(s, &|_| 0.0, reversed), pass, s));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Raytraces the whole sequence. Twists are central differences of the sampled poses.
pub fn generate_sequence(world: &World, spec: &TrajectorySpec, params: &RadarParams) -> Result<Vec<SimFrame>, SimError> {
    let poses = spec.sample_poses()?;
    let dt = 1.0 / SCAN_RATE_HZ;
    let n = poses.len();
    let twists: Vec<Twist2> = (0..n)
        .map(|k| {
            if n == 1 {
                return Twist2::zero();
            }
            let (a, b, span) = match k {
                0 => (0, 1, dt),
                k if k == n - 1 => (n - 2, n - 1, dt),
                k => (k - 1, k + 1, 2.0 * dt),
            };
            Twist2::between(&poses[a].0, &poses[b].0, span)
        })
        .collect();
    use rayon::prelude::*;
    let frames = (0..n)
        .into_par_iter()
        .map(|k| {
            let (pose, pass, s) = poses[k];
            let t = k as f64 * dt;
            let scan = raytrace_scan(world, &pose, &twists[k], params, k as u64, t);
            SimFrame { scan, t, gt_pose: pose, gt_twist: twists[k], pass, arclength: s }
        })
        .collect();
    Ok(frames)
}

/// Writes `gt_poses.csv` rows `scan_id, t, x, y, theta`.
pub fn gt_csv(frames: &[SimFrame]) -> String {
    let mut s = String::from("scan_id,t,x,y,theta\n");
    for f in frames {
        writeln!(s, "{},{:?},{:?},{:?},{:?}", f.scan.scan_id, f.t, f.gt_pose.x, f.gt_pose.y, f.gt_pose.theta).unwrap();
    }
    s
}

/// Emits the portable scan directory plus `gt_poses.csv`.
pub fn write_dataset(dir: &Path, frames: &[SimFrame]) -> Result<(), SimError> {
    let scans: Vec<PolarScan> = frames.iter().map(|f| f.scan.clone()).collect();
    write_scan_dir(dir, &scans)?;
    fs::write(dir.join("gt_poses.csv"), gt_csv(frames))?;
    Ok(())
}

/// A ready-made scenario: rectangular course through a walled world.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub structure: Structure,
    pub n_landmarks: usize,
    pub course: [f64; 2],
    pub speed: f64,
    pub revisit_pattern: RevisitPattern,
    pub revisits: usize,
    pub radar: RadarParams,
}

impl Scenario {
    pub fn rectangle(seed: u64, course: [f64; 2], revisit_pattern: RevisitPattern, revisits: usize) -> Self {
        Self {
            seed,
            structure: Structure::UrbanWalls,
            n_landmarks: 0,
            course,
            speed: 3.0,
            revisit_pattern,
            revisits,
            radar: RadarParams::default(),
        }
    }

    pub fn trajectory(&self) -> TrajectorySpec {
        let [w, h] = self.course;
        let wp = [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h], [0.0, 0.0]];
        let waypoints = if self.revisits > 0 && !matches!(self.revisit_pattern, RevisitPattern::ReverseDirection) {
            wp.iter().map(|p| Pose2::new(p[0], p[1], 0.0)).collect()
        } else {
            // open course: leave the last side out so the single pass does not close on itself
            wp[..4].iter().map(|p| Pose2::new(p[0], p[1], 0.0)).collect()
        };
        TrajectorySpec { waypoints, speed: self.speed, revisit_pattern: self.revisit_pattern, revisits: self.revisits }
    }

    pub fn world(&self) -> World {
        let [w, h] = self.course;
        let margin = 45.0;
        let extent = Extent::new([-margin, -margin], [w + margin, h + margin]);
        let n = if self.n_landmarks > 0 {
            self.n_landmarks
        } else {
            // about one wall sample per 4 m² of the extent
            (((w + 2.0 * margin) * (h + 2.0 * margin)) / 4.0) as usize
        };
        let path = self.trajectory().path().expect("valid course");
        WorldBuilder::new(self.seed, n, extent, self.structure).keep_clear(path.polyline().to_vec(), 6.0).build()
    }

    pub fn generate(&self) -> Result<(World, Vec<SimFrame>), SimError> {
        let world = self.world();
        let frames = generate_sequence(&world, &self.trajectory(), &self.radar)?;
        Ok((world, frames))
    }
}
