//! Sparse SE(2) pose-graph least squares: plain quadratic odometry terms, Huber-robust
//! loop terms, solved by Levenberg-Marquardt over sparse normal equations.
//!
//! Generic over the scalar type; see the crate-root aliases for `f32`/`f64` graphs.

use crate::geometry::{
    mat3_diag, mat3_inverse, mat3_mul, mat3_scale, mat3_symmetrize, mat3_transpose, mat3_vec, sym3_eigenvalues,
    wrap_angle, Mat3, Pose2,
};
use crate::scalar::Scalar;
use crate::sparse::{factorize, reverse_cuthill_mckee, Symbolic, UpperCsc};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("graph is not connected: node {0} unreachable from the anchor")]
    NotConnected(usize),
    #[error("edge references unknown node {0}")]
    UnknownNode(usize),
    #[error("graph has no nodes")]
    Empty,
    #[error("information matrix is ill-conditioned")]
    IllConditioned,
    #[error("g2o parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Huber penalty on a squared (Mahalanobis) residual `s`:
/// `s` below the knee `delta²`, `2·delta·√s − delta²` above it.
pub fn huber<T: Scalar>(s: T, delta: T) -> T {
    if s <= delta * delta {
        s
    } else {
        T::lit(2.0) * delta * s.sqrt() - delta * delta
    }
}

/// Derivative `dρ/ds` of [`huber`].
pub fn huber_weight<T: Scalar>(s: T, delta: T) -> T {
    if s <= delta * delta {
        T::one()
    } else {
        delta / s.sqrt()
    }
}

/// Local-frame discrepancy between the measured relative pose `xij` and the current
/// relative pose `yi⁻¹ ⊗ yj`.
pub fn residual<T: Scalar>(yi: &Pose2<T>, yj: &Pose2<T>, xij: &Pose2<T>) -> [T; 3] {
    let (si, ci) = yi.theta.sin_cos();
    let (sz, cz) = xij.theta.sin_cos();
    let dx = yj.x - yi.x;
    let dy = yj.y - yi.y;
    // relative translation in frame i
    let tx = ci * dx + si * dy;
    let ty = -si * dx + ci * dy;
    let ex = tx - xij.x;
    let ey = ty - xij.y;
    [cz * ex + sz * ey, -sz * ex + cz * ey, wrap_angle(yj.theta - yi.theta - xij.theta)]
}

/// Jacobians of [`residual`] with respect to `yi` and `yj` (rows: residual, cols: x, y, θ).
pub fn residual_jacobians<T: Scalar>(yi: &Pose2<T>, yj: &Pose2<T>, xij: &Pose2<T>) -> (Mat3<T>, Mat3<T>) {
    let (si, ci) = yi.theta.sin_cos();
    let (sz, cz) = xij.theta.sin_cos();
    let dx = yj.x - yi.x;
    let dy = yj.y - yi.y;
    // Rzᵀ Riᵀ
    let a = [[cz * ci - sz * si, cz * si + sz * ci], [-sz * ci - cz * si, -sz * si + cz * ci]];
    // Rzᵀ dRiᵀ/dθ (tj − ti)
    let dtx = -si * dx + ci * dy;
    let dty = -ci * dx - si * dy;
    let dth = [cz * dtx + sz * dty, -sz * dtx + cz * dty];
    let z = T::zero();
    let o = T::one();
    let ji = [[-a[0][0], -a[0][1], dth[0]], [-a[1][0], -a[1][1], dth[1]], [z, z, -o]];
    let jj = [[a[0][0], a[0][1], z], [a[1][0], a[1][1], z], [z, z, o]];
    (ji, jj)
}

/// `gamma · (JᵀJ)⁻¹`, symmetrized. Fails when the condition number exceeds 1e12.
pub fn dynamic_covariance<T: Scalar>(jacobian_gram: &Mat3<T>, gamma: T) -> Result<Mat3<T>, GraphError> {
    let m = mat3_symmetrize(jacobian_gram);
    let ev = sym3_eigenvalues(&m);
    if !(ev[0] > T::zero()) || !ev[2].is_finite() || ev[2] / ev[0] > T::lit(1e12) {
        return Err(GraphError::IllConditioned);
    }
    let inv = mat3_inverse(&m).ok_or(GraphError::IllConditioned)?;
    Ok(mat3_symmetrize(&mat3_scale(&inv, gamma)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    Fixed,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovarianceSpec {
    pub mode: CovarianceMode,
    pub fixed_diag: [f64; 3],
    pub gamma: f64,
    pub loop_scale: f64,
}

impl Default for CovarianceSpec {
    fn default() -> Self {
        Self { mode: CovarianceMode::Fixed, fixed_diag: [1e-2, 1e-2, 1e-3], gamma: 1.0, loop_scale: 5e-5 }
    }
}

impl CovarianceSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.fixed_diag.iter().any(|v| !(*v > 0.0)) || !(self.gamma > 0.0) || !(self.loop_scale > 0.0) {
            return Err("covariance scales must be positive".into());
        }
        Ok(())
    }

    /// Odometry covariance; dynamic mode falls back to fixed when `JᵀJ` is ill-conditioned.
    pub fn odometry<T: Scalar>(&self, jacobian_gram: &Mat3<T>) -> Mat3<T> {
        let fixed = mat3_diag(self.fixed_diag.map(T::lit));
        match self.mode {
            CovarianceMode::Fixed => fixed,
            CovarianceMode::Dynamic => dynamic_covariance(jacobian_gram, T::lit(self.gamma)).unwrap_or(fixed),
        }
    }

    /// Loop covariance: the odometry covariance with its weight reduced by `loop_scale`.
    pub fn loop_closure<T: Scalar>(&self, jacobian_gram: &Mat3<T>) -> Mat3<T> {
        mat3_scale(&self.odometry(jacobian_gram), T::lit(1.0 / self.loop_scale))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    Odometry,
    Loop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge<T = f64> {
    pub from: usize,
    pub to: usize,
    pub measurement: Pose2<T>,
    pub covariance: Mat3<T>,
    pub kind: EdgeKind,
}

/// SE(2) nodes plus odometry and loop edges. The first node is the fixed anchor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseGraph<T = f64> {
    ids: Vec<usize>,
    poses: Vec<Pose2<T>>,
    lookup: BTreeMap<usize, usize>,
    pub edges: Vec<Edge<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub initial_damping: f64,
    /// Huber knee on loop terms, in squared-Mahalanobis units.
    pub loop_huber_delta: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self { max_iterations: 100, tolerance: 1e-8, initial_damping: 1e-4, loop_huber_delta: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport<T = f64> {
    pub graph: PoseGraph<T>,
    pub initial_cost: T,
    pub final_cost: T,
    pub iterations: usize,
    pub status: SolveStatus,
}

impl<T: Scalar> PoseGraph<T> {
    pub fn new() -> Self {
        Self { ids: Vec::new(), poses: Vec::new(), lookup: BTreeMap::new(), edges: Vec::new() }
    }

    /// Adds (or overwrites) a node.
    pub fn add_node(&mut self, id: usize, pose: Pose2<T>) {
        if let Some(&i) = self.lookup.get(&id) {
            self.poses[i] = pose;
        } else {
            self.lookup.insert(id, self.ids.len());
            self.ids.push(id);
            self.poses.push(pose);
        }
    }

    pub fn add_edge(&mut self, edge: Edge<T>) {
        self.edges.push(edge);
    }

    pub fn add_odometry(&mut self, from: usize, to: usize, measurement: Pose2<T>, covariance: Mat3<T>) {
        self.edges.push(Edge { from, to, measurement, covariance, kind: EdgeKind::Odometry });
    }

    pub fn add_loop(&mut self, from: usize, to: usize, measurement: Pose2<T>, covariance: Mat3<T>) {
        self.edges.push(Edge { from, to, measurement, covariance, kind: EdgeKind::Loop });
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn anchor(&self) -> Option<usize> {
        self.ids.first().copied()
    }

    pub fn pose(&self, id: usize) -> Option<Pose2<T>> {
        self.lookup.get(&id).map(|&i| self.poses[i])
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, Pose2<T>)> + '_ {
        self.ids.iter().copied().zip(self.poses.iter().copied())
    }

    pub fn edges_of(&self, kind: EdgeKind) -> impl Iterator<Item = &Edge<T>> {
        self.edges.iter().filter(move |e| e.kind == kind)
    }

    fn check(&self) -> Result<Vec<(usize, usize, Mat3<T>)>, GraphError> {
        if self.ids.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut adj = vec![Vec::new(); self.ids.len()];
        let mut resolved = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            let a = *self.lookup.get(&e.from).ok_or(GraphError::UnknownNode(e.from))?;
            let b = *self.lookup.get(&e.to).ok_or(GraphError::UnknownNode(e.to))?;
            let info = mat3_inverse(&e.covariance).ok_or(GraphError::IllConditioned)?;
            resolved.push((a, b, mat3_symmetrize(&info)));
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.ids.len()];
        seen[0] = true;
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(GraphError::NotConnected(self.ids[i]));
        }
        Ok(resolved)
    }

    /// Total robust cost at the current node values.
    pub fn cost(&self, loop_huber_delta: T) -> Result<T, GraphError> {
        let resolved = self.check()?;
        Ok(total_cost(&self.edges, &resolved, &self.poses, loop_huber_delta))
    }

    /// Sum of `eᵀ C⁻¹ e` over odometry edges only.
    pub fn odometry_cost(&self) -> Result<T, GraphError> {
        let resolved = self.check()?;
        let mut c = T::zero();
        for (e, &(a, b, info)) in self.edges.iter().zip(&resolved) {
            if e.kind == EdgeKind::Odometry {
                c += mahalanobis(&residual(&self.poses[a], &self.poses[b], &e.measurement), &info);
            }
        }
        Ok(c)
    }

    /// Writes `VERTEX_SE2`, `FIX` and `EDGE_SE2` lines (information upper triangle).
    pub fn to_g2o(&self) -> String {
        let mut s = String::new();
        for (id, p) in self.nodes() {
            writeln!(s, "VERTEX_SE2 {} {:?} {:?} {:?}", id, p.x.as_f64(), p.y.as_f64(), p.theta.as_f64()).unwrap();
        }
        if let Some(a) = self.anchor() {
            writeln!(s, "FIX {a}").unwrap();
        }
        let mut ordered: Vec<&Edge<T>> = self.edges_of(EdgeKind::Odometry).collect();
        ordered.extend(self.edges_of(EdgeKind::Loop));
        for e in ordered {
            let info = mat3_inverse(&e.covariance).map(|m| mat3_symmetrize(&m)).unwrap_or(e.covariance);
            let m = e.measurement;
            writeln!(
                s,
                "EDGE_SE2 {} {} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
                e.from,
                e.to,
                m.x.as_f64(),
                m.y.as_f64(),
                m.theta.as_f64(),
                info[0][0].as_f64(),
                info[0][1].as_f64(),
                info[0][2].as_f64(),
                info[1][1].as_f64(),
                info[1][2].as_f64(),
                info[2][2].as_f64()
            )
            .unwrap();
        }
        s
    }

    /// Parses g2o SE(2) text. Edges between consecutive vertices (file order) are odometry,
    /// all others loops. The first vertex is the anchor.
    pub fn from_g2o(text: &str) -> Result<Self, GraphError> {
        let mut g = Self::new();
        let mut edges = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let toks: Vec<&str> = line.split_whitespace().collect();
            let perr = |msg: &str| GraphError::Parse { line: line_no, msg: msg.to_string() };
            let num = |i: usize| -> Result<f64, GraphError> {
                toks.get(i).ok_or_else(|| perr("missing field"))?.parse::<f64>().map_err(|e| perr(&e.to_string()))
            };
            let id = |i: usize| -> Result<usize, GraphError> {
                toks.get(i).ok_or_else(|| perr("missing id"))?.parse::<usize>().map_err(|e| perr(&e.to_string()))
            };
            match toks.first().copied() {
                None => {}
                Some(t) if t.starts_with('#') => {}
                Some("VERTEX_SE2") => g.add_node(id(1)?, Pose2::new(T::lit(num(2)?), T::lit(num(3)?), T::lit(num(4)?))),
                Some("FIX") => {}
                Some("EDGE_SE2") => {
                    let (a, b) = (id(1)?, id(2)?);
                    let meas = Pose2::new(T::lit(num(3)?), T::lit(num(4)?), T::lit(num(5)?));
                    let u: Vec<f64> = (6..12).map(num).collect::<Result<_, _>>()?;
                    let info = [[u[0], u[1], u[2]], [u[1], u[3], u[4]], [u[2], u[4], u[5]]].map(|r| r.map(T::lit));
                    let cov = mat3_inverse(&info).ok_or(GraphError::IllConditioned)?;
                    edges.push((a, b, meas, mat3_symmetrize(&cov)));
                }
                Some(other) => return Err(perr(&format!("unsupported record {other}"))),
            }
        }
        for (a, b, meas, cov) in edges {
            let consecutive = match (g.lookup.get(&a), g.lookup.get(&b)) {
                (Some(&i), Some(&j)) => j == i + 1,
                _ => false,
            };
            let kind = if consecutive { EdgeKind::Odometry } else { EdgeKind::Loop };
            g.add_edge(Edge { from: a, to: b, measurement: meas, covariance: cov, kind });
        }
        Ok(g)
    }
}

fn mahalanobis<T: Scalar>(e: &[T; 3], info: &Mat3<T>) -> T {
    let v = mat3_vec(info, e);
    e[0] * v[0] + e[1] * v[1] + e[2] * v[2]
}

fn total_cost<T: Scalar>(edges: &[Edge<T>], resolved: &[(usize, usize, Mat3<T>)], poses: &[Pose2<T>], delta: T) -> T {
    let mut c = T::zero();
    for (e, &(a, b, info)) in edges.iter().zip(resolved) {
        let s = mahalanobis(&residual(&poses[a], &poses[b], &e.measurement), &info);
        c += match e.kind {
            EdgeKind::Odometry => s,
            EdgeKind::Loop => huber(s, delta),
        };
    }
    c
}

/// Normal equations over all non-anchor nodes: `H δ = -g` with `H = Σ w JᵀΩJ`,
/// `g = Σ w JᵀΩe`.
struct NormalEquations<T> {
    triplets: Vec<(usize, usize, T)>,
    gradient: Vec<T>,
}

fn assemble<T: Scalar>(
    edges: &[Edge<T>],
    resolved: &[(usize, usize, Mat3<T>)],
    poses: &[Pose2<T>],
    slots: &[Option<usize>],
    delta: T,
) -> NormalEquations<T> {
    let n_var = 3 * (poses.len() - 1);
    let var = |node: usize| slots[node];
    let mut blocks: BTreeMap<(usize, usize), Mat3<T>> = BTreeMap::new();
    let mut gradient = vec![T::zero(); n_var];
    for (e, &(a, b, info)) in edges.iter().zip(resolved) {
        let r = residual(&poses[a], &poses[b], &e.measurement);
        let w = match e.kind {
            EdgeKind::Odometry => T::one(),
            EdgeKind::Loop => huber_weight(mahalanobis(&r, &info), delta),
        };
        let (ja, jb) = residual_jacobians(&poses[a], &poses[b], &e.measurement);
        let winfo = mat3_scale(&info, w);
        let parts = [(a, ja), (b, jb)];
        for &(na, ref jna) in &parts {
            let Some(va) = var(na) else { continue };
            let jt_info = mat3_mul(&mat3_transpose(jna), &winfo);
            let g = mat3_vec(&jt_info, &r);
            for k in 0..3 {
                gradient[va + k] += g[k];
            }
            for &(nb, ref jnb) in &parts {
                let Some(vb) = var(nb) else { continue };
                if vb < va {
                    continue;
                }
                let blk = mat3_mul(&jt_info, jnb);
                let entry = blocks.entry((va, vb)).or_insert_with(crate::geometry::mat3_zero);
                for i in 0..3 {
                    for j in 0..3 {
                        entry[i][j] += blk[i][j];
                    }
                }
            }
        }
    }
    let mut triplets = Vec::with_capacity(blocks.len() * 9);
    for ((va, vb), blk) in blocks {
        for i in 0..3 {
            for j in 0..3 {
                let (r, c) = (va + i, vb + j);
                if r <= c {
                    triplets.push((r, c, blk[i][j]));
                }
            }
        }
    }
    // keep the diagonal structurally present for damping
    for i in 0..n_var {
        triplets.push((i, i, T::zero()));
    }
    NormalEquations { triplets, gradient }
}

/// Minimizes the graph cost with Levenberg-Marquardt (Nielsen damping updates).
pub fn optimize<T: Scalar>(graph: &PoseGraph<T>, settings: &LmSettings) -> Result<OptimizeReport<T>, GraphError> {
    let resolved = graph.check()?;
    let delta = T::lit(settings.loop_huber_delta);
    let mut poses = graph.poses.clone();
    let mut cost = total_cost(&graph.edges, &resolved, &poses, delta);
    let initial_cost = cost;
    let n_var = 3 * (poses.len().saturating_sub(1));
    if n_var == 0 || graph.edges.is_empty() {
        return Ok(OptimizeReport { graph: graph.clone(), initial_cost, final_cost: cost, iterations: 0, status: SolveStatus::Converged });
    }
    let mut lambda: Option<T> = None;
    let mut nu = T::lit(2.0);
    let mut symbolic: Option<Symbolic> = None;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    // node 0 is the anchor; the rest are ordered to limit Cholesky fill
    let order = reverse_cuthill_mckee(
        poses.len() - 1,
        resolved.iter().filter(|(a, b, _)| *a > 0 && *b > 0).map(|(a, b, _)| (a - 1, b - 1)),
    );
    let mut slots = vec![None; poses.len()];
    for (k, v) in order.iter().enumerate() {
        slots[v + 1] = Some(3 * k);
    }
    let mut eqs = assemble(&graph.edges, &resolved, &poses, &slots, delta);
    while iterations < settings.max_iterations {
        iterations += 1;
        let max_diag = eqs
            .triplets
            .iter()
            .filter(|t| t.0 == t.1)
            .fold(T::zero(), |m, t| m.max(t.2));
        let lam = *lambda.get_or_insert_with(|| T::lit(settings.initial_damping) * max_diag.max(T::lit(1e-12)));
        let mut trip = eqs.triplets.clone();
        for i in 0..n_var {
            trip.push((i, i, lam));
        }
        let h = UpperCsc::from_triplets(n_var, trip);
        let sym = symbolic.get_or_insert_with(|| Symbolic::analyze(&h));
        let mut step: Vec<T> = eqs.gradient.iter().map(|g| -*g).collect();
        match factorize(&h, sym) {
            Ok(f) => f.solve_in_place(&mut step),
            Err(_) => {
                lambda = Some(lam * nu);
                nu = nu * T::lit(2.0);
                continue;
            }
        }
        let step_norm = step.iter().fold(T::zero(), |s, v| s + *v * *v).sqrt();
        let mut trial = poses.clone();
        for (p, o) in trial.iter_mut().zip(&slots).skip(1) {
            let o = o.expect("non-anchor slot");
            *p = Pose2::new(p.x + step[o], p.y + step[o + 1], p.theta + step[o + 2]);
        }
        let new_cost = total_cost(&graph.edges, &resolved, &trial, delta);
        // predicted decrease of the quadratic model: -2 gᵀδ - δᵀHδ, with Hδ = -g - λδ
        let mut pred = T::zero();
        for i in 0..n_var {
            pred += -eqs.gradient[i] * step[i] + lam * step[i] * step[i];
        }
        let actual = cost - new_cost;
        if new_cost.is_finite() && actual >= T::zero() && pred > T::zero() {
            let rho = actual / pred;
            poses = trial;
            cost = new_cost;
            let f = T::one() - (T::lit(2.0) * rho - T::one()).powi(3);
            lambda = Some(lam * f.max(T::lit(1.0 / 3.0)));
            nu = T::lit(2.0);
            eqs = assemble(&graph.edges, &resolved, &poses, &slots, delta);
            if step_norm < T::lit(settings.tolerance) || cost == T::zero() {
                status = SolveStatus::Converged;
                break;
            }
        } else {
            if step_norm < T::lit(settings.tolerance) {
                status = SolveStatus::Converged;
                break;
            }
            lambda = Some(lam * nu);
            nu = nu * T::lit(2.0);
        }
    }
    let mut out = graph.clone();
    out.poses = poses;
    Ok(OptimizeReport { graph: out, initial_cost, final_cost: cost, iterations, status })
}
