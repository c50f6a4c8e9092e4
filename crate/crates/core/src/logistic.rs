//! Weighted binary logistic regression fitted by damped Newton steps, and ranking metrics.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("training set is empty")]
    Empty,
    #[error("only one class present")]
    SingleClass,
    #[error("rows have inconsistent lengths")]
    Shape,
    #[error("sample weights must be positive and finite")]
    BadWeight,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    pub l2: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { l2: 1e-6, max_iterations: 100, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn objective(x: &[Vec<f64>], y: &[bool], w: &[f64], beta: &DVector<f64>, l2: f64) -> f64 {
    let mut f = 0.5 * l2 * beta.norm_squared();
    for ((row, &label), &wi) in x.iter().zip(y).zip(w) {
        let z: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        f += wi * if label { softplus(-z) } else { softplus(z) };
    }
    f
}

/// Minimizes the weighted negative log-likelihood plus `l2/2 · ‖β‖²`.
/// Rows already carry any bias column.
pub fn fit(x: &[Vec<f64>], y: &[bool], w: &[f64], settings: &FitSettings) -> Result<Fit, FitError> {
    let n = x.len();
    if n == 0 {
        return Err(FitError::Empty);
    }
    let dim = x[0].len();
    if x.iter().any(|r| r.len() != dim) || y.len() != n || w.len() != n {
        return Err(FitError::Shape);
    }
    if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(FitError::BadWeight);
    }
    if y.iter().all(|v| *v) || y.iter().all(|v| !*v) {
        return Err(FitError::SingleClass);
    }
    let l2 = settings.l2.max(1e-12);
    let mut beta = DVector::<f64>::zeros(dim);
    let mut f = objective(x, y, w, &beta, l2);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iterations {
        iterations += 1;
        let mut grad = &beta * l2;
        let mut hess = DMatrix::<f64>::identity(dim, dim) * l2;
        for ((row, &label), &wi) in x.iter().zip(y).zip(w) {
            let z: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            let p = sigmoid(z);
            let r = wi * (p - if label { 1.0 } else { 0.0 });
            let s = wi * p * (1.0 - p);
            for i in 0..dim {
                grad[i] += r * row[i];
                for j in 0..dim {
                    hess[(i, j)] += s * row[i] * row[j];
                }
            }
        }
        let Some(chol) = hess.cholesky() else { break };
        let step = chol.solve(&(-&grad));
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let fc = objective(x, y, w, &cand, l2);
            if fc <= f {
                beta = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || (step.norm() * t) < settings.tolerance * (1.0 + beta.norm()) {
            converged = true;
            break;
        }
    }
    Ok(Fit { coefficients: beta.iter().copied().collect(), iterations, converged })
}

/// Area under the ROC curve by the rank statistic; tied scores count half.
/// `None` when either class is missing.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}
