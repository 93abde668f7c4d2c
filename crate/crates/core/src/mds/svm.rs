//! Soft-margin RBF support vector machine trained by SMO.
//!
//! Working-set selection follows the maximal violating pair rule. Inputs
//! are standardized with the training-set mean and spread, which are kept
//! in the model.

use serde::{Deserialize, Serialize};

use super::features::{FeatureVector, FEATURE_DIM};
use crate::error::{Error, Result};

pub const KKT_TOLERANCE: f64 = 1e-3;
const MAX_ITERATIONS: usize = 1_000_000;
const TAU: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// Standardized support vectors.
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector.
    pub dual_coefficients: Vec<f64>,
    pub bias: f64,
    pub kernel_gamma: f64,
    pub regularization_c: f64,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// `None` selects `1 / (dim * variance)` of the standardized features.
    pub gamma: Option<f64>,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { c: 1.0, gamma: None }
    }
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d).exp()
}

impl SvmModel {
    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Signed decision value; positive means the rotor (UAV) class.
    pub fn decision(&self, x: &FeatureVector) -> f64 {
        let z = self.standardize(&x.0);
        self.support_vectors
            .iter()
            .zip(&self.dual_coefficients)
            .map(|(sv, c)| c * rbf(sv, &z, self.kernel_gamma))
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, x: &FeatureVector) -> bool {
        self.decision(x) > 0.0
    }
}

/// Trains on positives (label +1) and negatives (label -1).
///
/// Samples are put in a canonical order first, so the solution does not
/// depend on the order in which they were supplied.
pub fn train_svm(
    positives: &[FeatureVector],
    negatives: &[FeatureVector],
    params: SvmParams,
) -> Result<SvmModel> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::input("svm: both classes need at least one sample"));
    }
    if positives.iter().chain(negatives).any(|f| !f.is_finite()) {
        return Err(Error::input("svm: non-finite feature"));
    }
    if !(params.c > 0.0) || params.gamma.is_some_and(|g| !(g > 0.0)) {
        return Err(Error::input("svm: c and gamma must be positive"));
    }

    let mut samples: Vec<(FeatureVector, f64)> = positives
        .iter()
        .map(|f| (*f, 1.0))
        .chain(negatives.iter().map(|f| (*f, -1.0)))
        .collect();
    samples.sort_by(|a, b| {
        a.0 .0
            .iter()
            .zip(&b.0 .0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let n = samples.len();
    let mut mean = vec![0.0; FEATURE_DIM];
    for (f, _) in &samples {
        for (m, v) in mean.iter_mut().zip(&f.0) {
            *m += v / n as f64;
        }
    }
    let mut scale = vec![0.0; FEATURE_DIM];
    for (f, _) in &samples {
        for ((s, v), m) in scale.iter_mut().zip(&f.0).zip(&mean) {
            *s += (v - m) * (v - m) / n as f64;
        }
    }
    for s in scale.iter_mut() {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let x: Vec<Vec<f64>> = samples
        .iter()
        .map(|(f, _)| f.0.iter().zip(mean.iter().zip(&scale)).map(|(v, (m, s))| (v - m) / s).collect())
        .collect();
    let y: Vec<f64> = samples.iter().map(|s| s.1).collect();

    let gamma = params.gamma.unwrap_or_else(|| {
        let total: f64 = x.iter().flatten().map(|v| v * v).sum();
        let var = total / (n * FEATURE_DIM) as f64;
        1.0 / (FEATURE_DIM as f64 * if var > 0.0 { var } else { 1.0 })
    });

    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let k = rbf(&x[i], &x[j], gamma);
            kernel[i * n + j] = k;
            kernel[j * n + i] = k;
        }
    }
    let c = params.c;
    let alpha = smo(&kernel, &y, c);
    let bias = compute_bias(&kernel, &y, &alpha.0, &alpha.1, c);

    let mut support_vectors = Vec::new();
    let mut dual_coefficients = Vec::new();
    for i in 0..n {
        if alpha.0[i] > 0.0 {
            support_vectors.push(x[i].clone());
            dual_coefficients.push(alpha.0[i] * y[i]);
        }
    }
    Ok(SvmModel {
        support_vectors,
        dual_coefficients,
        bias,
        kernel_gamma: gamma,
        regularization_c: c,
        feature_mean: mean,
        feature_scale: scale,
    })
}

/// Solves the dual; returns `(alpha, gradient)`.
fn smo(kernel: &[f64], y: &[f64], c: f64) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    for _ in 0..MAX_ITERATIONS {
        let mut i_sel = None;
        let mut g_max = f64::NEG_INFINITY;
        let mut g_min = f64::INFINITY;
        let mut j_sel = None;
        for t in 0..n {
            let up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            let v = -y[t] * grad[t];
            if up && v > g_max {
                g_max = v;
                i_sel = Some(t);
            }
            if low && v < g_min {
                g_min = v;
                j_sel = Some(t);
            }
        }
        let (Some(i), Some(j)) = (i_sel, j_sel) else { break };
        if g_max - g_min < KKT_TOLERANCE {
            break;
        }

        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai_old, alpha[j] - aj_old);
        if di == 0.0 && dj == 0.0 {
            break;
        }
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }
    (alpha, grad)
}

/// Offset `b` of `f(x) = sum(alpha_i y_i K(x_i, x)) + b`.
fn compute_bias(_kernel: &[f64], y: &[f64], alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    for t in 0..y.len() {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += yg;
            free_count += 1;
        } else {
            let at_upper = alpha[t] >= c;
            if (at_upper && y[t] < 0.0) || (!at_upper && y[t] > 0.0) {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        }
    }
    let rho = if free_count > 0 {
        free_sum / free_count as f64
    } else if ub.is_finite() && lb.is_finite() {
        0.5 * (ub + lb)
    } else if ub.is_finite() {
        ub
    } else {
        lb
    };
    -rho
}
