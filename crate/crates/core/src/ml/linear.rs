//! Least-squares and Huber linear regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{HuberParams, MlError};
use crate::trace::{FeatureVector, FEATURE_COUNT};

/// Damping added to the standardized normal equations so rank-deficient
/// designs still have a unique (minimum-norm) solution.
const LS_DAMPING: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

fn design(x: &[FeatureVector]) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), FEATURE_COUNT, |i, j| x[i].0[j])
}

/// Minimizes `sum_i obs_w[i] * r_i^2 + sum_j penalty(j, s_j) * w_j^2` in
/// coordinates standardized by the weighted column spread `s_j`. The
/// intercept is unpenalized. Constant columns get weight zero.
fn weighted_ridge(
    x: &DMatrix<f64>,
    y: &[f64],
    obs_w: &[f64],
    penalty: impl Fn(f64) -> f64,
) -> LinearFit {
    let (n, p) = x.shape();
    let total: f64 = obs_w.iter().sum();
    let y_mean = y.iter().zip(obs_w).map(|(v, w)| v * w).sum::<f64>() / total;
    let mut means = vec![0.0; p];
    let mut scales = vec![0.0; p];
    for j in 0..p {
        let col = x.column(j);
        let m = col.iter().zip(obs_w).map(|(v, w)| v * w).sum::<f64>() / total;
        let var = col
            .iter()
            .zip(obs_w)
            .map(|(v, w)| w * (v - m) * (v - m))
            .sum::<f64>()
            / total;
        means[j] = m;
        scales[j] = var.sqrt();
    }
    let active: Vec<usize> = (0..p)
        .filter(|&j| scales[j] > 1e-12 * means[j].abs().max(1.0))
        .collect();

    let mut weights = vec![0.0; p];
    if !active.is_empty() {
        let k = active.len();
        let mut a = DMatrix::zeros(n + k, k);
        let mut b = DVector::zeros(n + k);
        for i in 0..n {
            let sw = obs_w[i].sqrt();
            for (c, &j) in active.iter().enumerate() {
                a[(i, c)] = sw * (x[(i, j)] - means[j]) / scales[j];
            }
            b[i] = sw * (y[i] - y_mean);
        }
        for (c, &j) in active.iter().enumerate() {
            a[(n + c, c)] = penalty(scales[j]).sqrt();
        }
        let svd = a.svd(true, true);
        let cutoff = svd.singular_values.max() * 1e-14;
        let z = svd
            .solve(&b, cutoff)
            .expect("SVD computed with both factors");
        for (c, &j) in active.iter().enumerate() {
            weights[j] = z[c] / scales[j];
        }
    }
    let intercept = y_mean - weights.iter().zip(&means).map(|(w, m)| w * m).sum::<f64>();
    LinearFit { weights, intercept }
}

/// Ordinary least squares with an intercept.
pub fn fit_least_squares(x: &[FeatureVector], y: &[f64]) -> Result<LinearFit, MlError> {
    check_shape(x, y, 2)?;
    let ones = vec![1.0; y.len()];
    Ok(weighted_ridge(&design(x), y, &ones, |_| LS_DAMPING))
}

/// Huber regression on raw residuals with an L2 penalty on the weights
/// (scaled against the summed, not averaged, loss),
/// minimized by iteratively reweighted least squares from a zero start.
/// Each step minimizes a quadratic majorizer of the objective, so the loss
/// never increases.
pub fn fit_huber(x: &[FeatureVector], y: &[f64], h: &HuberParams) -> Result<LinearFit, MlError> {
    check_shape(x, y, 2)?;
    h.validate()?;
    let xm = design(x);
    let mut fit = LinearFit {
        weights: vec![0.0; FEATURE_COUNT],
        intercept: 0.0,
    };
    // Objective: sum huber(r_i) + l2 |w|^2, the penalty weighed against the
    // summed loss. Doubling gives sum w_i r_i^2 + 2 l2 |w|^2 for the
    // majorizer.
    let ridge = 2.0 * h.l2;
    for _ in 0..h.max_iter {
        let obs_w: Vec<f64> = x
            .iter()
            .zip(y)
            .map(|(xi, yi)| {
                let r = (yi - fit.predict(&xi.0)).abs();
                if r <= h.epsilon {
                    1.0
                } else {
                    h.epsilon / r
                }
            })
            .collect();
        let next = weighted_ridge(&xm, y, &obs_w, |s| ridge / (s * s));
        let shift = next
            .weights
            .iter()
            .zip(&fit.weights)
            .chain(std::iter::once((&next.intercept, &fit.intercept)))
            .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
            .fold(0.0, f64::max);
        fit = next;
        if shift <= 1e-13 {
            break;
        }
    }
    Ok(fit)
}

/// Mean Huber loss plus `l2 / n` times the squared weights: the quantity
/// [`fit_huber`] minimizes, on the mean-loss scale.
pub fn huber_objective(fit: &LinearFit, x: &[FeatureVector], y: &[f64], h: &HuberParams) -> f64 {
    let n = y.len() as f64;
    let loss = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| super::metrics::huber(yi - fit.predict(&xi.0), h.epsilon))
        .sum::<f64>()
        / n;
    loss + h.l2 / n * fit.weights.iter().map(|w| w * w).sum::<f64>()
}

pub(crate) fn check_shape(x: &[FeatureVector], y: &[f64], min: usize) -> Result<(), MlError> {
    if x.len() != y.len() {
        return Err(MlError::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < min.max(1) {
        return Err(MlError::EmptyDataset {
            needed: min.max(1),
            found: x.len(),
        });
    }
    Ok(())
}
