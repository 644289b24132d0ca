//! One-hidden-layer ReLU network trained by minibatch gradient descent.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MlError, MlpParams};
use crate::trace::{FeatureVector, FEATURE_COUNT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: usize,
    /// Hidden weights, row-major `hidden x FEATURE_COUNT`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
}

fn mean_and_scale(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

impl Mlp {
    /// Standardization statistics from the data and seeded uniform
    /// (He-style) weights; biases start at zero.
    pub fn init(x: &[FeatureVector], y: &[f64], hidden: usize, seed: u64) -> Self {
        let n = x.len();
        let (x_mean, x_scale) = (0..FEATURE_COUNT)
            .map(|j| mean_and_scale(x.iter().map(move |v| v.0[j]), n))
            .unzip();
        let (y_mean, y_scale) = mean_and_scale(y.iter().copied(), n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = (6.0 / FEATURE_COUNT as f64).sqrt();
        let a2 = (6.0 / hidden as f64).sqrt();
        let w1 = (0..hidden * FEATURE_COUNT)
            .map(|_| rng.random_range(-a1..a1))
            .collect();
        let w2 = (0..hidden).map(|_| rng.random_range(-a2..a2)).collect();
        Mlp {
            hidden,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: 0.0,
            x_mean,
            x_scale,
            y_mean,
            y_scale,
        }
    }

    pub fn standardize(&self, x: &FeatureVector) -> Vec<f64> {
        (0..FEATURE_COUNT)
            .map(|j| (x.0[j] - self.x_mean[j]) / self.x_scale[j])
            .collect()
    }

    pub fn standardize_target(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }

    fn hidden_layer(&self, z: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|k| {
                let row = &self.w1[k * FEATURE_COUNT..(k + 1) * FEATURE_COUNT];
                let a = self.b1[k] + row.iter().zip(z).map(|(w, v)| w * v).sum::<f64>();
                a.max(0.0)
            })
            .collect()
    }

    /// Network output in standardized target units.
    pub fn forward(&self, z: &[f64]) -> f64 {
        let h = self.hidden_layer(z);
        self.b2 + self.w2.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = (0..FEATURE_COUNT)
            .map(|j| (x[j] - self.x_mean[j]) / self.x_scale[j])
            .collect();
        self.y_mean + self.y_scale * self.forward(&z)
    }

    /// Mean squared error on standardized data plus `lambda/2` times the
    /// squared weights (biases are not decayed).
    pub fn objective(&self, z: &[Vec<f64>], t: &[f64], lambda: f64) -> f64 {
        let mse = z
            .iter()
            .zip(t)
            .map(|(zi, ti)| (self.forward(zi) - ti).powi(2))
            .sum::<f64>()
            / z.len() as f64;
        let decay: f64 = self.w1.iter().chain(&self.w2).map(|w| w * w).sum();
        mse + 0.5 * lambda * decay
    }

    /// Gradient of [`Mlp::objective`] by backpropagation, in
    /// [`Mlp::params`] order.
    pub fn gradient(&self, z: &[Vec<f64>], t: &[f64], lambda: f64) -> Vec<f64> {
        let nh = self.hidden;
        let mut gw1 = vec![0.0; nh * FEATURE_COUNT];
        let mut gb1 = vec![0.0; nh];
        let mut gw2 = vec![0.0; nh];
        let mut gb2 = 0.0;
        let scale = 2.0 / z.len() as f64;
        for (zi, ti) in z.iter().zip(t) {
            let h = self.hidden_layer(zi);
            let out = self.b2 + self.w2.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>();
            let d_out = scale * (out - ti);
            gb2 += d_out;
            for k in 0..nh {
                gw2[k] += d_out * h[k];
                if h[k] > 0.0 {
                    let d_h = d_out * self.w2[k];
                    gb1[k] += d_h;
                    let row = &mut gw1[k * FEATURE_COUNT..(k + 1) * FEATURE_COUNT];
                    for (g, v) in row.iter_mut().zip(zi) {
                        *g += d_h * v;
                    }
                }
            }
        }
        for (g, w) in gw1.iter_mut().zip(&self.w1) {
            *g += lambda * w;
        }
        for (g, w) in gw2.iter_mut().zip(&self.w2) {
            *g += lambda * w;
        }
        let mut out = gw1;
        out.extend(gb1);
        out.extend(gw2);
        out.push(gb2);
        out
    }

    /// Trainable parameters flattened as `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.w1.clone();
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let nh = self.hidden;
        let (w1, rest) = p.split_at(nh * FEATURE_COUNT);
        let (b1, rest) = rest.split_at(nh);
        let (w2, rest) = rest.split_at(nh);
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = rest[0];
    }
}

/// Trains a network and returns it with the training objective before the
/// first epoch and after each epoch.
pub fn fit_mlp(
    x: &[FeatureVector],
    y: &[f64],
    p: &MlpParams,
    seed: u64,
) -> Result<(Mlp, Vec<f64>), MlError> {
    super::linear::check_shape(x, y, 1)?;
    p.validate()?;
    let mut net = Mlp::init(x, y, p.hidden, seed);
    let z: Vec<Vec<f64>> = x.iter().map(|v| net.standardize(v)).collect();
    let t: Vec<f64> = y.iter().map(|&v| net.standardize_target(v)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let mut history = vec![net.objective(&z, &t, p.lambda)];
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut params = net.params();
    for _ in 0..p.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(p.batch) {
            let bz: Vec<Vec<f64>> = batch.iter().map(|&i| z[i].clone()).collect();
            let bt: Vec<f64> = batch.iter().map(|&i| t[i]).collect();
            let g = net.gradient(&bz, &bt, p.lambda);
            for (w, gi) in params.iter_mut().zip(&g) {
                *w -= p.alpha * gi;
            }
            net.set_params(&params);
        }
        history.push(net.objective(&z, &t, p.lambda));
    }
    Ok((net, history))
}
