//! Bagged regression trees with squared-error splits.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ForestParams, MlError};
use crate::par::Execution;
use crate::trace::{FeatureVector, FEATURE_COUNT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// One tree as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Mean of the per-tree predictions, summed in tree order.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Seed of tree `index`: the master seed's ChaCha stream number `index`, so
/// every tree draws from an independent, schedule-free sequence.
fn tree_rng(master_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng
}

pub fn fit_forest(
    x: &[FeatureVector],
    y: &[f64],
    p: &ForestParams,
    master_seed: u64,
    exec: Execution,
) -> Result<Forest, MlError> {
    super::linear::check_shape(x, y, p.min_split)?;
    p.validate()?;
    let trees = exec.map_range(p.n_trees, |i| {
        let mut rng = tree_rng(master_seed, i);
        let n = x.len();
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        grow(x, y, rows, p, &mut rng)
    });
    Ok(Forest { trees })
}

struct Builder<'a> {
    x: &'a [FeatureVector],
    y: &'a [f64],
    p: &'a ForestParams,
    n_features: usize,
    nodes: Vec<Node>,
}

fn grow(
    x: &[FeatureVector],
    y: &[f64],
    rows: Vec<usize>,
    p: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let n_features =
        ((p.max_features * FEATURE_COUNT as f64).floor() as usize).clamp(1, FEATURE_COUNT);
    let mut b = Builder {
        x,
        y,
        p,
        n_features,
        nodes: Vec::new(),
    };
    b.node(rows, 0, rng);
    Tree { nodes: b.nodes }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    split_at: usize,
}

impl Builder<'_> {
    fn node(&mut self, mut rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        let mean = rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64;
        self.nodes.push(Node::Leaf { value: mean });
        if depth >= self.p.max_depth || rows.len() < self.p.min_split {
            return id;
        }
        let Some(best) = self.best_split(&mut rows, rng) else {
            return id;
        };
        let f = best.feature;
        rows.sort_by(|&a, &b| self.x[a].0[f].total_cmp(&self.x[b].0[f]).then(a.cmp(&b)));
        let right_rows = rows.split_off(best.split_at);
        let left = self.node(rows, depth + 1, rng);
        let right = self.node(right_rows, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: f,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&self, rows: &mut [usize], rng: &mut ChaCha8Rng) -> Option<Candidate> {
        let n = rows.len();
        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let total_sq: f64 = rows.iter().map(|&r| self.y[r] * self.y[r]).sum();
        let parent_sse = total_sq - total * total / n as f64;
        if parent_sse <= 1e-12 * total_sq.max(1.0) {
            return None;
        }
        let mut features: Vec<usize> = if self.n_features == FEATURE_COUNT {
            (0..FEATURE_COUNT).collect()
        } else {
            sample_indices(rng, FEATURE_COUNT, self.n_features).into_vec()
        };
        features.sort_unstable();

        let min_leaf = self.p.min_leaf.max(1);
        let mut best: Option<Candidate> = None;
        for f in features {
            rows.sort_by(|&a, &b| self.x[a].0[f].total_cmp(&self.x[b].0[f]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for i in 0..n - 1 {
                let yi = self.y[rows[i]];
                left_sum += yi;
                left_sq += yi * yi;
                let nl = i + 1;
                let nr = n - nl;
                let here = self.x[rows[i]].0[f];
                let next = self.x[rows[i + 1]].0[f];
                if here == next || nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let right_sq = total_sq - left_sq;
                let sse = (left_sq - left_sum * left_sum / nl as f64)
                    + (right_sq - right_sum * right_sum / nr as f64);
                let gain = parent_sse - sse;
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = here + (next - here) / 2.0;
                    if threshold >= next {
                        threshold = here;
                    }
                    best = Some(Candidate {
                        feature: f,
                        threshold,
                        gain,
                        split_at: nl,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data(n: usize) -> (Vec<FeatureVector>, Vec<f64>) {
        let x: Vec<FeatureVector> = (0..n)
            .map(|i| {
                let mut v = FeatureVector::zeros();
                v.0[0] = i as f64;
                v.0[5] = (i * 7 % 11) as f64;
                v
            })
            .collect();
        let y = x.iter().map(|v| 100.0 + 3.0 * v.0[0] + v.0[5]).collect();
        (x, y)
    }

    #[test]
    fn near_interpolation_of_training_points() {
        let (x, y) = line_data(20);
        let f = fit_forest(&x, &y, &ForestParams::default(), 11, Execution::Sequential).unwrap();
        assert_eq!(f.trees.len(), 100);
        for (xi, yi) in x.iter().zip(&y) {
            let p = f.predict(&xi.0);
            assert!((p - yi).abs() / yi < 0.05, "{p} vs {yi}");
        }
    }

    #[test]
    fn constant_labels() {
        let (x, _) = line_data(15);
        let y = vec![42.0; 15];
        let f = fit_forest(&x, &y, &ForestParams::default(), 1, Execution::Parallel).unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(f.predict(&x[3].0), 42.0);
        assert_eq!(f.predict(&FeatureVector::zeros().0), 42.0);
    }

    #[test]
    fn deterministic_and_schedule_independent() {
        let (x, y) = line_data(30);
        let p = ForestParams {
            max_features: 0.3,
            ..ForestParams::default()
        };
        let a = fit_forest(&x, &y, &p, 9, Execution::Parallel).unwrap();
        let b = fit_forest(&x, &y, &p, 9, Execution::Parallel).unwrap();
        let c = fit_forest(&x, &y, &p, 9, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        let d = fit_forest(&x, &y, &p, 10, Execution::Sequential).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn prediction_is_mean_of_trees() {
        let (x, y) = line_data(25);
        let f = fit_forest(&x, &y, &ForestParams::default(), 2, Execution::Parallel).unwrap();
        let q = &x[7].0;
        let mean: f64 = f.trees.iter().map(|t| t.predict(q)).sum::<f64>() / f.trees.len() as f64;
        assert_eq!(f.predict(q), mean);
    }

    #[test]
    fn limits_are_respected() {
        let (x, y) = line_data(40);
        let p = ForestParams {
            n_trees: 5,
            max_depth: 2,
            min_leaf: 3,
            ..ForestParams::default()
        };
        let f = fit_forest(&x, &y, &p, 0, Execution::Sequential).unwrap();
        for t in &f.trees {
            assert!(t.depth() <= 2);
        }
        let few = fit_forest(
            &x[..1],
            &y[..1],
            &ForestParams::default(),
            0,
            Execution::Sequential,
        );
        assert!(matches!(few, Err(MlError::EmptyDataset { .. })));
    }
}
