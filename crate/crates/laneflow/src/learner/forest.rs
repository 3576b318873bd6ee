//! Random forest of CART trees with Gini splits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

use super::matrix::Matrix;
use super::CongestionLabel;

const N_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 16,
            min_leaf: 1,
            features_per_split: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node<F> {
    Leaf {
        label: CongestionLabel,
    },
    Split {
        feature: usize,
        threshold: F,
        left: usize,
        right: usize,
    },
}

/// One CART tree. `node 0` is the root; rows with `x[feature] <= threshold`
/// descend left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree<F> {
    pub nodes: Vec<Node<F>>,
    /// Unnormalized Gini impurity decrease per feature.
    pub importance_raw: Vec<f64>,
}

impl<F: Real> DecisionTree<F> {
    pub fn predict(&self, row: &[F]) -> CongestionLabel {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { label } => return *label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel<F> {
    pub trees: Vec<DecisionTree<F>>,
    pub n_features: usize,
    pub config: ForestConfig,
}

impl<F: Real> RandomForestModel<F> {
    /// Plurality vote over the trees; ties resolve to the more congested
    /// label.
    pub fn predict(&self, row: &[F]) -> CongestionLabel {
        let mut votes = [0u32; N_CLASSES];
        for t in &self.trees {
            votes[t.predict(row).index()] += 1;
        }
        majority(&votes.map(|v| v as usize))
    }

    pub fn predict_matrix(&self, x: &Matrix<F>) -> Vec<CongestionLabel> {
        x.iter_rows().map(|r| self.predict(r)).collect()
    }

    /// Per-class share of tree votes for one row; sums to 1.
    pub fn vote_fractions(&self, row: &[F]) -> [f64; N_CLASSES] {
        let mut votes = [0u32; N_CLASSES];
        for t in &self.trees {
            votes[t.predict(row).index()] += 1;
        }
        let total = self.trees.len().max(1) as f64;
        votes.map(|v| v as f64 / total)
    }

    /// Mean per-tree normalized Gini decrease, renormalized to sum 1. A
    /// forest that never splits reports uniform importances.
    pub fn feature_importances(&self) -> Vec<f64> {
        let d = self.n_features;
        let mut acc = vec![0.0; d];
        for t in &self.trees {
            let total: f64 = t.importance_raw.iter().sum();
            if total > 0.0 {
                for (a, r) in acc.iter_mut().zip(&t.importance_raw) {
                    *a += r / total;
                }
            }
        }
        let total: f64 = acc.iter().sum();
        if total <= 0.0 {
            return vec![1.0 / d as f64; d];
        }
        for a in &mut acc {
            *a /= total;
        }
        acc
    }
}

/// Majority class index with ties resolved toward the higher (more
/// congested) label.
fn majority(counts: &[usize; N_CLASSES]) -> CongestionLabel {
    let mut best = 0;
    for c in 1..N_CLASSES {
        if counts[c] >= counts[best] {
            best = c;
        }
    }
    CongestionLabel::from_index(best).expect("class index in range")
}

/// RNG for one tree; every tree owns an independent stream, so training
/// parallelism cannot affect the result.
pub fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Size-n sample with replacement; consumes exactly n draws.
pub fn bootstrap_indices(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Trains the forest: one bootstrap sample and one CART tree per stream,
/// trees built in parallel.
pub fn fit<F: Real>(
    x: &Matrix<F>,
    y: &[CongestionLabel],
    cfg: &ForestConfig,
    seed: u64,
) -> Result<RandomForestModel<F>> {
    if x.n_rows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.n_rows(),
            right: y.len(),
        });
    }
    if x.n_rows() < 10 {
        return Err(Error::InsufficientData {
            need: 10,
            got: x.n_rows(),
        });
    }
    if cfg.n_trees < 1 || cfg.min_leaf < 1 || cfg.features_per_split < 1 {
        return Err(Error::Config(
            "forest needs n_trees, min_leaf and features_per_split all at least 1".into(),
        ));
    }
    let trees: Vec<DecisionTree<F>> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let idx = bootstrap_indices(&mut rng, x.n_rows());
            build_tree(x, y, idx, cfg, &mut rng)
        })
        .collect();
    Ok(RandomForestModel {
        trees,
        n_features: x.n_cols(),
        config: cfg.clone(),
    })
}

struct TreeBuilder<'a, F> {
    x: &'a Matrix<F>,
    y: &'a [CongestionLabel],
    cfg: &'a ForestConfig,
    n_total: usize,
    nodes: Vec<Node<F>>,
    importance: Vec<f64>,
}

fn build_tree<F: Real>(
    x: &Matrix<F>,
    y: &[CongestionLabel],
    bootstrap: Vec<usize>,
    cfg: &ForestConfig,
    rng: &mut ChaCha8Rng,
) -> DecisionTree<F> {
    let mut b = TreeBuilder {
        x,
        y,
        cfg,
        n_total: bootstrap.len(),
        nodes: Vec::new(),
        importance: vec![0.0; x.n_cols()],
    };
    b.grow(bootstrap, 0, rng);
    DecisionTree {
        nodes: b.nodes,
        importance_raw: b.importance,
    }
}

fn gini(counts: &[usize; N_CLASSES], n: usize) -> f64 {
    let n = n as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            p * p
        })
        .sum::<f64>()
}

impl<F: Real> TreeBuilder<'_, F> {
    fn class_counts(&self, samples: &[usize]) -> [usize; N_CLASSES] {
        let mut counts = [0usize; N_CLASSES];
        for &i in samples {
            counts[self.y[i].index()] += 1;
        }
        counts
    }

    /// Grows one node and returns its index.
    fn grow(&mut self, samples: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.class_counts(&samples);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let splittable = samples.len() >= 2 * self.cfg.min_leaf;
        let split = if depth < self.cfg.max_depth && !pure && splittable {
            self.best_split(&samples, &counts, rng)
        } else {
            None
        };

        match split {
            None => {
                let at = self.nodes.len();
                self.nodes.push(Node::Leaf {
                    label: majority(&counts),
                });
                at
            }
            Some((feature, threshold, decrease)) => {
                self.importance[feature] +=
                    decrease * samples.len() as f64 / self.n_total as f64;
                let (left_s, right_s): (Vec<usize>, Vec<usize>) = samples
                    .into_iter()
                    .partition(|&i| self.x.get(i, feature) <= threshold);
                let at = self.nodes.len();
                self.nodes.push(Node::Leaf {
                    label: CongestionLabel::Low,
                });
                let left = self.grow(left_s, depth + 1, rng);
                let right = self.grow(right_s, depth + 1, rng);
                self.nodes[at] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                at
            }
        }
    }

    /// Gini-minimal (feature, threshold) over the drawn feature subset, or
    /// None when no boundary satisfies the leaf minimum. The returned
    /// decrease is the node impurity minus the weighted child impurity.
    fn best_split(
        &self,
        samples: &[usize],
        counts: &[usize; N_CLASSES],
        rng: &mut ChaCha8Rng,
    ) -> Option<(usize, F, f64)> {
        let d = self.x.n_cols();
        let m = self.cfg.features_per_split.min(d);
        let n = samples.len();
        let node_gini = gini(counts, n);

        let mut best: Option<(usize, F, f64)> = None;
        let mut best_score = f64::INFINITY;
        // Candidate features keep their drawn order; determinism depends
        // on evaluating them exactly as sampled.
        for f in rand::seq::index::sample(rng, d, m).iter() {
            let mut vals: Vec<(F, usize)> = samples
                .iter()
                .map(|&i| (self.x.get(i, f), self.y[i].index()))
                .collect();
            vals.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite feature values"));

            let mut left = [0usize; N_CLASSES];
            let mut right = *counts;
            for i in 1..n {
                let moved = vals[i - 1].1;
                left[moved] += 1;
                right[moved] -= 1;
                if vals[i].0 <= vals[i - 1].0 {
                    continue;
                }
                if i < self.cfg.min_leaf || n - i < self.cfg.min_leaf {
                    continue;
                }
                let score = (i as f64 * gini(&left, i)
                    + (n - i) as f64 * gini(&right, n - i))
                    / n as f64;
                if score < best_score {
                    let two = F::from_f64_real(2.0);
                    let mut threshold = (vals[i - 1].0 + vals[i].0) / two;
                    // Midpoints can round up to the right value; pin the
                    // boundary so the left side keeps exactly i rows.
                    if threshold >= vals[i].0 {
                        threshold = vals[i - 1].0;
                    }
                    best_score = score;
                    best = Some((f, threshold, node_gini - score));
                }
            }
        }
        best
    }
}
