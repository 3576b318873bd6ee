//! Full training flow: cluster-derived labels, stratified split, forest
//! fit and held-out evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::streamproc::FeatureVector;

use super::forest::{self, ForestConfig, RandomForestModel};
use super::kmeans::{KMeansConfig, Labeler};
use super::matrix::Matrix;
use super::metrics::{evaluate, EvalReport};
use super::CongestionLabel;

/// Stream base keeping split shuffles disjoint from tree and restart draws.
const STREAM_SPLIT_BASE: u64 = 2 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kmeans: KMeansConfig,
    pub forest: ForestConfig,
    /// Held-out fraction per class; the rest trains the forest.
    pub test_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kmeans: KMeansConfig::default(),
            forest: ForestConfig::default(),
            test_fraction: 0.2,
        }
    }
}

/// RNG shuffling one class's indices during the split.
pub fn split_rng(seed: u64, class: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SPLIT_BASE + class as u64);
    rng
}

/// Splits indices into (train, test) per-class: each class present in `y`
/// contributes `round(fraction * count)` test rows, clamped so both sides
/// keep at least one row. Classes need at least 2 members.
pub fn stratified_split(
    y: &[CongestionLabel],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must be strictly between 0 and 1, got {test_fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in CongestionLabel::ALL {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == label).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::InsufficientData {
                need: 2,
                got: idx.len(),
            });
        }
        let n_test = ((test_fraction * idx.len() as f64).round() as usize)
            .clamp(1, idx.len() - 1);
        idx.shuffle(&mut split_rng(seed, label.index()));
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Everything needed to label new feature vectors, persisted as one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub labeler: Labeler,
    pub forest: RandomForestModel<f64>,
    pub importances: Vec<f64>,
    pub model_seed: u64,
    pub config: TrainConfig,
}

impl TrainedModel {
    pub fn predict(&self, f: &FeatureVector) -> CongestionLabel {
        self.forest.predict(&f.0)
    }

    pub fn predict_all(&self, features: &[FeatureVector]) -> Vec<CongestionLabel> {
        features.iter().map(|f| self.predict(f)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub report: EvalReport,
    pub train_rows: usize,
    pub test_rows: usize,
}

/// Clusters the features into congestion labels, then fits and scores the
/// forest on a stratified split of those labels. Bit-reproducible per
/// (features, seed, config).
pub fn train_and_evaluate(
    features: &[FeatureVector],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let labeler = Labeler::fit(features, &cfg.kmeans, seed)?;
    let x = Matrix::from_features(features);
    let z = labeler.scaler.transform(&x)?;
    let y: Vec<CongestionLabel> = labeler
        .model
        .assign(&z)
        .into_iter()
        .map(|c| labeler.cluster_labels[c])
        .collect();

    let (train_idx, test_idx) = stratified_split(&y, cfg.test_fraction, seed)?;
    let y_train: Vec<CongestionLabel> = train_idx.iter().map(|&i| y[i]).collect();
    let forest_model = forest::fit(&x.select_rows(&train_idx), &y_train, &cfg.forest, seed)?;

    let y_test: Vec<CongestionLabel> = test_idx.iter().map(|&i| y[i]).collect();
    let pred = forest_model.predict_matrix(&x.select_rows(&test_idx));
    let report = evaluate(&pred, &y_test)?;

    let importances = forest_model.feature_importances();
    Ok(TrainOutcome {
        model: TrainedModel {
            labeler,
            forest: forest_model,
            importances,
            model_seed: seed,
            config: cfg.clone(),
        },
        report,
        train_rows: train_idx.len(),
        test_rows: test_idx.len(),
    })
}
