//! Congestion modeling: standardization, KMeans label generation, a random
//! forest classifier, and the evaluation suite used across the pipeline.

pub mod artifact;
pub mod forest;
pub mod kmeans;
pub mod matrix;
pub mod metrics;
pub mod scale;
pub mod train;

pub use forest::{ForestConfig, RandomForestModel};
pub use kmeans::{KMeansConfig, KMeansModel, Labeler};
pub use matrix::Matrix;
pub use metrics::{evaluate, EvalReport};
pub use scale::StandardScaler;
pub use train::{train_and_evaluate, TrainConfig, TrainedModel};

use serde::{Deserialize, Serialize};

/// Congestion severity. The variant order is the total order used everywhere:
/// `Low < Medium < High`, so adjacency in confusion matrices is meaningful
/// and "more congested" ties resolve toward `High`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum CongestionLabel {
    Low,
    Medium,
    High,
}

impl CongestionLabel {
    pub const ALL: [CongestionLabel; 3] =
        [CongestionLabel::Low, CongestionLabel::Medium, CongestionLabel::High];

    /// Dense index: Low = 0, Medium = 1, High = 2.
    pub fn index(self) -> usize {
        match self {
            CongestionLabel::Low => 0,
            CongestionLabel::Medium => 1,
            CongestionLabel::High => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<CongestionLabel> {
        CongestionLabel::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CongestionLabel::Low => "Low",
            CongestionLabel::Medium => "Medium",
            CongestionLabel::High => "High",
        }
    }
}

impl std::fmt::Display for CongestionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
