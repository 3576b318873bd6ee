//! Embedded traffic telemetry pipeline.
//!
//! The crate wires together five stages that normally live in separate
//! services: seeded synthetic telemetry generation ([`datagen`]), an
//! in-process partitioned commit log with producer batching and consumer
//! groups ([`mlog`]), micro-batch stream processing into a CSV-backed
//! warehouse ([`streamproc`]), congestion classification built from
//! clustering-derived labels and a bagged tree ensemble ([`learner`]), and a
//! benchmark harness that measures the whole path ([`bench`]). [`serve`]
//! exposes the trained model and warehouse aggregates over HTTP, and [`cli`]
//! fronts everything as subcommands.
//!
//! The numeric layers in [`learner`] are generic over the scalar type via
//! [`num::Real`]; the pipeline itself runs on `f64`, and the aliases below
//! fix the concrete instantiations used end to end.

pub mod bench;
pub mod cli;
pub mod clock;
pub mod config;
pub mod datagen;
pub mod error;
pub mod learner;
pub mod mlog;
pub mod num;
pub mod serve;
pub mod streamproc;

pub use error::{Error, Result};

// Concrete f64 instantiations of the scalar-generic numeric layers.
/// Feature matrix at the pipeline's working precision.
pub type FeatureMatrix = learner::matrix::Matrix<f64>;
/// Per-feature standardizer at the pipeline's working precision.
pub type Scaler = learner::scale::StandardScaler<f64>;
/// Clustering model at the pipeline's working precision.
pub type Clustering = learner::kmeans::KMeansModel<f64>;
/// Forest classifier at the pipeline's working precision.
pub type Forest = learner::forest::RandomForestModel<f64>;
