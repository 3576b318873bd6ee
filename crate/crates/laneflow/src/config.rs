//! TOML configuration covering every tunable default. Precedence is
//! built-in defaults, then the config file, then command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::{IngestionStrategy, RunConfig, DEFAULT_CHUNK_SIZE};
use crate::datagen::GeneratorConfig;
use crate::error::{Error, Result};
use crate::learner::{ForestConfig, KMeansConfig, TrainConfig};
use crate::mlog::{BrokerConfig, Codec};
use crate::streamproc::{DEFAULT_CONSUMER_BATCH, DEFAULT_FLUSH_THRESHOLD};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataSection,
    pub broker: BrokerSection,
    pub process: ProcessSection,
    pub model: ModelSection,
    pub bench: BenchSection,
    pub serve: ServeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub seed: u64,
    pub missing_prob: f64,
    pub lanes: u32,
}

impl Default for DataSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        DataSection { seed: 42, missing_prob: g.missing_prob, lanes: g.lanes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrokerSection {
    pub partitions: u32,
    pub batch_size: usize,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub queue_capacity: u64,
    /// "block" or "none".
    pub compression: String,
}

impl Default for BrokerSection {
    fn default() -> Self {
        let b = BrokerConfig::default();
        BrokerSection {
            partitions: b.partitions_per_topic,
            batch_size: b.batch_size,
            max_retries: b.max_retries,
            retry_backoff_ms: b.retry_backoff_ms,
            queue_capacity: b.queue_capacity,
            compression: "block".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessSection {
    pub micro_batch: usize,
    pub flush_threshold: usize,
}

impl Default for ProcessSection {
    fn default() -> Self {
        ProcessSection {
            micro_batch: DEFAULT_CONSUMER_BATCH,
            flush_threshold: DEFAULT_FLUSH_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub seed: u64,
    pub clusters: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub kmeans_restarts: usize,
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: usize,
    pub test_fraction: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let k = KMeansConfig::default();
        let f = ForestConfig::default();
        let t = TrainConfig::default();
        ModelSection {
            seed: 7,
            clusters: k.k,
            kmeans_max_iter: k.max_iter,
            kmeans_tol: k.tol,
            kmeans_restarts: k.restarts,
            trees: f.n_trees,
            max_depth: f.max_depth,
            min_leaf: f.min_leaf,
            features_per_split: f.features_per_split,
            test_fraction: t.test_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub chunk_size: u64,
    pub lag_sample_interval_ms: u64,
    pub sample_resources: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            chunk_size: DEFAULT_CHUNK_SIZE,
            lag_sample_interval_ms: 100,
            sample_resources: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub bind: String,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection { bind: "127.0.0.1:8080".into() }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Config> {
        match path {
            Some(p) => Config::load(p),
            None => Ok(Config::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.codec()?;
        if !(0.0..=1.0).contains(&self.data.missing_prob) {
            return Err(Error::Config(format!(
                "data.missing_prob must be in [0, 1], got {}",
                self.data.missing_prob
            )));
        }
        if !(self.model.test_fraction > 0.0 && self.model.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "model.test_fraction must be strictly between 0 and 1, got {}",
                self.model.test_fraction
            )));
        }
        self.bind_addr()?;
        Ok(())
    }

    pub fn codec(&self) -> Result<Codec> {
        match self.broker.compression.as_str() {
            "block" => Ok(Codec::Block),
            "none" => Ok(Codec::None),
            other => Err(Error::Config(format!(
                "broker.compression must be \"block\" or \"none\", got {other:?}"
            ))),
        }
    }

    pub fn bind_addr(&self) -> Result<std::net::SocketAddr> {
        self.serve.bind.parse().map_err(|_| {
            Error::Config(format!("serve.bind is not a socket address: {:?}", self.serve.bind))
        })
    }

    pub fn generator_config(&self, num_records: u64) -> GeneratorConfig {
        GeneratorConfig {
            num_records,
            seed: self.data.seed,
            missing_prob: self.data.missing_prob,
            lanes: self.data.lanes,
            ..GeneratorConfig::default()
        }
    }

    pub fn broker_config(&self) -> Result<BrokerConfig> {
        Ok(BrokerConfig {
            partitions_per_topic: self.broker.partitions,
            batch_size: self.broker.batch_size,
            max_retries: self.broker.max_retries,
            retry_backoff_ms: self.broker.retry_backoff_ms,
            queue_capacity: self.broker.queue_capacity,
            codec: self.codec()?,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            kmeans: KMeansConfig {
                k: self.model.clusters,
                max_iter: self.model.kmeans_max_iter,
                tol: self.model.kmeans_tol,
                restarts: self.model.kmeans_restarts,
            },
            forest: ForestConfig {
                n_trees: self.model.trees,
                max_depth: self.model.max_depth,
                min_leaf: self.model.min_leaf,
                features_per_split: self.model.features_per_split,
            },
            test_fraction: self.model.test_fraction,
        }
    }

    pub fn run_config(&self, total_records: u64, strategy: IngestionStrategy) -> RunConfig {
        RunConfig {
            total_records,
            strategy,
            data_seed: self.data.seed,
            model_seed: self.model.seed,
            partitions: self.broker.partitions,
            micro_batch: self.process.micro_batch,
            flush_threshold: self.process.flush_threshold,
            queue_capacity: self.broker.queue_capacity,
            lag_sample_interval_ms: self.bench.lag_sample_interval_ms,
            sample_resources: self.bench.sample_resources,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_yields_library_defaults() {
        let cfg: Config = toml::from_str("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.broker_config().unwrap(), BrokerConfig::default());
        assert_eq!(cfg.train_config(), TrainConfig::default());
        let g = cfg.generator_config(10);
        assert_eq!(g.missing_prob, GeneratorConfig::default().missing_prob);
        assert_eq!(g.lanes, GeneratorConfig::default().lanes);
        assert_eq!(cfg.bind_addr().unwrap().port(), 8080);
    }

    #[test]
    fn file_values_override_only_what_they_name() {
        let cfg: Config = toml::from_str(
            "[broker]\npartitions = 8\ncompression = \"none\"\n\n[model]\ntrees = 25\n",
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.broker.partitions, 8);
        assert_eq!(cfg.codec().unwrap(), Codec::None);
        assert_eq!(cfg.broker.batch_size, BrokerConfig::default().batch_size);
        assert_eq!(cfg.model.trees, 25);
        assert_eq!(cfg.model.max_depth, ForestConfig::default().max_depth);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("laneflow.toml");
        std::fs::write(&path, "[broker]\npartitons = 8\n").unwrap();
        match Config::load(&path) {
            Err(Error::Config(msg)) => assert!(msg.contains("partitons"), "{msg}"),
            other => panic!("expected a config error, got {other:?}"),
        }

        for bad in [
            "[broker]\ncompression = \"zip\"\n",
            "[data]\nmissing_prob = 1.5\n",
            "[model]\ntest_fraction = 1.0\n",
            "[serve]\nbind = \"not-an-address\"\n",
        ] {
            std::fs::write(&path, bad).unwrap();
            assert!(
                matches!(Config::load(&path), Err(Error::Config(_))),
                "accepted {bad:?}"
            );
        }

        assert!(matches!(
            Config::load(&dir.path().join("missing.toml")),
            Err(Error::Io { .. })
        ));
    }
}
