//! Command-line front door: every pipeline stage as a subcommand, wired
//! through the shared TOML configuration.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::bench::{self, IngestionStrategy};
use crate::config::Config;
use crate::datagen::{self, inject_noise};
use crate::error::{Error, Result};
use crate::learner::kmeans::Labeler;
use crate::learner::{artifact, metrics, train_and_evaluate};
use crate::mlog::{wire, Broker, RAW_TOPIC};
use crate::serve::{AppState, RoadDirectory};
use crate::streamproc::{clean, featurize, FeatureVector, FEATURE_NAMES};

#[derive(Debug, Parser)]
#[command(
    name = "laneflow",
    version,
    about = "Traffic telemetry pipeline: generate, ingest, process, train, benchmark, serve"
)]
pub struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RunStrategy {
    Full,
    Chunked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchMode {
    Full,
    Chunked,
    /// Run both strategies over the same seed and compare.
    Compare,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write seeded synthetic telemetry to a CSV file.
    Generate {
        #[arg(long)]
        records: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        missing_prob: Option<f64>,
        /// Corrupt this fraction of records after generation.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Push a CSV through the embedded log and report broker counters.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        partitions: Option<u32>,
    },
    /// Run a CSV through the full pipeline into a warehouse directory.
    Process {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        warehouse: PathBuf,
        /// Label with a saved model instead of clustering the input.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        model_seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = RunStrategy::Full)]
        strategy: RunStrategy,
        #[arg(long)]
        chunk_size: Option<u64>,
        /// Write the run metrics as CSV here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fit the clustering labeler and forest on a CSV, save the model.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model_seed: Option<u64>,
        /// Write the held-out evaluation as CSV here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a saved model's forest against its own labeler on a CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Write the evaluation as CSV here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Seeded ingestion stress runs with text and CSV reports.
    Bench {
        #[arg(long)]
        records: u64,
        #[arg(long, value_enum, default_value_t = BenchMode::Full)]
        strategy: BenchMode,
        #[arg(long)]
        chunk_size: Option<u64>,
        /// Data seed for generation.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        model_seed: Option<u64>,
        /// Write the metrics (or comparison) CSV here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Keep the warehouse here instead of a scratch directory.
        #[arg(long)]
        warehouse: Option<PathBuf>,
    },
    /// Serve predictions, summaries and metrics over HTTP.
    Serve {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        warehouse: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
    },
}

/// Maps each error class to a distinct exit code; 2 is left to usage
/// errors and 0 to success.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 3,
        Error::Io { .. } | Error::Parse { .. } | Error::Envelope(_) => 4,
        Error::UnknownTopic(_)
        | Error::TopicExists(_)
        | Error::UnknownPartition { .. }
        | Error::UnknownGroup { .. }
        | Error::Transient { .. }
        | Error::Backpressure { .. }
        | Error::OffsetBeyondWatermark { .. }
        | Error::OffsetRegression { .. }
        | Error::Run(_) => 5,
        Error::InsufficientData { .. }
        | Error::DegenerateClustering
        | Error::LengthMismatch { .. }
        | Error::Artifact(_)
        | Error::NoModel => 6,
        Error::Invariant(_) => 7,
    }
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn features_of(records: &[datagen::TrafficRecordRaw]) -> Vec<FeatureVector> {
    records.iter().map(|r| featurize(&clean(r, 0))).collect()
}

fn write_report(path: Option<&Path>, content: &str) -> Result<()> {
    if let Some(path) = path {
        std::fs::write(path, content).map_err(|e| Error::io(path, e))?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let config = Config::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Generate { records, seed, out, missing_prob, noise } => {
            let mut gen = config.generator_config(records);
            if let Some(seed) = seed {
                gen.seed = seed;
            }
            if let Some(p) = missing_prob {
                gen.missing_prob = p;
            }
            let mut data = datagen::generate(&gen)?;
            if let Some(intensity) = noise {
                data = inject_noise(&data, intensity, gen.seed)?;
            }
            let written = datagen::write_csv(&data, &out)?;
            println!("wrote {written} records to {}", out.display());
            Ok(())
        }
        Command::Ingest { input, partitions } => {
            let records = datagen::read_csv(&input)?;
            if records.is_empty() {
                return Err(Error::Config(format!("{} holds no records", input.display())));
            }
            let mut broker_cfg = config.broker_config()?;
            if let Some(p) = partitions {
                broker_cfg.partitions_per_topic = p;
            }
            let partitions = broker_cfg.partitions_per_topic;
            let broker = Broker::new(broker_cfg);
            broker.create_topic(RAW_TOPIC, partitions)?;
            let mut producer = broker.producer(RAW_TOPIC)?;
            for rec in &records {
                producer.produce(&wire::routing_key(rec), wire::encode(rec))?;
            }
            producer.flush()?;
            println!("ingested {} records into '{}'", records.len(), RAW_TOPIC);
            for (p, w) in broker.watermarks(RAW_TOPIC)?.iter().enumerate() {
                println!("  partition {p}: {w} records");
            }
            println!("  backlog: {}", broker.total_backlog(RAW_TOPIC)?);
            Ok(())
        }
        Command::Process { input, warehouse, model, model_seed, strategy, chunk_size, report } => {
            let records = datagen::read_csv(&input)?;
            let labeler = match model {
                Some(path) => artifact::load(&path)?.labeler,
                None => {
                    let train = config.train_config();
                    let seed = model_seed.unwrap_or(config.model.seed);
                    Labeler::fit(&features_of(&records), &train.kmeans, seed)?
                }
            };
            let strategy = match strategy {
                RunStrategy::Full => IngestionStrategy::Full,
                RunStrategy::Chunked => {
                    IngestionStrategy::Chunked(chunk_size.unwrap_or(config.bench.chunk_size))
                }
            };
            let run_cfg = config.run_config(records.len() as u64, strategy);
            let metrics = bench::run_pipeline_over(&records, &labeler, &run_cfg, &warehouse)?;
            print!("{}", bench::report_text(&metrics));
            write_report(report.as_deref(), &bench::metrics_csv(&metrics))
        }
        Command::Train { input, out, model_seed, report } => {
            let records = datagen::read_csv(&input)?;
            let features = features_of(&records);
            let seed = model_seed.unwrap_or(config.model.seed);
            let outcome = train_and_evaluate(&features, &config.train_config(), seed)?;
            println!(
                "trained on {} rows, held out {}",
                outcome.train_rows, outcome.test_rows
            );
            print!("{}", metrics::report_text(&outcome.report));
            println!("feature importances:");
            for (name, value) in FEATURE_NAMES.iter().zip(&outcome.model.importances) {
                println!("  {name}: {value:.4}");
            }
            artifact::save(&outcome.model, &out)?;
            println!("model saved to {}", out.display());
            write_report(report.as_deref(), &metrics::report_csv(&outcome.report))
        }
        Command::Evaluate { model, input, report } => {
            let model = artifact::load(&model)?;
            let features = features_of(&datagen::read_csv(&input)?);
            let truth = model.labeler.label_all(&features);
            let pred: Vec<_> = features.iter().map(|f| model.predict(f)).collect();
            let eval = metrics::evaluate(&pred, &truth)?;
            print!("{}", metrics::report_text(&eval));
            write_report(report.as_deref(), &metrics::report_csv(&eval))
        }
        Command::Bench { records, strategy, chunk_size, seed, model_seed, report, warehouse } => {
            let chunk = chunk_size.unwrap_or(config.bench.chunk_size);
            let mut run_cfg = config.run_config(
                records,
                match strategy {
                    BenchMode::Chunked => IngestionStrategy::Chunked(chunk),
                    _ => IngestionStrategy::Full,
                },
            );
            if let Some(seed) = seed {
                run_cfg.data_seed = seed;
            }
            if let Some(seed) = model_seed {
                run_cfg.model_seed = seed;
            }
            let scratch = warehouse.is_none();
            let dir = warehouse.unwrap_or_else(|| {
                std::env::temp_dir().join(format!(
                    "laneflow-bench-{}-{}",
                    std::process::id(),
                    crate::clock::now_ms()
                ))
            });
            let outcome = (|| match strategy {
                BenchMode::Full | BenchMode::Chunked => {
                    let metrics = bench::run_pipeline(&run_cfg, &dir)?;
                    print!("{}", bench::report_text(&metrics));
                    write_report(report.as_deref(), &bench::metrics_csv(&metrics))
                }
                BenchMode::Compare => {
                    let comparison = bench::compare_strategies(records, chunk, &run_cfg, &dir)?;
                    print!("{}", bench::comparison_text(&comparison));
                    write_report(report.as_deref(), &bench::comparison_csv(&comparison))
                }
            })();
            if scratch {
                let _ = std::fs::remove_dir_all(&dir);
            }
            outcome
        }
        Command::Serve { model, warehouse, bind } => {
            let state = AppState::new(RoadDirectory::bundled());
            if let Some(path) = model {
                state.set_model(artifact::load(&path)?);
            }
            if let Some(dir) = warehouse {
                // Open eagerly so a bad directory fails at startup.
                crate::streamproc::Warehouse::open(&dir)?;
                state.set_warehouse_dir(dir);
            }
            let addr = match bind {
                Some(text) => text.parse().map_err(|_| {
                    Error::Config(format!("bind is not a socket address: {text:?}"))
                })?,
                None => config.bind_addr()?,
            };
            let runtime = tokio::runtime::Runtime::new()
                .map_err(|e| Error::Run(format!("tokio runtime: {e}")))?;
            runtime.block_on(crate::serve::serve(addr, state))
        }
    }
}
