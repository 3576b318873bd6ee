//! Ingestion stress harness: seeded end-to-end runs under full or chunked
//! production, with lag, latency, occupancy and memory series emitted as
//! text and CSV reports.

pub mod resources;

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock;
use crate::datagen::{generate, GeneratorConfig};
use crate::error::{Error, Result};
use crate::learner::{KMeansConfig, Labeler};
use crate::mlog::{wire, Broker, BrokerConfig, Consumer, RAW_TOPIC};
use crate::streamproc::{
    clean, commit_to_warehouse, featurize, FeatureVector, MicroBatchProcessor, Warehouse,
    WarehouseRow, DEFAULT_CONSUMER_BATCH, DEFAULT_FLUSH_THRESHOLD,
};

pub use resources::{rss_bytes, ResourceSample, ResourceSampler};

/// Records per latency reporting unit.
pub const LATENCY_UNIT: u64 = 100_000;
/// Default chunk for chunked ingestion at full scale.
pub const DEFAULT_CHUNK_SIZE: u64 = 500_000;
/// A chunk counts as drained once lag falls below this share of it.
pub const DRAIN_FRACTION: f64 = 0.1;

/// Baseline figures from a comparable deployment, printed beside measured
/// values for orientation and never asserted (hardware-bound).
pub const BASELINE_THROUGHPUT_RPM: f64 = 320_000.0;
pub const BASELINE_BATCH_LATENCY_MS: f64 = 3_200.0;
pub const BASELINE_CHUNKED_OVERHEAD: f64 = 1.10;

/// Consumer group the harness processes under.
pub const PROCESS_GROUP: &str = "warehouse-loader";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IngestionStrategy {
    /// Enqueue every record before processing starts.
    Full,
    /// Enqueue fixed-size chunks, draining between them.
    Chunked(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagSample {
    pub timestamp_ms: i64,
    /// Total unprocessed backlog across partitions at sample time.
    pub lag: u64,
    /// Records handed to the producer by then; lag can never exceed it.
    pub produced: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub strategy: IngestionStrategy,
    pub records_total: u64,
    pub warehouse_rows: u64,
    pub dead_letters: u64,
    pub elapsed_ms: u64,
    pub throughput_rpm: f64,
    /// One entry per `LATENCY_UNIT` of warehouse rows, in commit order.
    pub batch_latencies_ms: Vec<i64>,
    pub lag_series: Vec<LagSample>,
    pub peak_buffer_occupancy: u64,
    pub final_lag: u64,
    /// Broker queue capacity summed over partitions, echoed for bounds.
    pub queue_capacity_total: u64,
    pub content_hash: String,
    pub resource_samples: Option<Vec<ResourceSample>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressComparison {
    pub full_run: PipelineMetrics,
    pub chunked_run: PipelineMetrics,
    pub chunk_size: u64,
    /// Full elapsed over chunked elapsed.
    pub time_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub total_records: u64,
    pub strategy: IngestionStrategy,
    pub data_seed: u64,
    pub model_seed: u64,
    pub partitions: u32,
    pub micro_batch: usize,
    pub flush_threshold: usize,
    /// Per-partition broker queue capacity.
    pub queue_capacity: u64,
    pub lag_sample_interval_ms: u64,
    pub sample_resources: bool,
}

impl RunConfig {
    pub fn new(total_records: u64, strategy: IngestionStrategy) -> RunConfig {
        RunConfig {
            total_records,
            strategy,
            data_seed: 42,
            model_seed: 7,
            partitions: 4,
            micro_batch: DEFAULT_CONSUMER_BATCH,
            flush_threshold: DEFAULT_FLUSH_THRESHOLD,
            queue_capacity: 1_000_000,
            lag_sample_interval_ms: 100,
            sample_resources: true,
        }
    }
}

/// Flags and counters shared between the producer, workers and samplers.
struct Shared {
    produced: AtomicU64,
    production_done: AtomicBool,
    run_done: AtomicBool,
    abort: AtomicBool,
    peak: AtomicU64,
    dead_letters: AtomicU64,
}

impl Shared {
    fn new() -> Shared {
        Shared {
            produced: AtomicU64::new(0),
            production_done: AtomicBool::new(false),
            run_done: AtomicBool::new(false),
            abort: AtomicBool::new(false),
            peak: AtomicU64::new(0),
            dead_letters: AtomicU64::new(0),
        }
    }
}

/// Consumes one partition until production is over and its lag is zero,
/// committing staged rows whenever the temp store fills.
fn drive_partition(
    consumer: Consumer,
    micro_batch: usize,
    flush_threshold: usize,
    labeler: &Labeler,
    warehouse: &Mutex<Warehouse>,
    shared: &Shared,
) -> Result<()> {
    let mut proc = MicroBatchProcessor::new(consumer, micro_batch, flush_threshold);
    let label = |f: &FeatureVector| labeler.label(f);
    let out = (|| -> Result<()> {
        loop {
            if shared.abort.load(Ordering::SeqCst) {
                return Ok(());
            }
            let staged = proc.process_micro_batch()?;
            if proc.temp().should_flush() {
                let mut wh = warehouse.lock().expect("warehouse lock");
                commit_to_warehouse(proc.temp_mut(), &mut wh, label)?;
            }
            if staged.is_empty() {
                if shared.production_done.load(Ordering::SeqCst)
                    && proc.consumer().total_lag()? == 0
                {
                    let mut wh = warehouse.lock().expect("warehouse lock");
                    commit_to_warehouse(proc.temp_mut(), &mut wh, label)?;
                    return Ok(());
                }
                thread::sleep(Duration::from_millis(1));
            }
        }
    })();
    shared
        .dead_letters
        .fetch_add(proc.dead_letter_count() as u64, Ordering::SeqCst);
    if out.is_err() {
        shared.abort.store(true, Ordering::SeqCst);
    }
    out
}

/// Generates seeded records, runs them through the broker into a fresh
/// warehouse at `warehouse_dir`, and returns validated metrics.
pub fn run_pipeline(cfg: &RunConfig, warehouse_dir: &Path) -> Result<PipelineMetrics> {
    if cfg.total_records == 0 {
        return Err(Error::Config("a run needs at least one record".into()));
    }
    let records = generate(&GeneratorConfig::new(cfg.total_records, cfg.data_seed))?;
    // The labeler is fit on this run's own cleaned features, so any two
    // runs over the same seeds write identical warehouse rows.
    let features: Vec<FeatureVector> = records.iter().map(|r| featurize(&clean(r, 0))).collect();
    let labeler = Labeler::fit(&features, &KMeansConfig::default(), cfg.model_seed)?;
    drop(features);
    run_pipeline_over(&records, &labeler, cfg, warehouse_dir)
}

/// Runs already-materialized records through the broker into a fresh
/// warehouse. The record count overrides `cfg.total_records`.
pub fn run_pipeline_over(
    records: &[crate::datagen::TrafficRecordRaw],
    labeler: &Labeler,
    cfg: &RunConfig,
    warehouse_dir: &Path,
) -> Result<PipelineMetrics> {
    let cfg = &RunConfig { total_records: records.len() as u64, ..cfg.clone() };
    if cfg.total_records == 0 {
        return Err(Error::Config("a run needs at least one record".into()));
    }
    if matches!(cfg.strategy, IngestionStrategy::Chunked(0)) {
        return Err(Error::Config("chunk size must be at least 1".into()));
    }

    let broker = Broker::new(BrokerConfig {
        partitions_per_topic: cfg.partitions,
        queue_capacity: cfg.queue_capacity,
        ..BrokerConfig::default()
    });
    broker.create_topic(RAW_TOPIC, cfg.partitions)?;
    std::fs::create_dir_all(warehouse_dir).map_err(|e| Error::io(warehouse_dir, e))?;
    let warehouse = Mutex::new(Warehouse::create(warehouse_dir)?);

    // Register the group before producing so lag is defined all run long.
    let consumers: Vec<Consumer> = (0..cfg.partitions)
        .map(|p| broker.consumer_for(RAW_TOPIC, PROCESS_GROUP, vec![p]))
        .collect::<Result<_>>()?;

    let shared = Shared::new();
    let lag_series: Mutex<Vec<LagSample>> = Mutex::new(Vec::new());
    let resource_sampler = if cfg.sample_resources {
        ResourceSampler::start(250)
    } else {
        None
    };

    let started_ms = clock::now_ms();
    let mut prod_result: Option<Result<()>> = None;
    let mut worker_error: Option<Error> = None;
    {
        let shared = &shared;
        let warehouse = &warehouse;
        let broker_ref = &broker;
        thread::scope(|scope| {
            let sampler = scope.spawn(|| loop {
                // Lag is read before the produced counter: production only
                // raises the counter, so lag <= produced holds per sample.
                let lag = broker_ref.total_lag(RAW_TOPIC, PROCESS_GROUP).unwrap_or(0);
                let produced = shared.produced.load(Ordering::SeqCst);
                shared.peak.fetch_max(lag, Ordering::SeqCst);
                lag_series.lock().expect("lag series lock").push(LagSample {
                    timestamp_ms: clock::now_ms(),
                    lag,
                    produced,
                });
                if shared.run_done.load(Ordering::SeqCst) {
                    break;
                }
                thread::sleep(Duration::from_millis(cfg.lag_sample_interval_ms));
            });

            let mut handles = Vec::new();
            let mut pending = Some(consumers);
            if matches!(cfg.strategy, IngestionStrategy::Chunked(_)) {
                for c in pending.take().expect("consumers pending") {
                    handles.push(scope.spawn(move || {
                        drive_partition(
                            c,
                            cfg.micro_batch,
                            cfg.flush_threshold,
                            labeler,
                            warehouse,
                            shared,
                        )
                    }));
                }
            }

            let pr: Result<()> = (|| {
                let mut producer = broker_ref.producer(RAW_TOPIC)?;
                let stall = |e: Error, at: u64| {
                    Error::Run(format!(
                        "ingestion stalled at record {at} of {}: {e}",
                        cfg.total_records
                    ))
                };
                match cfg.strategy {
                    IngestionStrategy::Full => {
                        for rec in records.iter() {
                            let at = shared.produced.fetch_add(1, Ordering::SeqCst) + 1;
                            producer
                                .produce(&wire::routing_key(rec), wire::encode(rec))
                                .map_err(|e| stall(e, at))?;
                        }
                        producer
                            .flush()
                            .map_err(|e| stall(e, cfg.total_records))?;
                        shared
                            .peak
                            .fetch_max(broker_ref.total_backlog(RAW_TOPIC)?, Ordering::SeqCst);
                    }
                    IngestionStrategy::Chunked(chunk) => {
                        let drain_below = ((chunk as f64) * DRAIN_FRACTION).ceil().max(1.0) as u64;
                        let mut next = 0usize;
                        while next < records.len() {
                            let end = (next + chunk as usize).min(records.len());
                            for rec in &records[next..end] {
                                let at = shared.produced.fetch_add(1, Ordering::SeqCst) + 1;
                                producer
                                    .produce(&wire::routing_key(rec), wire::encode(rec))
                                    .map_err(|e| stall(e, at))?;
                            }
                            producer.flush().map_err(|e| stall(e, end as u64))?;
                            shared
                                .peak
                                .fetch_max(broker_ref.total_backlog(RAW_TOPIC)?, Ordering::SeqCst);
                            next = end;
                            if next < records.len() {
                                loop {
                                    if shared.abort.load(Ordering::SeqCst) {
                                        return Err(Error::Run(
                                            "a partition worker failed during a drain wait".into(),
                                        ));
                                    }
                                    if broker_ref.total_lag(RAW_TOPIC, PROCESS_GROUP)? < drain_below
                                    {
                                        break;
                                    }
                                    thread::sleep(Duration::from_millis(2));
                                }
                            }
                        }
                    }
                }
                Ok(())
            })();

            shared.production_done.store(true, Ordering::SeqCst);
            if pr.is_err() {
                shared.abort.store(true, Ordering::SeqCst);
            } else if matches!(cfg.strategy, IngestionStrategy::Full) {
                for c in pending.take().expect("consumers pending") {
                    handles.push(scope.spawn(move || {
                        drive_partition(
                            c,
                            cfg.micro_batch,
                            cfg.flush_threshold,
                            labeler,
                            warehouse,
                            shared,
                        )
                    }));
                }
            }
            prod_result = Some(pr);

            for h in handles {
                match h.join() {
                    Ok(Ok(())) => {}
                    Ok(Err(e)) => {
                        worker_error.get_or_insert(e);
                    }
                    Err(panic) => std::panic::resume_unwind(panic),
                }
            }
            shared.run_done.store(true, Ordering::SeqCst);
            sampler.join().expect("lag sampler panicked");
        });
    }
    let elapsed_ms = (clock::now_ms() - started_ms).max(1) as u64;
    let resource_samples = resource_sampler.map(|s| s.stop());

    if let Some(e) = worker_error {
        return Err(e);
    }
    prod_result.expect("production ran")?;

    let warehouse = warehouse.into_inner().expect("warehouse lock");
    let scan = warehouse.scan()?;
    let metrics = PipelineMetrics {
        strategy: cfg.strategy,
        records_total: cfg.total_records,
        warehouse_rows: warehouse.row_count(),
        dead_letters: shared.dead_letters.load(Ordering::SeqCst),
        elapsed_ms,
        throughput_rpm: cfg.total_records as f64 * 60_000.0 / elapsed_ms as f64,
        batch_latencies_ms: latencies_per_unit(&scan, LATENCY_UNIT),
        lag_series: lag_series.into_inner().expect("lag series lock"),
        peak_buffer_occupancy: shared.peak.load(Ordering::SeqCst),
        final_lag: broker.total_lag(RAW_TOPIC, PROCESS_GROUP)?,
        queue_capacity_total: cfg.queue_capacity * cfg.partitions as u64,
        content_hash: warehouse.content_hash()?,
        resource_samples,
    };
    validate_metrics(&metrics)?;
    Ok(metrics)
}

/// Max commit minus min ingest per unit of rows, in warehouse order.
pub fn latencies_per_unit(rows: &[WarehouseRow], unit: u64) -> Vec<i64> {
    rows.chunks(unit.max(1) as usize)
        .map(|c| {
            let min_ingest = c.iter().map(|r| r.ingest_ts_ms).min().expect("nonempty chunk");
            let max_commit = c.iter().map(|r| r.commit_ts_ms).max().expect("nonempty chunk");
            max_commit - min_ingest
        })
        .collect()
}

/// Runs both strategies over identical seeds and checks that they agree
/// on warehouse content while chunking bounds the buffer.
pub fn compare_strategies(
    total_records: u64,
    chunk_size: u64,
    base: &RunConfig,
    dir: &Path,
) -> Result<StressComparison> {
    if chunk_size == 0 || total_records < 2 * chunk_size {
        return Err(Error::Config(format!(
            "comparison needs at least two chunks, got {total_records} records at chunk {chunk_size}"
        )));
    }
    let mut full_cfg = base.clone();
    full_cfg.total_records = total_records;
    full_cfg.strategy = IngestionStrategy::Full;
    let mut chunked_cfg = full_cfg.clone();
    chunked_cfg.strategy = IngestionStrategy::Chunked(chunk_size);

    let full_run = run_pipeline(&full_cfg, &dir.join("full"))
        .map_err(|e| Error::Run(format!("full strategy: {e}")))?;
    let chunked_run = run_pipeline(&chunked_cfg, &dir.join("chunked"))
        .map_err(|e| Error::Run(format!("chunked strategy: {e}")))?;
    let comparison = StressComparison {
        time_ratio: full_run.elapsed_ms as f64 / chunked_run.elapsed_ms as f64,
        full_run,
        chunked_run,
        chunk_size,
    };
    validate_comparison(&comparison)?;
    Ok(comparison)
}

/// Structural invariants every completed run must satisfy.
pub fn validate_metrics(m: &PipelineMetrics) -> Result<()> {
    let fail = |msg: String| Err(Error::Invariant(msg));
    if m.warehouse_rows + m.dead_letters != m.records_total {
        return fail(format!(
            "conservation: {} rows + {} dead letters != {} records",
            m.warehouse_rows, m.dead_letters, m.records_total
        ));
    }
    if m.final_lag != 0 {
        return fail(format!("final lag {} after drain", m.final_lag));
    }
    if m.dead_letters == 0 {
        let want = m.records_total.div_ceil(LATENCY_UNIT) as usize;
        if m.batch_latencies_ms.len() != want {
            return fail(format!(
                "latency unit count {} != ceil({} / {LATENCY_UNIT})",
                m.batch_latencies_ms.len(),
                m.records_total
            ));
        }
    }
    if m.batch_latencies_ms.iter().any(|&l| l < 0) {
        return fail("negative batch latency".into());
    }
    let recomputed = m.records_total as f64 * 60_000.0 / m.elapsed_ms as f64;
    if recomputed != m.throughput_rpm {
        return fail(format!(
            "throughput {} does not equal recomputed {recomputed}",
            m.throughput_rpm
        ));
    }
    match m.lag_series.last() {
        Some(last) if last.lag == 0 => {}
        Some(last) => return fail(format!("lag series ends at {} not 0", last.lag)),
        None => return fail("empty lag series".into()),
    }
    if let Some(s) = m.lag_series.iter().find(|s| s.lag > s.produced) {
        return fail(format!(
            "lag {} exceeds {} records produced by then",
            s.lag, s.produced
        ));
    }
    if m.peak_buffer_occupancy > m.records_total {
        return fail(format!(
            "peak occupancy {} exceeds {} records produced",
            m.peak_buffer_occupancy, m.records_total
        ));
    }
    Ok(())
}

pub fn validate_comparison(c: &StressComparison) -> Result<()> {
    validate_metrics(&c.full_run)?;
    validate_metrics(&c.chunked_run)?;
    if c.full_run.content_hash != c.chunked_run.content_hash {
        return Err(Error::Invariant(
            "full and chunked runs disagree on warehouse content".into(),
        ));
    }
    let bound = c.chunk_size + c.chunked_run.queue_capacity_total;
    if c.chunked_run.peak_buffer_occupancy > bound {
        return Err(Error::Invariant(format!(
            "chunked peak occupancy {} above chunk + capacity bound {bound}",
            c.chunked_run.peak_buffer_occupancy
        )));
    }
    if c.full_run.peak_buffer_occupancy < c.chunked_run.peak_buffer_occupancy {
        return Err(Error::Invariant(format!(
            "full peak occupancy {} below chunked peak {}",
            c.full_run.peak_buffer_occupancy, c.chunked_run.peak_buffer_occupancy
        )));
    }
    Ok(())
}

pub fn mean_batch_latency_ms(m: &PipelineMetrics) -> f64 {
    if m.batch_latencies_ms.is_empty() {
        return 0.0;
    }
    m.batch_latencies_ms.iter().sum::<i64>() as f64 / m.batch_latencies_ms.len() as f64
}

fn strategy_name(s: IngestionStrategy) -> String {
    match s {
        IngestionStrategy::Full => "full".into(),
        IngestionStrategy::Chunked(n) => format!("chunked({n})"),
    }
}

fn parse_strategy(text: &str) -> Option<IngestionStrategy> {
    if text == "full" {
        return Some(IngestionStrategy::Full);
    }
    let inner = text.strip_prefix("chunked(")?.strip_suffix(')')?;
    Some(IngestionStrategy::Chunked(inner.parse().ok()?))
}

/// Human-readable run summary with baseline figures for orientation.
pub fn report_text(m: &PipelineMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ingestion run ({})", strategy_name(m.strategy));
    let _ = writeln!(s, "  records ingested: {}", m.records_total);
    let _ = writeln!(
        s,
        "  warehouse rows: {} ({} dead letters)",
        m.warehouse_rows, m.dead_letters
    );
    let _ = writeln!(s, "  elapsed: {} ms", m.elapsed_ms);
    let _ = writeln!(
        s,
        "  throughput: {:.1} records/minute (baseline {:.0})",
        m.throughput_rpm, BASELINE_THROUGHPUT_RPM
    );
    let _ = writeln!(
        s,
        "  mean batch latency: {:.1} ms per {} records (baseline {:.0} ms)",
        mean_batch_latency_ms(m),
        LATENCY_UNIT,
        BASELINE_BATCH_LATENCY_MS
    );
    let _ = writeln!(s, "  peak buffer occupancy: {} records", m.peak_buffer_occupancy);
    let _ = writeln!(s, "  final lag: {}", m.final_lag);
    match &m.resource_samples {
        Some(rs) if !rs.is_empty() => {
            let peak = rs.iter().map(|r| r.rss_bytes).max().expect("nonempty");
            let _ = writeln!(s, "  peak resident memory: {:.1} MiB", peak as f64 / 1_048_576.0);
        }
        _ => {
            let _ = writeln!(s, "  resident memory: unavailable");
        }
    }
    let _ = writeln!(s, "  warehouse content hash: {}", m.content_hash);
    s
}

pub fn comparison_text(c: &StressComparison) -> String {
    let mut s = String::new();
    s.push_str(&report_text(&c.full_run));
    s.push_str(&report_text(&c.chunked_run));
    let _ = writeln!(s, "strategy comparison");
    let _ = writeln!(s, "  chunk size: {}", c.chunk_size);
    let _ = writeln!(s, "  time ratio (full/chunked): {:.3}", c.time_ratio);
    let _ = writeln!(
        s,
        "  chunked overhead (chunked/full): {:.3} (baseline {:.2})",
        1.0 / c.time_ratio,
        BASELINE_CHUNKED_OVERHEAD
    );
    let _ = writeln!(
        s,
        "  content hashes match: {}",
        c.full_run.content_hash == c.chunked_run.content_hash
    );
    s
}

const CSV_HEADER: &str = "section,key,timestamp_ms,value,extra";

fn push_metrics_rows(s: &mut String, prefix: &str, m: &PipelineMetrics) {
    let sec = |name: &str| {
        if prefix.is_empty() {
            name.to_string()
        } else {
            format!("{prefix}.{name}")
        }
    };
    let summary = sec("summary");
    let _ = writeln!(s, "{summary},strategy,,{},", strategy_name(m.strategy));
    let _ = writeln!(s, "{summary},records_total,,{},", m.records_total);
    let _ = writeln!(s, "{summary},warehouse_rows,,{},", m.warehouse_rows);
    let _ = writeln!(s, "{summary},dead_letters,,{},", m.dead_letters);
    let _ = writeln!(s, "{summary},elapsed_ms,,{},", m.elapsed_ms);
    let _ = writeln!(s, "{summary},throughput_rpm,,{},", m.throughput_rpm);
    let _ = writeln!(s, "{summary},peak_buffer_occupancy,,{},", m.peak_buffer_occupancy);
    let _ = writeln!(s, "{summary},final_lag,,{},", m.final_lag);
    let _ = writeln!(s, "{summary},queue_capacity_total,,{},", m.queue_capacity_total);
    let _ = writeln!(s, "{summary},content_hash,,{},", m.content_hash);
    for (i, l) in m.batch_latencies_ms.iter().enumerate() {
        let _ = writeln!(s, "{},{i},,{l},", sec("batch_latency"));
    }
    for (i, smp) in m.lag_series.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{i},{},{},{}",
            sec("lag"),
            smp.timestamp_ms,
            smp.lag,
            smp.produced
        );
    }
    match &m.resource_samples {
        None => {
            let _ = writeln!(s, "{},unavailable,,,", sec("resource"));
        }
        Some(rs) => {
            for (i, r) in rs.iter().enumerate() {
                let _ = writeln!(s, "{},{i},{},{},", sec("resource"), r.timestamp_ms, r.rss_bytes);
            }
        }
    }
}

/// Machine-readable form of one run; `parse_metrics_csv` inverts it exactly.
pub fn metrics_csv(m: &PipelineMetrics) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    push_metrics_rows(&mut s, "", m);
    s
}

pub fn comparison_csv(c: &StressComparison) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    let _ = writeln!(s, "comparison,chunk_size,,{},", c.chunk_size);
    let _ = writeln!(s, "comparison,time_ratio,,{},", c.time_ratio);
    push_metrics_rows(&mut s, "full", &c.full_run);
    push_metrics_rows(&mut s, "chunked", &c.chunked_run);
    s
}

struct Row<'a> {
    line: u64,
    section: &'a str,
    key: &'a str,
    ts: &'a str,
    value: &'a str,
    extra: &'a str,
}

fn rows_of(text: &str) -> Result<Vec<Row<'_>>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header {CSV_HEADER:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, raw) in lines {
        if raw.is_empty() {
            continue;
        }
        let line = i as u64 + 1;
        let mut f = raw.splitn(5, ',');
        let mut field = || {
            f.next().ok_or(Error::Parse {
                line,
                msg: "expected 5 comma-separated fields".into(),
            })
        };
        rows.push(Row {
            line,
            section: field()?,
            key: field()?,
            ts: field()?,
            value: field()?,
            extra: field()?,
        });
    }
    Ok(rows)
}

fn parse_field<T: std::str::FromStr>(row: &Row<'_>, text: &str, what: &str) -> Result<T> {
    text.parse().map_err(|_| Error::Parse {
        line: row.line,
        msg: format!("bad {what} {text:?}"),
    })
}

fn metrics_from_rows(rows: &[Row<'_>], prefix: &str) -> Result<PipelineMetrics> {
    let sec = |name: &str| {
        if prefix.is_empty() {
            name.to_string()
        } else {
            format!("{prefix}.{name}")
        }
    };
    let summary = sec("summary");
    let latency = sec("batch_latency");
    let lag = sec("lag");
    let resource = sec("resource");

    let mut strategy = None;
    let mut fields: std::collections::HashMap<&str, &Row<'_>> = std::collections::HashMap::new();
    let mut batch_latencies_ms = Vec::new();
    let mut lag_series = Vec::new();
    let mut resource_samples = Some(Vec::new());
    for row in rows {
        if row.section == summary {
            if row.key == "strategy" {
                strategy = Some(parse_strategy(row.value).ok_or(Error::Parse {
                    line: row.line,
                    msg: format!("bad strategy {:?}", row.value),
                })?);
            } else {
                fields.insert(row.key, row);
            }
        } else if row.section == latency {
            batch_latencies_ms.push(parse_field::<i64>(row, row.value, "latency")?);
        } else if row.section == lag {
            lag_series.push(LagSample {
                timestamp_ms: parse_field(row, row.ts, "timestamp")?,
                lag: parse_field(row, row.value, "lag")?,
                produced: parse_field(row, row.extra, "produced count")?,
            });
        } else if row.section == resource {
            if row.key == "unavailable" {
                resource_samples = None;
            } else if let Some(samples) = resource_samples.as_mut() {
                samples.push(ResourceSample {
                    timestamp_ms: parse_field(row, row.ts, "timestamp")?,
                    rss_bytes: parse_field(row, row.value, "rss")?,
                });
            }
        }
    }

    let take = |key: &'static str| {
        fields.get(key).copied().ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("missing summary row {key:?} in section {summary:?}"),
        })
    };
    Ok(PipelineMetrics {
        strategy: strategy.ok_or(Error::Parse {
            line: 1,
            msg: format!("missing strategy row in section {summary:?}"),
        })?,
        records_total: { let r = take("records_total")?; parse_field(r, r.value, "count")? },
        warehouse_rows: { let r = take("warehouse_rows")?; parse_field(r, r.value, "count")? },
        dead_letters: { let r = take("dead_letters")?; parse_field(r, r.value, "count")? },
        elapsed_ms: { let r = take("elapsed_ms")?; parse_field(r, r.value, "duration")? },
        throughput_rpm: { let r = take("throughput_rpm")?; parse_field(r, r.value, "rate")? },
        batch_latencies_ms,
        lag_series,
        peak_buffer_occupancy: {
            let r = take("peak_buffer_occupancy")?;
            parse_field(r, r.value, "count")?
        },
        final_lag: { let r = take("final_lag")?; parse_field(r, r.value, "count")? },
        queue_capacity_total: {
            let r = take("queue_capacity_total")?;
            parse_field(r, r.value, "count")?
        },
        content_hash: take("content_hash")?.value.to_string(),
        resource_samples,
    })
}

pub fn parse_metrics_csv(text: &str) -> Result<PipelineMetrics> {
    let rows = rows_of(text)?;
    metrics_from_rows(&rows, "")
}

pub fn parse_comparison_csv(text: &str) -> Result<StressComparison> {
    let rows = rows_of(text)?;
    let mut chunk_size = None;
    let mut time_ratio = None;
    for row in &rows {
        if row.section == "comparison" {
            match row.key {
                "chunk_size" => chunk_size = Some(parse_field(row, row.value, "chunk size")?),
                "time_ratio" => time_ratio = Some(parse_field(row, row.value, "ratio")?),
                _ => {}
            }
        }
    }
    let missing = |what: &str| Error::Parse {
        line: 1,
        msg: format!("missing comparison row {what:?}"),
    };
    Ok(StressComparison {
        full_run: metrics_from_rows(&rows, "full")?,
        chunked_run: metrics_from_rows(&rows, "chunked")?,
        chunk_size: chunk_size.ok_or_else(|| missing("chunk_size"))?,
        time_ratio: time_ratio.ok_or_else(|| missing("time_ratio"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn fast_cfg(total: u64, strategy: IngestionStrategy) -> RunConfig {
        let mut cfg = RunConfig::new(total, strategy);
        cfg.data_seed = 11;
        cfg.model_seed = 3;
        cfg.lag_sample_interval_ms = 20;
        cfg.sample_resources = false;
        cfg
    }

    #[test]
    fn zero_records_and_zero_chunks_are_rejected() {
        let dir = tempdir().unwrap();
        let cfg = fast_cfg(0, IngestionStrategy::Full);
        assert!(matches!(run_pipeline(&cfg, dir.path()), Err(Error::Config(_))));
        let cfg = fast_cfg(10, IngestionStrategy::Chunked(0));
        assert!(matches!(run_pipeline(&cfg, dir.path()), Err(Error::Config(_))));
        let base = fast_cfg(10, IngestionStrategy::Full);
        assert!(matches!(
            compare_strategies(1000, 600, &base, dir.path()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn full_run_drains_everything_and_peaks_at_the_total() {
        let dir = tempdir().unwrap();
        let cfg = fast_cfg(12_000, IngestionStrategy::Full);
        let m = run_pipeline(&cfg, dir.path()).unwrap();
        assert_eq!(m.records_total, 12_000);
        assert_eq!(m.warehouse_rows, 12_000);
        assert_eq!(m.dead_letters, 0);
        assert_eq!(m.final_lag, 0);
        // Full ingestion necessarily buffers the entire dataset.
        assert_eq!(m.peak_buffer_occupancy, 12_000);
        assert_eq!(m.batch_latencies_ms.len(), 1);
        assert!(m.lag_series.len() >= 2);
        assert_eq!(m.lag_series.last().unwrap().lag, 0);
        assert_eq!(m.content_hash.len(), 64);
        assert_eq!(
            m.throughput_rpm,
            12_000.0 * 60_000.0 / m.elapsed_ms as f64
        );
    }

    #[test]
    fn chunked_run_keeps_the_buffer_near_one_chunk() {
        let dir = tempdir().unwrap();
        let cfg = fast_cfg(12_000, IngestionStrategy::Chunked(4_000));
        let m = run_pipeline(&cfg, dir.path()).unwrap();
        assert_eq!(m.warehouse_rows, 12_000);
        assert_eq!(m.final_lag, 0);
        // A chunk plus the drain threshold bounds what can be in flight.
        assert!(
            m.peak_buffer_occupancy <= 4_400,
            "peak {} above chunk + drain threshold",
            m.peak_buffer_occupancy
        );
    }

    #[test]
    fn strategies_agree_on_warehouse_content() {
        let dir = tempdir().unwrap();
        let base = fast_cfg(0, IngestionStrategy::Full);
        let c = compare_strategies(30_000, 10_000, &base, dir.path()).unwrap();
        assert_eq!(c.full_run.content_hash, c.chunked_run.content_hash);
        assert_eq!(c.full_run.peak_buffer_occupancy, 30_000);
        assert!(c.chunked_run.peak_buffer_occupancy < c.full_run.peak_buffer_occupancy);
        assert!(c.time_ratio > 0.0);
        assert_eq!(c.full_run.batch_latencies_ms.len(), 1);
    }

    #[test]
    fn full_ingestion_into_a_tiny_queue_fails_as_a_run_error() {
        let dir = tempdir().unwrap();
        let mut cfg = fast_cfg(5_000, IngestionStrategy::Full);
        cfg.partitions = 1;
        cfg.queue_capacity = 500;
        match run_pipeline(&cfg, dir.path()) {
            Err(Error::Run(msg)) => assert!(msg.contains("stalled"), "{msg}"),
            other => panic!("expected a stalled run, got {other:?}"),
        }
    }

    #[test]
    fn latency_units_follow_the_ceiling_rule() {
        let rows: Vec<WarehouseRow> = (0..250i64)
            .map(|i| WarehouseRow {
                vehicle_id: i as u64,
                frame_id: 1,
                timestamp_ms: 0,
                lane_id: 1,
                section_id: 1,
                global_x: 0.0,
                global_y: 0.0,
                v_vel: 0.0,
                v_acc: 0.0,
                space_headway: 0.0,
                time_headway: 0.0,
                weather: crate::datagen::Weather::Clear,
                ingest_ts_ms: i,
                commit_ts_ms: 1_000 + i,
                congestion_label: crate::learner::CongestionLabel::Low,
            })
            .collect();
        let lat = latencies_per_unit(&rows, 100);
        // Units: rows 0..100, 100..200 and the 50-row remainder.
        assert_eq!(lat, vec![1_099, 1_099, 1_049]);
    }

    fn sample_metrics(resource: bool) -> PipelineMetrics {
        PipelineMetrics {
            strategy: IngestionStrategy::Chunked(100_000),
            records_total: 500_000,
            warehouse_rows: 499_998,
            dead_letters: 2,
            elapsed_ms: 93_750,
            throughput_rpm: 500_000.0 * 60_000.0 / 93_750.0,
            batch_latencies_ms: vec![3_201, 3_102, 2_999, 3_310, 3_050],
            lag_series: vec![
                LagSample { timestamp_ms: 1_700_000_000_000, lag: 0, produced: 0 },
                LagSample { timestamp_ms: 1_700_000_000_100, lag: 93_417, produced: 100_000 },
                LagSample { timestamp_ms: 1_700_000_093_000, lag: 0, produced: 500_000 },
            ],
            peak_buffer_occupancy: 104_211,
            final_lag: 0,
            queue_capacity_total: 4_000_000,
            content_hash: "ab".repeat(32),
            resource_samples: resource.then(|| {
                vec![ResourceSample { timestamp_ms: 1_700_000_000_050, rss_bytes: 812_345_678 }]
            }),
        }
    }

    #[test]
    fn csv_reports_round_trip_exactly() {
        for resource in [true, false] {
            let m = sample_metrics(resource);
            assert_eq!(parse_metrics_csv(&metrics_csv(&m)).unwrap(), m);
        }
        let c = StressComparison {
            full_run: sample_metrics(true),
            chunked_run: sample_metrics(false),
            chunk_size: 100_000,
            time_ratio: 0.912_345_678_9,
        };
        assert_eq!(parse_comparison_csv(&comparison_csv(&c)).unwrap(), c);
        assert!(parse_metrics_csv("not,a,report").is_err());
    }

    #[test]
    fn text_report_numbers_recompute_from_the_csv_series() {
        let m = sample_metrics(true);
        let text = report_text(&m);
        assert!(text.contains("records/minute"), "{text}");
        assert!(text.contains("baseline 320000"), "{text}");
        assert!(text.contains("baseline 3200 ms"), "{text}");
        let parsed = parse_metrics_csv(&metrics_csv(&m)).unwrap();
        let mean = parsed.batch_latencies_ms.iter().sum::<i64>() as f64
            / parsed.batch_latencies_ms.len() as f64;
        let line = text
            .lines()
            .find(|l| l.contains("mean batch latency"))
            .unwrap();
        let shown: f64 = line
            .trim()
            .strip_prefix("mean batch latency: ")
            .unwrap()
            .split(' ')
            .next()
            .unwrap()
            .parse()
            .unwrap();
        assert!((shown - mean).abs() < 0.05, "{shown} vs {mean}");

        let c = StressComparison {
            full_run: sample_metrics(false),
            chunked_run: sample_metrics(false),
            chunk_size: 100_000,
            time_ratio: 0.95,
        };
        let text = comparison_text(&c);
        assert!(text.contains("baseline 1.10"), "{text}");
        assert!(text.contains("time ratio (full/chunked)"), "{text}");
    }
}
