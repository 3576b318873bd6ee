//! CSV-backed append-only warehouse with an idempotent batch ledger.
//!
//! Every commit appends whole batches and one ledger line per batch. Batch
//! ids already in the ledger are skipped, and any I/O failure truncates the
//! files back to their pre-commit lengths, so a commit is all-or-nothing.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::clock;
use crate::datagen::Weather;
use crate::error::{Error, Result};
use crate::learner::CongestionLabel;

use super::temp::StagedBatch;
use super::{aggregate_rows, FeatureVector, LaneAggregates, TrafficRecord};

/// Record-table header: the telemetry fields plus the two pipeline
/// timestamps and the congestion label stamped at commit.
pub const WAREHOUSE_HEADER: &str = "Vehicle_ID,Frame_ID,Timestamp_ms,Lane_ID,Section_ID,\
Global_X,Global_Y,v_Vel,v_Acc,Space_Headway,Time_Headway,Weather,\
Ingest_Ts_Ms,Commit_Ts_Ms,Congestion_Label";

const DATA_FILE: &str = "records.csv";
const LEDGER_FILE: &str = "ledger.csv";

/// One committed warehouse row.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WarehouseRow {
    #[serde(rename = "Vehicle_ID")]
    pub vehicle_id: u64,
    #[serde(rename = "Frame_ID")]
    pub frame_id: u64,
    #[serde(rename = "Timestamp_ms")]
    pub timestamp_ms: i64,
    #[serde(rename = "Lane_ID")]
    pub lane_id: i32,
    #[serde(rename = "Section_ID")]
    pub section_id: i32,
    #[serde(rename = "Global_X")]
    pub global_x: f64,
    #[serde(rename = "Global_Y")]
    pub global_y: f64,
    #[serde(rename = "v_Vel")]
    pub v_vel: f64,
    #[serde(rename = "v_Acc")]
    pub v_acc: f64,
    #[serde(rename = "Space_Headway")]
    pub space_headway: f64,
    #[serde(rename = "Time_Headway")]
    pub time_headway: f64,
    #[serde(rename = "Weather")]
    pub weather: Weather,
    #[serde(rename = "Ingest_Ts_Ms")]
    pub ingest_ts_ms: i64,
    #[serde(rename = "Commit_Ts_Ms")]
    pub commit_ts_ms: i64,
    #[serde(rename = "Congestion_Label")]
    pub congestion_label: CongestionLabel,
}

impl WarehouseRow {
    fn from_record(rec: &TrafficRecord, commit_ts_ms: i64, label: CongestionLabel) -> WarehouseRow {
        WarehouseRow {
            vehicle_id: rec.vehicle_id,
            frame_id: rec.frame_id,
            timestamp_ms: rec.timestamp_ms,
            lane_id: rec.lane_id,
            section_id: rec.section_id,
            global_x: rec.global_x,
            global_y: rec.global_y,
            v_vel: rec.v_vel,
            v_acc: rec.v_acc,
            space_headway: rec.space_headway,
            time_headway: rec.time_headway,
            weather: rec.weather,
            ingest_ts_ms: rec.ingest_ts_ms,
            commit_ts_ms,
            congestion_label: label,
        }
    }

    /// The model features of this row, in the fixed feature order.
    pub fn features(&self) -> FeatureVector {
        FeatureVector([self.v_vel, self.v_acc, self.space_headway, self.time_headway])
    }
}

/// Append-only record table plus the committed-batch ledger.
#[derive(Debug)]
pub struct Warehouse {
    data_path: PathBuf,
    ledger_path: PathBuf,
    committed: HashMap<String, u64>,
    rows: u64,
    fail_after_rows: Option<u64>,
}

impl Warehouse {
    /// Starts a fresh warehouse in `dir`, truncating any previous content.
    pub fn create(dir: &Path) -> Result<Warehouse> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let data_path = dir.join(DATA_FILE);
        let ledger_path = dir.join(LEDGER_FILE);
        let mut f = File::create(&data_path).map_err(|e| Error::io(&data_path, e))?;
        writeln!(f, "{WAREHOUSE_HEADER}").map_err(|e| Error::io(&data_path, e))?;
        File::create(&ledger_path).map_err(|e| Error::io(&ledger_path, e))?;
        Ok(Warehouse {
            data_path,
            ledger_path,
            committed: HashMap::new(),
            rows: 0,
            fail_after_rows: None,
        })
    }

    /// Reopens an existing warehouse, reloading the ledger and checking that
    /// the record table holds exactly the ledgered rows.
    pub fn open(dir: &Path) -> Result<Warehouse> {
        let data_path = dir.join(DATA_FILE);
        let ledger_path = dir.join(LEDGER_FILE);

        let f = File::open(&data_path).map_err(|e| Error::io(&data_path, e))?;
        let mut lines = BufReader::new(f).lines();
        match lines.next() {
            Some(Ok(h)) if h == WAREHOUSE_HEADER => {}
            Some(Ok(h)) => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("unexpected warehouse header: {h}"),
                })
            }
            Some(Err(e)) => return Err(Error::io(&data_path, e)),
            None => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "empty warehouse record table".into(),
                })
            }
        }
        let mut data_rows = 0u64;
        for line in lines {
            line.map_err(|e| Error::io(&data_path, e))?;
            data_rows += 1;
        }

        let mut committed = HashMap::new();
        let mut rows = 0u64;
        let f = File::open(&ledger_path).map_err(|e| Error::io(&ledger_path, e))?;
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&ledger_path, e))?;
            let parts: Vec<&str> = line.split(',').collect();
            let parse = |msg: String| Error::Parse {
                line: i as u64 + 1,
                msg,
            };
            if parts.len() != 3 {
                return Err(parse(format!("expected batch_id,row_count,commit_ts_ms: {line}")));
            }
            let count: u64 = parts[1]
                .parse()
                .map_err(|e| parse(format!("bad row count: {e}")))?;
            parts[2]
                .parse::<i64>()
                .map_err(|e| parse(format!("bad commit timestamp: {e}")))?;
            if committed.insert(parts[0].to_string(), count).is_some() {
                return Err(parse(format!("duplicate ledger batch id {}", parts[0])));
            }
            rows += count;
        }

        if data_rows != rows {
            return Err(Error::Invariant(format!(
                "warehouse holds {data_rows} rows but the ledger accounts for {rows}"
            )));
        }
        Ok(Warehouse {
            data_path,
            ledger_path,
            committed,
            rows,
            fail_after_rows: None,
        })
    }

    /// Opens `dir` if a warehouse is already there, otherwise creates one.
    pub fn open_or_create(dir: &Path) -> Result<Warehouse> {
        if dir.join(DATA_FILE).exists() {
            Warehouse::open(dir)
        } else {
            Warehouse::create(dir)
        }
    }

    pub fn data_path(&self) -> &Path {
        &self.data_path
    }

    pub fn ledger_path(&self) -> &Path {
        &self.ledger_path
    }

    /// Committed row count: always the sum of ledgered batch sizes.
    pub fn row_count(&self) -> u64 {
        self.rows
    }

    pub fn committed_batches(&self) -> usize {
        self.committed.len()
    }

    pub fn is_committed(&self, batch_id: &str) -> bool {
        self.committed.contains_key(batch_id)
    }

    /// Test hook: the next commit fails with an I/O error once it has
    /// written this many rows. Sticky until cleared.
    pub fn set_fail_after_rows(&mut self, rows: Option<u64>) {
        self.fail_after_rows = rows;
    }

    /// Appends the given batches, skipping ids already in the ledger, and
    /// returns the number of rows appended. Rows are stamped with one commit
    /// timestamp and labeled via `labeler`. On error both files are
    /// truncated back to their pre-commit lengths.
    pub fn commit_batches<F>(&mut self, batches: &[StagedBatch], labeler: F) -> Result<u64>
    where
        F: Fn(&FeatureVector) -> CongestionLabel,
    {
        let mut seen: HashSet<&str> = HashSet::new();
        let fresh: Vec<&StagedBatch> = batches
            .iter()
            .filter(|b| !self.committed.contains_key(&b.id) && seen.insert(&b.id))
            .collect();
        if fresh.is_empty() {
            return Ok(0);
        }

        let commit_ts = clock::now_ms();
        let data_start = file_len(&self.data_path)?;
        let ledger_start = file_len(&self.ledger_path)?;

        let appended = match self.append_rows(&fresh, commit_ts, &labeler) {
            Ok(n) => n,
            Err(e) => {
                truncate_to(&self.data_path, data_start)?;
                return Err(e);
            }
        };
        if let Err(e) = self.append_ledger(&fresh, commit_ts) {
            truncate_to(&self.data_path, data_start)?;
            truncate_to(&self.ledger_path, ledger_start)?;
            return Err(e);
        }

        for b in &fresh {
            self.committed.insert(b.id.clone(), b.records.len() as u64);
        }
        self.rows += appended;
        Ok(appended)
    }

    fn append_rows<F>(&self, fresh: &[&StagedBatch], commit_ts: i64, labeler: &F) -> Result<u64>
    where
        F: Fn(&FeatureVector) -> CongestionLabel,
    {
        let file = OpenOptions::new()
            .append(true)
            .open(&self.data_path)
            .map_err(|e| Error::io(&self.data_path, e))?;
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(file);
        let mut written = 0u64;
        for b in fresh {
            for (rec, feat) in b.records.iter().zip(&b.features) {
                if self.fail_after_rows == Some(written) {
                    // Flush so the partial append is really on disk before the
                    // rollback path has to undo it.
                    let _ = w.flush();
                    return Err(Error::io(
                        &self.data_path,
                        std::io::Error::other("injected append failure"),
                    ));
                }
                if commit_ts < rec.ingest_ts_ms {
                    return Err(Error::Invariant(format!(
                        "commit timestamp {commit_ts} precedes ingest timestamp {}",
                        rec.ingest_ts_ms
                    )));
                }
                w.serialize(WarehouseRow::from_record(rec, commit_ts, labeler(feat)))
                    .map_err(|e| Error::io(&self.data_path, std::io::Error::other(e)))?;
                written += 1;
            }
        }
        w.flush().map_err(|e| Error::io(&self.data_path, e))?;
        Ok(written)
    }

    fn append_ledger(&self, fresh: &[&StagedBatch], commit_ts: i64) -> Result<()> {
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.ledger_path)
            .map_err(|e| Error::io(&self.ledger_path, e))?;
        for b in fresh {
            writeln!(f, "{},{},{}", b.id, b.records.len(), commit_ts)
                .map_err(|e| Error::io(&self.ledger_path, e))?;
        }
        f.flush().map_err(|e| Error::io(&self.ledger_path, e))
    }

    /// Reads every committed row in append order.
    pub fn scan(&self) -> Result<Vec<WarehouseRow>> {
        let mut rdr = self.reader()?;
        let mut rows = Vec::with_capacity(self.rows as usize);
        for rec in rdr.deserialize() {
            let row: WarehouseRow = rec.map_err(|e| Error::Parse {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                msg: e.to_string(),
            })?;
            rows.push(row);
        }
        Ok(rows)
    }

    /// SHA-256 over the sorted row contents, excluding the two pipeline
    /// timestamp columns. Runs that commit the same records in any batch
    /// arrangement or at any wall time hash identically.
    pub fn content_hash(&self) -> Result<String> {
        let mut rdr = self.reader()?;
        let headers = rdr
            .headers()
            .map_err(|e| Error::io(&self.data_path, std::io::Error::other(e)))?;
        let skip: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| *h == "Ingest_Ts_Ms" || *h == "Commit_Ts_Ms")
            .map(|(i, _)| i)
            .collect();
        let mut lines = Vec::with_capacity(self.rows as usize);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::io(&self.data_path, std::io::Error::other(e)))?;
            let parts: Vec<&str> = rec
                .iter()
                .enumerate()
                .filter(|(i, _)| !skip.contains(i))
                .map(|(_, f)| f)
                .collect();
            lines.push(parts.join(","));
        }
        lines.sort_unstable();
        let mut hasher = Sha256::new();
        for line in &lines {
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Lane means, counts and the label distribution over all committed rows.
    pub fn aggregate_by_lane(&self) -> Result<LaneAggregates> {
        Ok(aggregate_rows(&self.scan()?))
    }

    fn reader(&self) -> Result<csv::Reader<File>> {
        let f = File::open(&self.data_path).map_err(|e| Error::io(&self.data_path, e))?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(f);
        let headers = rdr
            .headers()
            .map_err(|e| Error::io(&self.data_path, std::io::Error::other(e)))?;
        let joined = headers.iter().collect::<Vec<_>>().join(",");
        if joined != WAREHOUSE_HEADER {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unexpected warehouse header: {joined}"),
            });
        }
        Ok(rdr)
    }
}

fn file_len(path: &Path) -> Result<u64> {
    Ok(std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len())
}

fn truncate_to(path: &Path, len: u64) -> Result<()> {
    let f = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.set_len(len).map_err(|e| Error::io(path, e))
}
