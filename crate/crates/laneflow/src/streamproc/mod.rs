//! Micro-batch stream processing between the log and the warehouse.
//!
//! Workers poll raw JSON payloads from the log, fill gaps with fixed
//! defaults, project feature vectors, and stage the results in a temporary
//! store. A separate commit step appends staged batches to the CSV warehouse,
//! where a batch ledger makes the append idempotent: polling is at-least-once,
//! the warehouse effect is exactly-once.

mod processor;
mod temp;
mod warehouse;

pub use processor::{DeadLetter, MicroBatchProcessor};
pub use temp::{StagedBatch, TempStore};
pub use warehouse::{Warehouse, WarehouseRow, WAREHOUSE_HEADER};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datagen::{TrafficRecordRaw, Weather};
use crate::error::Result;
use crate::learner::CongestionLabel;

/// Default number of records drained per micro-batch poll.
pub const DEFAULT_CONSUMER_BATCH: usize = 500;
/// Default staged-record count that triggers a warehouse commit.
pub const DEFAULT_FLUSH_THRESHOLD: usize = 100_000;

/// Fill for missing velocities, accelerations, headways and coordinates.
const FILL_NUMERIC: f64 = 0.0;
/// Fill for missing lane and section ids.
const FILL_ID: i32 = -1;

/// A raw record after gap filling, plus the two pipeline timestamps.
/// `ingest_ts_ms` is the broker produce time; `commit_ts_ms` stays 0 until
/// the warehouse stamps it at commit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficRecord {
    pub vehicle_id: u64,
    pub frame_id: u64,
    pub timestamp_ms: i64,
    pub lane_id: i32,
    pub section_id: i32,
    pub global_x: f64,
    pub global_y: f64,
    pub v_vel: f64,
    pub v_acc: f64,
    pub space_headway: f64,
    pub time_headway: f64,
    pub weather: Weather,
    pub ingest_ts_ms: i64,
    pub commit_ts_ms: i64,
}

impl TrafficRecord {
    /// The raw view of a cleaned record: every optional field present.
    pub fn to_raw(&self) -> TrafficRecordRaw {
        TrafficRecordRaw {
            vehicle_id: self.vehicle_id,
            frame_id: self.frame_id,
            timestamp_ms: self.timestamp_ms,
            lane_id: Some(self.lane_id),
            section_id: Some(self.section_id),
            global_x: Some(self.global_x),
            global_y: Some(self.global_y),
            v_vel: Some(self.v_vel),
            v_acc: Some(self.v_acc),
            space_headway: Some(self.space_headway),
            time_headway: Some(self.time_headway),
            weather: self.weather,
        }
    }
}

/// Fills every gap with its fixed default; present values pass through
/// bit-identical. Ids default to -1, every other numeric field to 0.0.
pub fn clean(raw: &TrafficRecordRaw, ingest_ts_ms: i64) -> TrafficRecord {
    TrafficRecord {
        vehicle_id: raw.vehicle_id,
        frame_id: raw.frame_id,
        timestamp_ms: raw.timestamp_ms,
        lane_id: raw.lane_id.unwrap_or(FILL_ID),
        section_id: raw.section_id.unwrap_or(FILL_ID),
        global_x: raw.global_x.unwrap_or(FILL_NUMERIC),
        global_y: raw.global_y.unwrap_or(FILL_NUMERIC),
        v_vel: raw.v_vel.unwrap_or(FILL_NUMERIC),
        v_acc: raw.v_acc.unwrap_or(FILL_NUMERIC),
        space_headway: raw.space_headway.unwrap_or(FILL_NUMERIC),
        time_headway: raw.time_headway.unwrap_or(FILL_NUMERIC),
        weather: raw.weather,
        ingest_ts_ms,
        commit_ts_ms: 0,
    }
}

/// Model feature columns, in the fixed order shared by every consumer of a
/// [`FeatureVector`].
pub const FEATURE_NAMES: [&str; 4] = ["v_Vel", "v_Acc", "Space_Headway", "Time_Headway"];

/// The 4 model features of one record: velocity, acceleration, space
/// headway, time headway, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; 4]);

impl FeatureVector {
    pub fn v_vel(&self) -> f64 {
        self.0[0]
    }

    pub fn v_acc(&self) -> f64 {
        self.0[1]
    }

    pub fn space_headway(&self) -> f64 {
        self.0[2]
    }

    pub fn time_headway(&self) -> f64 {
        self.0[3]
    }
}

/// Projects a cleaned record onto its feature vector.
pub fn featurize(rec: &TrafficRecord) -> FeatureVector {
    FeatureVector([rec.v_vel, rec.v_acc, rec.space_headway, rec.time_headway])
}

/// Per-lane summary statistics over committed warehouse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneStats {
    pub count: u64,
    pub mean_v_vel: f64,
    pub mean_space_headway: f64,
}

/// Lane-keyed aggregates plus the global congestion-label distribution.
/// Lane -1 (unknown lane after filling) is its own bucket.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LaneAggregates {
    pub lanes: BTreeMap<i32, LaneStats>,
    pub label_counts: BTreeMap<CongestionLabel, u64>,
    pub total_rows: u64,
}

/// Single-pass means and counts per lane over the given rows.
pub fn aggregate_rows(rows: &[WarehouseRow]) -> LaneAggregates {
    let mut sums: BTreeMap<i32, (u64, f64, f64)> = BTreeMap::new();
    let mut label_counts: BTreeMap<CongestionLabel, u64> = BTreeMap::new();
    for row in rows {
        let e = sums.entry(row.lane_id).or_insert((0, 0.0, 0.0));
        e.0 += 1;
        e.1 += row.v_vel;
        e.2 += row.space_headway;
        *label_counts.entry(row.congestion_label).or_insert(0) += 1;
    }
    let lanes = sums
        .into_iter()
        .map(|(lane, (count, vel, sh))| {
            let n = count as f64;
            (
                lane,
                LaneStats {
                    count,
                    mean_v_vel: vel / n,
                    mean_space_headway: sh / n,
                },
            )
        })
        .collect();
    LaneAggregates {
        lanes,
        label_counts,
        total_rows: rows.len() as u64,
    }
}

/// Appends every staged batch to the warehouse and clears the store.
///
/// New rows get their congestion label from `labeler` at commit time. Batches
/// already in the warehouse ledger are skipped, so replaying a store after a
/// crash is harmless. On error the store is left untouched for a retry and
/// the warehouse shows no partial append.
pub fn commit_to_warehouse<F>(
    temp: &mut TempStore,
    warehouse: &mut Warehouse,
    labeler: F,
) -> Result<u64>
where
    F: Fn(&FeatureVector) -> CongestionLabel,
{
    if temp.staged_batches() == 0 {
        return Ok(0);
    }
    let appended = warehouse.commit_batches(temp.batches(), labeler)?;
    temp.clear();
    Ok(appended)
}
