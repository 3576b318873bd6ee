//! Polls the log, cleans and featurizes records, and stages them for commit.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::mlog::{wire, Consumer, LogMessage};

use super::temp::TempStore;
use super::{clean, featurize};

/// A message that failed to deserialize, kept aside so the batch can go on.
#[derive(Debug, Clone)]
pub struct DeadLetter {
    pub partition: u32,
    pub offset: u64,
    pub reason: String,
    pub payload: Vec<u8>,
}

/// One stream worker: drains its assigned partitions in micro-batches and
/// stages cleaned records in its own temp store.
///
/// Offsets are committed only after staging succeeds, so a crash between the
/// two replays the same range on restart. Batch ids are derived from the
/// consumed offset range; a replay polls from the same committed offset with
/// the same cap, reproduces the same id, and the warehouse ledger drops the
/// duplicate.
pub struct MicroBatchProcessor {
    consumer: Consumer,
    batch_size: usize,
    temp: TempStore,
    dead_letters: BTreeMap<(u32, u64), DeadLetter>,
    skip_next_offset_commit: bool,
    polled: u64,
}

impl MicroBatchProcessor {
    pub fn new(consumer: Consumer, batch_size: usize, flush_threshold: usize) -> Self {
        MicroBatchProcessor {
            consumer,
            batch_size,
            temp: TempStore::new(flush_threshold),
            dead_letters: BTreeMap::new(),
            skip_next_offset_commit: false,
            polled: 0,
        }
    }

    /// Polls up to the configured batch size, stages one batch per partition
    /// actually read, and commits the consumed offsets. Returns the staged
    /// batch ids; empty when the log had nothing new.
    pub fn process_micro_batch(&mut self) -> Result<Vec<String>> {
        let msgs = self.consumer.poll(self.batch_size)?;
        if msgs.is_empty() {
            return Ok(Vec::new());
        }

        let mut groups: BTreeMap<u32, Vec<&LogMessage>> = BTreeMap::new();
        for m in &msgs {
            groups.entry(m.partition).or_default().push(m);
        }

        let mut ids = Vec::new();
        for (partition, group) in &groups {
            let first = group.first().expect("nonempty group").offset;
            let last = group.last().expect("nonempty group").offset;
            let mut records = Vec::with_capacity(group.len());
            let mut features = Vec::with_capacity(group.len());
            for m in group {
                match wire::decode(&m.payload) {
                    Ok(raw) => {
                        let rec = clean(&raw, m.produce_ts_ms);
                        features.push(featurize(&rec));
                        records.push(rec);
                    }
                    Err(e) => {
                        self.dead_letters.insert(
                            (*partition, m.offset),
                            DeadLetter {
                                partition: *partition,
                                offset: m.offset,
                                reason: e.to_string(),
                                payload: m.payload.clone(),
                            },
                        );
                    }
                }
            }
            if !records.is_empty() {
                let id = format!(
                    "{}-p{partition}-{first}-{last}",
                    self.consumer.topic()
                );
                self.temp.stage(id.clone(), records, features)?;
                ids.push(id);
            }
        }

        self.polled += msgs.len() as u64;
        if self.skip_next_offset_commit {
            self.skip_next_offset_commit = false;
        } else {
            self.consumer.commit_through(&msgs)?;
        }
        Ok(ids)
    }

    pub fn consumer(&self) -> &Consumer {
        &self.consumer
    }

    pub fn temp(&self) -> &TempStore {
        &self.temp
    }

    pub fn temp_mut(&mut self) -> &mut TempStore {
        &mut self.temp
    }

    /// Dead letters keyed by (partition, offset); a replayed range
    /// overwrites rather than double-counting.
    pub fn dead_letters(&self) -> impl Iterator<Item = &DeadLetter> {
        self.dead_letters.values()
    }

    pub fn dead_letter_count(&self) -> usize {
        self.dead_letters.len()
    }

    /// Messages seen across all polls, replays included.
    pub fn polled(&self) -> u64 {
        self.polled
    }

    /// Test hook: the next successful staging skips its offset commit,
    /// simulating a crash between staging and commit.
    pub fn inject_skip_next_offset_commit(&mut self) {
        self.skip_next_offset_commit = true;
    }
}
