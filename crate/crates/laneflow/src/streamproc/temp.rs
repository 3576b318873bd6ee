//! In-memory staging area between micro-batch processing and the warehouse.

use crate::error::{Error, Result};

use super::{FeatureVector, TrafficRecord};

/// One fully staged micro-batch: the cleaned records of a contiguous offset
/// range plus their feature vectors, row for row.
#[derive(Debug, Clone)]
pub struct StagedBatch {
    /// Stable identity derived from the consumed offset range; the warehouse
    /// ledger dedups on it.
    pub id: String,
    /// Position in this store's staging order.
    pub seq: u64,
    pub records: Vec<TrafficRecord>,
    pub features: Vec<FeatureVector>,
}

/// Buffers staged batches until the flush threshold is reached. A batch is
/// staged whole or not at all, and sequence numbers are contiguous.
#[derive(Debug)]
pub struct TempStore {
    batches: Vec<StagedBatch>,
    next_seq: u64,
    flush_threshold: usize,
    staged_records: usize,
}

impl TempStore {
    pub fn new(flush_threshold: usize) -> TempStore {
        TempStore {
            batches: Vec::new(),
            next_seq: 0,
            flush_threshold,
            staged_records: 0,
        }
    }

    /// Stages one batch and returns its sequence number.
    pub fn stage(
        &mut self,
        id: String,
        records: Vec<TrafficRecord>,
        features: Vec<FeatureVector>,
    ) -> Result<u64> {
        if records.len() != features.len() {
            return Err(Error::LengthMismatch {
                left: records.len(),
                right: features.len(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.staged_records += records.len();
        self.batches.push(StagedBatch {
            id,
            seq,
            records,
            features,
        });
        Ok(seq)
    }

    /// Staged batches in sequence order. Left in place so a failed commit
    /// can retry; call [`TempStore::clear`] once they are durable.
    pub fn batches(&self) -> &[StagedBatch] {
        &self.batches
    }

    pub fn staged_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn staged_records(&self) -> usize {
        self.staged_records
    }

    pub fn flush_threshold(&self) -> usize {
        self.flush_threshold
    }

    /// True once enough records are staged to warrant a warehouse commit.
    pub fn should_flush(&self) -> bool {
        self.staged_records >= self.flush_threshold
    }

    /// Drops all staged batches. Sequence numbering continues where it was.
    pub fn clear(&mut self) {
        self.batches.clear();
        self.staged_records = 0;
    }
}
