//! Group consumer without auto-commit.
//!
//! Polling always starts from the committed offset, so uncommitted reads
//! repeat after a restart: at-least-once by construction.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::Result;

use super::{Broker, LogMessage};

pub struct Consumer {
    broker: Arc<Broker>,
    topic: String,
    group: String,
    assigned: Vec<u32>,
}

impl Consumer {
    pub(crate) fn new(
        broker: Arc<Broker>,
        topic: String,
        group: String,
        assigned: Vec<u32>,
    ) -> Consumer {
        Consumer {
            broker,
            topic,
            group,
            assigned,
        }
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn group(&self) -> &str {
        &self.group
    }

    pub fn assigned(&self) -> &[u32] {
        &self.assigned
    }

    /// Reads up to `max_records` from the committed positions, walking the
    /// assigned partitions in order and preserving offset order within each.
    pub fn poll(&self, max_records: usize) -> Result<Vec<LogMessage>> {
        let committed = self.broker.committed(&self.topic, &self.group)?;
        let mut out = Vec::new();
        for &p in &self.assigned {
            if out.len() >= max_records {
                break;
            }
            let from = committed[p as usize];
            let mut msgs =
                self.broker
                    .read_from(&self.topic, p, from, max_records - out.len())?;
            out.append(&mut msgs);
        }
        Ok(out)
    }

    /// Commits explicit offsets (messages consumed per partition).
    pub fn commit(&self, offsets: &HashMap<u32, u64>) -> Result<()> {
        self.broker.commit_offsets(&self.topic, &self.group, offsets)
    }

    /// Commits past every message in `msgs` (offset + 1 per partition).
    pub fn commit_through(&self, msgs: &[LogMessage]) -> Result<()> {
        let mut offsets: HashMap<u32, u64> = HashMap::new();
        for m in msgs {
            let next = m.offset + 1;
            offsets
                .entry(m.partition)
                .and_modify(|v| *v = (*v).max(next))
                .or_insert(next);
        }
        if offsets.is_empty() {
            return Ok(());
        }
        self.commit(&offsets)
    }

    /// Committed offset per assigned partition.
    pub fn committed(&self) -> Result<BTreeMap<u32, u64>> {
        let all = self.broker.committed(&self.topic, &self.group)?;
        Ok(self
            .assigned
            .iter()
            .map(|&p| (p, all[p as usize]))
            .collect())
    }

    /// Lag per assigned partition: watermark minus committed.
    pub fn lag(&self) -> Result<BTreeMap<u32, u64>> {
        let all = self.broker.lag(&self.topic, &self.group)?;
        Ok(self
            .assigned
            .iter()
            .map(|&p| (p, all[p as usize]))
            .collect())
    }

    pub fn total_lag(&self) -> Result<u64> {
        Ok(self.lag()?.values().sum())
    }
}
