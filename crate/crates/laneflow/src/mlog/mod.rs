//! Embedded partitioned commit log.
//!
//! A [`Broker`] owns named topics, each split into a fixed number of
//! append-only partitions. Producers batch messages per partition, compress
//! them into envelopes and append with bounded retries; consumer groups
//! track committed offsets per partition, and polling always resumes from
//! the committed position (no auto-commit). Backpressure is real: a
//! partition refuses appends while its unconsumed backlog would exceed the
//! configured capacity.
//!
//! Everything lives in memory; the log exists for pipeline semantics, not
//! durability across processes.

pub mod codec;
mod consumer;
mod producer;
pub mod wire;

pub use codec::{decode_batch, encode_batch, Codec, MessageFrame};
pub use consumer::Consumer;
pub use producer::{BatchAck, FlushReport, Producer};

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::clock;
use crate::error::{Error, Result};

/// Topic the pipeline routes telemetry through.
pub const RAW_TOPIC: &str = "raw-traffic-data";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrokerConfig {
    pub partitions_per_topic: u32,
    /// Producer buffer size that triggers an automatic flush.
    pub batch_size: usize,
    /// Retries after the first failed append attempt.
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    /// Maximum unconsumed messages per partition.
    pub queue_capacity: u64,
    pub codec: Codec,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            partitions_per_topic: 4,
            batch_size: 500,
            max_retries: 3,
            retry_backoff_ms: 50,
            queue_capacity: 1_000_000,
            codec: Codec::Block,
        }
    }
}

/// One consumable message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogMessage {
    pub partition: u32,
    pub offset: u64,
    pub key: Vec<u8>,
    pub payload: Vec<u8>,
    pub produce_ts_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicInfo {
    pub name: String,
    pub partitions: u32,
}

/// Appended batch kept in its encoded envelope; decoded on read.
struct StoredBatch {
    base_offset: u64,
    count: u32,
    produce_ts_ms: i64,
    bytes: Vec<u8>,
}

#[derive(Default)]
struct PartitionLog {
    batches: Vec<StoredBatch>,
    /// Next offset to be assigned == number of messages appended.
    watermark: u64,
}

struct TopicState {
    name: String,
    partitions: Vec<Mutex<PartitionLog>>,
    /// Committed offset per partition, per consumer group.
    groups: Mutex<HashMap<String, Vec<u64>>>,
}

impl TopicState {
    /// Smallest committed offset over all groups for `partition`; zero when
    /// no group exists, so an unconsumed topic counts its whole log as
    /// backlog.
    fn min_committed(&self, partition: usize) -> u64 {
        let groups = self.groups.lock().unwrap();
        groups.values().map(|v| v[partition]).min().unwrap_or(0)
    }
}

pub struct Broker {
    cfg: BrokerConfig,
    topics: RwLock<HashMap<String, Arc<TopicState>>>,
    /// Remaining injected append faults (test instrumentation): each
    /// attempt consumes one and fails with a transient error.
    append_faults: AtomicU32,
}

impl Broker {
    pub fn new(cfg: BrokerConfig) -> Arc<Broker> {
        Arc::new(Broker {
            cfg,
            topics: RwLock::new(HashMap::new()),
            append_faults: AtomicU32::new(0),
        })
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.cfg
    }

    pub fn create_topic(&self, name: &str, partitions: u32) -> Result<TopicInfo> {
        if partitions == 0 {
            return Err(Error::Config("topics need at least one partition".into()));
        }
        let mut topics = self.topics.write().unwrap();
        if topics.contains_key(name) {
            return Err(Error::TopicExists(name.to_string()));
        }
        let state = TopicState {
            name: name.to_string(),
            partitions: (0..partitions).map(|_| Mutex::new(PartitionLog::default())).collect(),
            groups: Mutex::new(HashMap::new()),
        };
        topics.insert(name.to_string(), Arc::new(state));
        Ok(TopicInfo {
            name: name.to_string(),
            partitions,
        })
    }

    fn topic(&self, name: &str) -> Result<Arc<TopicState>> {
        self.topics
            .read()
            .unwrap()
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownTopic(name.to_string()))
    }

    pub fn topic_info(&self, name: &str) -> Result<TopicInfo> {
        let t = self.topic(name)?;
        Ok(TopicInfo {
            name: t.name.clone(),
            partitions: t.partitions.len() as u32,
        })
    }

    /// High watermark (next offset) per partition.
    pub fn watermarks(&self, topic: &str) -> Result<Vec<u64>> {
        let t = self.topic(topic)?;
        Ok(t.partitions.iter().map(|p| p.lock().unwrap().watermark).collect())
    }

    /// Arms the fault injector: the next `n` append attempts fail with a
    /// transient error before touching any partition.
    pub fn inject_append_faults(&self, n: u32) {
        self.append_faults.store(n, Ordering::SeqCst);
    }

    fn consume_fault(&self) -> bool {
        self.append_faults
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |v| v.checked_sub(1))
            .is_ok()
    }

    /// Appends an encoded envelope of `count` messages to one partition.
    /// Refuses (transiently) while the partition backlog would exceed
    /// `queue_capacity`. Returns the offset range assigned.
    pub(crate) fn append_encoded(
        &self,
        topic: &str,
        partition: u32,
        bytes: Vec<u8>,
        count: u32,
    ) -> Result<BatchAck> {
        let t = self.topic(topic)?;
        let pi = partition as usize;
        if pi >= t.partitions.len() {
            return Err(Error::UnknownPartition {
                topic: topic.to_string(),
                partition,
            });
        }
        if self.consume_fault() {
            return Err(Error::Transient {
                topic: topic.to_string(),
                partition,
                reason: "injected fault".into(),
            });
        }
        let mut log = t.partitions[pi].lock().unwrap();
        let backlog = log.watermark - t.min_committed(pi);
        if backlog + count as u64 > self.cfg.queue_capacity {
            return Err(Error::Transient {
                topic: topic.to_string(),
                partition,
                reason: format!(
                    "queue full: backlog {backlog} + {count} exceeds capacity {}",
                    self.cfg.queue_capacity
                ),
            });
        }
        let base_offset = log.watermark;
        log.batches.push(StoredBatch {
            base_offset,
            count,
            produce_ts_ms: clock::now_ms(),
            bytes,
        });
        log.watermark += count as u64;
        Ok(BatchAck {
            partition,
            base_offset,
            count,
        })
    }

    /// Reads up to `max` messages of one partition starting at `from`.
    pub(crate) fn read_from(
        &self,
        topic: &str,
        partition: u32,
        from: u64,
        max: usize,
    ) -> Result<Vec<LogMessage>> {
        let t = self.topic(topic)?;
        let pi = partition as usize;
        if pi >= t.partitions.len() {
            return Err(Error::UnknownPartition {
                topic: topic.to_string(),
                partition,
            });
        }
        let log = t.partitions[pi].lock().unwrap();
        let mut out = Vec::new();
        if from >= log.watermark || max == 0 {
            return Ok(out);
        }
        // Batches are sorted by base offset; start at the first one whose
        // range reaches `from`.
        let start = log
            .batches
            .partition_point(|b| b.base_offset + b.count as u64 <= from);
        'outer: for batch in &log.batches[start..] {
            let (_, frames) = decode_batch(&batch.bytes)?;
            debug_assert_eq!(frames.len(), batch.count as usize);
            for (i, frame) in frames.into_iter().enumerate() {
                let offset = batch.base_offset + i as u64;
                if offset < from {
                    continue;
                }
                out.push(LogMessage {
                    partition,
                    offset,
                    key: frame.key,
                    payload: frame.payload,
                    produce_ts_ms: batch.produce_ts_ms,
                });
                if out.len() == max {
                    break 'outer;
                }
            }
        }
        Ok(out)
    }

    /// Ensures `group` exists on `topic` with zeroed offsets.
    pub(crate) fn register_group(&self, topic: &str, group: &str) -> Result<()> {
        let t = self.topic(topic)?;
        let n = t.partitions.len();
        t.groups
            .lock()
            .unwrap()
            .entry(group.to_string())
            .or_insert_with(|| vec![0; n]);
        Ok(())
    }

    /// Committed offset per partition for `group`.
    pub fn committed(&self, topic: &str, group: &str) -> Result<Vec<u64>> {
        let t = self.topic(topic)?;
        let groups = t.groups.lock().unwrap();
        match groups.get(group) {
            Some(v) => Ok(v.clone()),
            None => Err(Error::UnknownGroup {
                topic: topic.to_string(),
                group: group.to_string(),
            }),
        }
    }

    /// Commits offsets for a subset of partitions. An offset is the number
    /// of messages consumed, so it may equal the watermark but never exceed
    /// it, and never regress.
    pub fn commit_offsets(
        &self,
        topic: &str,
        group: &str,
        offsets: &HashMap<u32, u64>,
    ) -> Result<()> {
        let t = self.topic(topic)?;
        let watermarks: Vec<u64> = t
            .partitions
            .iter()
            .map(|p| p.lock().unwrap().watermark)
            .collect();
        let mut groups = t.groups.lock().unwrap();
        let committed = groups
            .get_mut(group)
            .ok_or_else(|| Error::UnknownGroup {
                topic: topic.to_string(),
                group: group.to_string(),
            })?;
        // Validate everything before mutating anything.
        for (&p, &off) in offsets {
            let pi = p as usize;
            if pi >= committed.len() {
                return Err(Error::UnknownPartition {
                    topic: topic.to_string(),
                    partition: p,
                });
            }
            if off > watermarks[pi] {
                return Err(Error::OffsetBeyondWatermark {
                    partition: p,
                    offset: off,
                    watermark: watermarks[pi],
                });
            }
            if off < committed[pi] {
                return Err(Error::OffsetRegression {
                    partition: p,
                    offset: off,
                    committed: committed[pi],
                });
            }
        }
        for (&p, &off) in offsets {
            committed[p as usize] = off;
        }
        Ok(())
    }

    /// Lag (watermark minus committed) per partition for `group`.
    pub fn lag(&self, topic: &str, group: &str) -> Result<Vec<u64>> {
        let t = self.topic(topic)?;
        let committed = self.committed(topic, group)?;
        Ok(t.partitions
            .iter()
            .zip(committed)
            .map(|(p, c)| p.lock().unwrap().watermark - c)
            .collect())
    }

    pub fn total_lag(&self, topic: &str, group: &str) -> Result<u64> {
        Ok(self.lag(topic, group)?.iter().sum())
    }

    /// Total unconsumed backlog over all partitions: watermark minus the
    /// smallest committed offset of any group (whole log if no group).
    pub fn total_backlog(&self, topic: &str) -> Result<u64> {
        let t = self.topic(topic)?;
        Ok((0..t.partitions.len())
            .map(|pi| {
                let wm = t.partitions[pi].lock().unwrap().watermark;
                wm - t.min_committed(pi)
            })
            .sum())
    }

    /// Creates a producer for `topic`.
    pub fn producer(self: &Arc<Self>, topic: &str) -> Result<Producer> {
        let info = self.topic_info(topic)?;
        Ok(Producer::new(Arc::clone(self), info))
    }

    /// Creates a consumer in `group` assigned all partitions of `topic`.
    pub fn consumer(self: &Arc<Self>, topic: &str, group: &str) -> Result<Consumer> {
        let info = self.topic_info(topic)?;
        let all: Vec<u32> = (0..info.partitions).collect();
        self.consumer_for(topic, group, all)
    }

    /// Creates a consumer in `group` assigned an explicit partition set.
    pub fn consumer_for(
        self: &Arc<Self>,
        topic: &str,
        group: &str,
        partitions: Vec<u32>,
    ) -> Result<Consumer> {
        let info = self.topic_info(topic)?;
        for &p in &partitions {
            if p >= info.partitions {
                return Err(Error::UnknownPartition {
                    topic: topic.to_string(),
                    partition: p,
                });
            }
        }
        self.register_group(topic, group)?;
        Ok(Consumer::new(
            Arc::clone(self),
            topic.to_string(),
            group.to_string(),
            partitions,
        ))
    }
}

/// Stable 64-bit FNV-1a; keyed routing must not depend on the process.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Partition a key routes to.
pub fn partition_for_key(key: &[u8], partitions: u32) -> u32 {
    (stable_hash(key) % partitions as u64) as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    fn broker_with(f: impl FnOnce(&mut BrokerConfig)) -> Arc<Broker> {
        let mut cfg = BrokerConfig::default();
        f(&mut cfg);
        Broker::new(cfg)
    }

    #[test]
    fn new_topic_has_zero_watermarks() {
        let b = Broker::new(BrokerConfig::default());
        let info = b.create_topic("t", 4).unwrap();
        assert_eq!(info.partitions, 4);
        assert_eq!(b.watermarks("t").unwrap(), vec![0, 0, 0, 0]);
    }

    #[test]
    fn zero_partitions_and_duplicates_are_rejected() {
        let b = Broker::new(BrokerConfig::default());
        assert!(matches!(b.create_topic("t", 0), Err(Error::Config(_))));
        b.create_topic("t", 1).unwrap();
        assert!(matches!(b.create_topic("t", 2), Err(Error::TopicExists(_))));
        assert!(matches!(b.watermarks("missing"), Err(Error::UnknownTopic(_))));
    }

    #[test]
    fn same_key_messages_get_dense_offsets_in_send_order() {
        let b = broker_with(|c| c.partitions_per_topic = 1);
        b.create_topic("t", 1).unwrap();
        let mut p = b.producer("t").unwrap();
        for i in 0..3u8 {
            p.produce(b"same-key", vec![i]).unwrap();
        }
        p.flush().unwrap();
        let msgs = b.read_from("t", 0, 0, 100).unwrap();
        assert_eq!(msgs.len(), 3);
        for (i, m) in msgs.iter().enumerate() {
            assert_eq!(m.offset, i as u64);
            assert_eq!(m.payload, vec![i as u8]);
        }
    }

    #[test]
    fn produce_auto_flushes_at_batch_size() {
        let b = Broker::new(BrokerConfig::default());
        b.create_topic("t", 4).unwrap();
        let mut p = b.producer("t").unwrap();
        let mut auto_flushes = 0;
        for i in 0..1200u32 {
            if p.produce(format!("k{i}").as_bytes(), vec![0]).unwrap().is_some() {
                auto_flushes += 1;
            }
        }
        assert_eq!(auto_flushes, 2);
        assert_eq!(p.flush_count(), 2);
        assert_eq!(p.buffered(), 200);
        assert_eq!(b.watermarks("t").unwrap().iter().sum::<u64>(), 1000);
        let report = p.flush().unwrap();
        assert_eq!(report.appended, 200);
        assert_eq!(b.watermarks("t").unwrap().iter().sum::<u64>(), 1200);
    }

    #[test]
    fn empty_flush_is_a_no_op() {
        let b = Broker::new(BrokerConfig::default());
        b.create_topic("t", 2).unwrap();
        let mut p = b.producer("t").unwrap();
        let report = p.flush().unwrap();
        assert_eq!(report.appended, 0);
        assert!(report.acks.is_empty());
        assert_eq!(p.flush_count(), 0);
    }

    #[test]
    fn capacity_overflow_fails_with_attempt_count() {
        let b = broker_with(|c| {
            c.queue_capacity = 10;
            c.batch_size = 1;
            c.max_retries = 3;
            c.retry_backoff_ms = 1;
        });
        b.create_topic("t", 1).unwrap();
        let mut p = b.producer("t").unwrap();
        for i in 0..10u8 {
            p.produce(b"k", vec![i]).unwrap();
        }
        let err = p.produce(b"k", vec![10]).unwrap_err();
        match err {
            Error::Backpressure { attempts, partition, .. } => {
                assert_eq!(attempts, 4);
                assert_eq!(partition, 0);
            }
            other => panic!("expected backpressure, got {other}"),
        }
        assert_eq!(b.watermarks("t").unwrap()[0], 10);
    }

    #[test]
    fn capacity_frees_up_after_consumption() {
        let b = broker_with(|c| {
            c.queue_capacity = 10;
            c.batch_size = 1;
            c.max_retries = 0;
            c.retry_backoff_ms = 0;
        });
        b.create_topic("t", 1).unwrap();
        let c = b.consumer("t", "g").unwrap();
        let mut p = b.producer("t").unwrap();
        for i in 0..10u8 {
            p.produce(b"k", vec![i]).unwrap();
        }
        assert!(p.produce(b"k", vec![10]).is_err());
        assert_eq!(p.buffered(), 1, "refused message stays buffered");
        let msgs = c.poll(10).unwrap();
        c.commit_through(&msgs).unwrap();
        // Capacity freed: the next flush appends the retained message and
        // the new one.
        p.produce(b"k", vec![11]).unwrap();
        assert_eq!(b.watermarks("t").unwrap()[0], 12);
        assert_eq!(p.buffered(), 0);
    }

    #[test]
    fn poll_without_commit_rereads_the_same_head() {
        let b = broker_with(|c| c.batch_size = 10);
        b.create_topic("t", 1).unwrap();
        let mut p = b.producer("t").unwrap();
        for i in 0..10u8 {
            p.produce(b"k", vec![i]).unwrap();
        }
        let c = b.consumer("t", "g").unwrap();
        let first = c.poll(500).unwrap();
        assert_eq!(first.len(), 10);
        let again = c.poll(500).unwrap();
        assert_eq!(first[0], again[0]);
        assert_eq!(first.len(), again.len());

        let four = c.poll(4).unwrap();
        assert_eq!(four.len(), 4);
        assert_eq!(
            four.iter().map(|m| m.offset).collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
    }

    #[test]
    fn commit_moves_lag_and_validates_bounds() {
        let b = broker_with(|c| c.batch_size = 10);
        b.create_topic("t", 1).unwrap();
        let mut p = b.producer("t").unwrap();
        for i in 0..10u8 {
            p.produce(b"k", vec![i]).unwrap();
        }
        let c = b.consumer("t", "g").unwrap();
        assert_eq!(c.total_lag().unwrap(), 10);

        c.commit(&HashMap::from([(0u32, 4u64)])).unwrap();
        assert_eq!(c.total_lag().unwrap(), 6);

        let err = c.commit(&HashMap::from([(0u32, 3u64)])).unwrap_err();
        assert!(matches!(err, Error::OffsetRegression { committed: 4, offset: 3, .. }));

        let err = c.commit(&HashMap::from([(0u32, 11u64)])).unwrap_err();
        assert!(matches!(err, Error::OffsetBeyondWatermark { watermark: 10, offset: 11, .. }));

        c.commit(&HashMap::from([(0u32, 10u64)])).unwrap();
        assert_eq!(c.total_lag().unwrap(), 0);
    }

    #[test]
    fn injected_faults_exhaust_then_recover() {
        let b = broker_with(|c| {
            c.batch_size = 1;
            c.max_retries = 3;
            c.retry_backoff_ms = 1;
        });
        b.create_topic("t", 1).unwrap();
        let mut p = b.producer("t").unwrap();

        // More faults than attempts: the produce call gives up, the message
        // stays buffered.
        b.inject_append_faults(4);
        let err = p.produce(b"k", vec![1]).unwrap_err();
        assert!(matches!(err, Error::Backpressure { attempts: 4, .. }));
        assert_eq!(p.buffered(), 1);
        assert_eq!(b.watermarks("t").unwrap()[0], 0);

        // Fewer faults than attempts: retries absorb them and the retained
        // message goes through with the new one, exactly once each.
        b.inject_append_faults(2);
        p.produce(b"k", vec![2]).unwrap();
        assert_eq!(b.watermarks("t").unwrap()[0], 2);
        let payloads: Vec<Vec<u8>> = b
            .read_from("t", 0, 0, 10)
            .unwrap()
            .into_iter()
            .map(|m| m.payload)
            .collect();
        assert_eq!(payloads, vec![vec![1], vec![2]]);
    }

    #[test]
    fn retry_equivalence_with_and_without_faults() {
        let payloads: Vec<Vec<u8>> = (0..100u8).map(|i| vec![i, i.wrapping_mul(3)]).collect();
        let run = |faults: u32| {
            let b = broker_with(|c| {
                c.batch_size = 7;
                c.max_retries = 3;
                c.retry_backoff_ms = 1;
            });
            b.create_topic("t", 4).unwrap();
            let mut p = b.producer("t").unwrap();
            b.inject_append_faults(faults);
            for (i, payload) in payloads.iter().enumerate() {
                p.produce(format!("key-{i}").as_bytes(), payload.clone()).unwrap();
            }
            p.flush().unwrap();
            let mut contents = Vec::new();
            for part in 0..4 {
                let msgs = b.read_from("t", part, 0, 1000).unwrap();
                contents.push(
                    msgs.into_iter()
                        .map(|m| (m.offset, m.key, m.payload))
                        .collect::<Vec<_>>(),
                );
            }
            contents
        };
        assert_eq!(run(0), run(3));
    }

    #[test]
    fn keyed_routing_is_stable_and_complete() {
        for parts in [1u32, 3, 4, 16] {
            for key in [&b"a"[..], b"vehicle-123", b""] {
                let p = partition_for_key(key, parts);
                assert!(p < parts);
                assert_eq!(p, partition_for_key(key, parts));
            }
        }
        assert_eq!(stable_hash(b""), 0xcbf2_9ce4_8422_2325);
    }
}
