//! Batching producer with keyed routing and bounded retry.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use crate::error::{Error, Result};

use super::codec::{encode_batch, MessageFrame};
use super::{partition_for_key, Broker, TopicInfo};

/// Acknowledgment for one appended batch: the offset range it occupies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchAck {
    pub partition: u32,
    pub base_offset: u64,
    pub count: u32,
}

/// Outcome of one flush: every batch appended during it.
#[derive(Debug, Clone, Default)]
pub struct FlushReport {
    pub appended: usize,
    pub acks: Vec<BatchAck>,
}

/// Buffers messages per partition and appends them as compressed batches.
/// Not shareable between threads; create one per producing thread.
pub struct Producer {
    broker: Arc<Broker>,
    topic: String,
    partitions: u32,
    buffered: BTreeMap<u32, Vec<MessageFrame>>,
    buffered_total: usize,
    flush_count: u64,
    produced_total: u64,
}

impl Producer {
    pub(crate) fn new(broker: Arc<Broker>, info: TopicInfo) -> Producer {
        Producer {
            broker,
            topic: info.name,
            partitions: info.partitions,
            buffered: BTreeMap::new(),
            buffered_total: 0,
            flush_count: 0,
            produced_total: 0,
        }
    }

    /// Buffers one message, routing it by key hash. When the buffer reaches
    /// the configured batch size the whole buffer is flushed and the flush
    /// report returned.
    pub fn produce(&mut self, key: &[u8], payload: Vec<u8>) -> Result<Option<FlushReport>> {
        let partition = partition_for_key(key, self.partitions);
        self.buffered.entry(partition).or_default().push(MessageFrame {
            key: key.to_vec(),
            payload,
        });
        self.buffered_total += 1;
        self.produced_total += 1;
        if self.buffered_total >= self.broker.config().batch_size {
            return Ok(Some(self.flush()?));
        }
        Ok(None)
    }

    /// Appends all buffered messages, partition by partition in partition
    /// order, splitting each into batches of at most `batch_size`. Failed
    /// appends are retried `max_retries` times with a fixed backoff; on
    /// exhaustion the error reports the attempt count and the unappended
    /// messages stay buffered.
    pub fn flush(&mut self) -> Result<FlushReport> {
        if self.buffered_total == 0 {
            return Ok(FlushReport::default());
        }
        let batch_size = self.broker.config().batch_size.max(1);
        let codec = self.broker.config().codec;
        let mut report = FlushReport::default();
        let partitions: Vec<u32> = self.buffered.keys().copied().collect();
        for partition in partitions {
            let mut frames = self.buffered.remove(&partition).unwrap_or_default();
            let mut done = 0usize;
            while done < frames.len() {
                let take = (frames.len() - done).min(batch_size);
                let outcome = encode_batch(codec, &frames[done..done + take]).and_then(|bytes| {
                    self.append_with_retry(partition, bytes, take as u32)
                });
                match outcome {
                    Ok(ack) => {
                        done += take;
                        self.buffered_total -= take;
                        report.appended += take;
                        report.acks.push(ack);
                    }
                    Err(e) => {
                        // Keep what could not be appended; appended batches
                        // stay appended (at-least-once, never silent loss).
                        frames.drain(..done);
                        self.buffered.insert(partition, frames);
                        return Err(e);
                    }
                }
            }
        }
        self.flush_count += 1;
        Ok(report)
    }

    fn append_with_retry(&self, partition: u32, bytes: Vec<u8>, count: u32) -> Result<BatchAck> {
        let max_retries = self.broker.config().max_retries;
        let backoff = Duration::from_millis(self.broker.config().retry_backoff_ms);
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.broker.append_encoded(&self.topic, partition, bytes.clone(), count) {
                Ok(ack) => return Ok(ack),
                Err(e) if e.is_transient() && attempts <= max_retries => {
                    std::thread::sleep(backoff);
                }
                Err(e) if e.is_transient() => {
                    return Err(Error::Backpressure {
                        topic: self.topic.clone(),
                        partition,
                        attempts,
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Messages buffered but not yet appended.
    pub fn buffered(&self) -> usize {
        self.buffered_total
    }

    /// Number of non-empty flushes performed (automatic and explicit).
    pub fn flush_count(&self) -> u64 {
        self.flush_count
    }

    /// Messages accepted by `produce` so far.
    pub fn produced_total(&self) -> u64 {
        self.produced_total
    }
}
