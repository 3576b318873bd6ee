//! Randomized broker invariants: routing, ordering, offset accounting and
//! retry equivalence under injected faults.

use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;

use laneflow::mlog::{partition_for_key, Broker, BrokerConfig, Codec, LogMessage};

const GROUP: &str = "props";

fn broker(partitions: u32, batch_size: usize) -> Arc<Broker> {
    let broker = Broker::new(BrokerConfig {
        partitions_per_topic: partitions,
        batch_size,
        retry_backoff_ms: 0,
        ..BrokerConfig::default()
    });
    broker.create_topic("t", partitions).unwrap();
    broker
}

fn produce_all(broker: &Arc<Broker>, msgs: &[(u8, Vec<u8>)]) {
    let mut producer = broker.producer("t").unwrap();
    for (key, payload) in msgs {
        producer.produce(&[*key], payload.clone()).unwrap();
    }
    producer.flush().unwrap();
    assert_eq!(producer.buffered(), 0);
}

/// Reads the whole log through a fresh group, in poll batches of `chunk`.
fn drain(broker: &Arc<Broker>, group: &str, chunk: usize) -> Vec<LogMessage> {
    let consumer = broker.consumer("t", group).unwrap();
    let mut all = Vec::new();
    loop {
        let msgs = consumer.poll(chunk).unwrap();
        if msgs.is_empty() {
            break;
        }
        consumer.commit_through(&msgs).unwrap();
        all.extend(msgs);
    }
    all
}

fn messages() -> impl Strategy<Value = Vec<(u8, Vec<u8>)>> {
    prop::collection::vec(
        (0u8..16, prop::collection::vec(any::<u8>(), 0..12)),
        1..120,
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    /// Every message lands on the partition its key hashes to, and each
    /// key's payloads come back in exactly the order they were produced.
    #[test]
    fn keys_route_stably_and_stay_fifo(
        msgs in messages(),
        partitions in 1u32..=4,
        batch in 1usize..=32,
        chunk in 1usize..=64,
    ) {
        let broker = broker(partitions, batch);
        produce_all(&broker, &msgs);
        let got = drain(&broker, GROUP, chunk);
        prop_assert_eq!(got.len(), msgs.len());

        for m in &got {
            prop_assert_eq!(m.partition, partition_for_key(&m.key, partitions));
        }

        let mut produced_by_key: HashMap<u8, Vec<&[u8]>> = HashMap::new();
        for (k, p) in &msgs {
            produced_by_key.entry(*k).or_default().push(p);
        }
        // Consumption order per key: offset order within the key's partition.
        let mut consumed_by_key: HashMap<u8, Vec<(u64, &[u8])>> = HashMap::new();
        for m in &got {
            consumed_by_key
                .entry(m.key[0])
                .or_default()
                .push((m.offset, &m.payload));
        }
        for (key, mut seen) in consumed_by_key {
            seen.sort_by_key(|(offset, _)| *offset);
            let seen: Vec<&[u8]> = seen.into_iter().map(|(_, p)| p).collect();
            prop_assert_eq!(seen, produced_by_key.remove(&key).unwrap());
        }
        prop_assert!(produced_by_key.is_empty());
    }

    /// Offsets within each partition are dense: exactly 0..watermark, in
    /// poll order, regardless of batching geometry.
    #[test]
    fn offsets_are_dense_and_monotone(
        msgs in messages(),
        partitions in 1u32..=4,
        batch in 1usize..=32,
        chunk in 1usize..=64,
    ) {
        let broker = broker(partitions, batch);
        produce_all(&broker, &msgs);
        let got = drain(&broker, GROUP, chunk);

        let mut next = vec![0u64; partitions as usize];
        for m in &got {
            prop_assert_eq!(m.offset, next[m.partition as usize]);
            next[m.partition as usize] += 1;
        }
        let watermarks = broker.watermarks("t").unwrap();
        prop_assert_eq!(
            watermarks.iter().sum::<u64>(),
            msgs.len() as u64
        );
        prop_assert_eq!(next, watermarks);
    }

    /// Lag equals watermark minus committed, per partition and in total,
    /// at every commit point of a staggered consumption.
    #[test]
    fn lag_is_watermark_minus_committed(
        msgs in messages(),
        partitions in 1u32..=4,
        polls in prop::collection::vec(1usize..40, 1..8),
    ) {
        let broker = broker(partitions, 16);
        let consumer = broker.consumer("t", GROUP).unwrap();
        produce_all(&broker, &msgs);

        let check = |consumer: &laneflow::mlog::Consumer| {
            let watermarks = broker.watermarks("t").unwrap();
            let committed = consumer.committed().unwrap();
            let lag = consumer.lag().unwrap();
            let mut total = 0u64;
            for (p, l) in &lag {
                let c = committed[p];
                assert_eq!(*l, watermarks[*p as usize] - c);
                total += *l;
            }
            assert_eq!(consumer.total_lag().unwrap(), total);
            assert_eq!(broker.total_lag("t", GROUP).unwrap(), total);
            total
        };

        prop_assert_eq!(check(&consumer), msgs.len() as u64);
        for take in polls {
            let got = consumer.poll(take).unwrap();
            consumer.commit_through(&got).unwrap();
            check(&consumer);
        }
        let rest = consumer.poll(usize::MAX).unwrap();
        consumer.commit_through(&rest).unwrap();
        prop_assert_eq!(check(&consumer), 0);
    }

    /// A broker that hits transient append faults within the retry budget
    /// ends up with a log identical to an unfaulted broker's.
    #[test]
    fn absorbed_faults_leave_no_trace(
        msgs in messages(),
        partitions in 1u32..=4,
        batch in 1usize..=32,
        faults in 0u32..=3,
    ) {
        let clean = broker(partitions, batch);
        produce_all(&clean, &msgs);

        let faulted = broker(partitions, batch);
        faulted.inject_append_faults(faults);
        produce_all(&faulted, &msgs);

        prop_assert_eq!(
            clean.watermarks("t").unwrap(),
            faulted.watermarks("t").unwrap()
        );
        let a = drain(&clean, GROUP, 50);
        let b = drain(&faulted, GROUP, 50);
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.partition, y.partition);
            prop_assert_eq!(x.offset, y.offset);
            prop_assert_eq!(&x.key, &y.key);
            prop_assert_eq!(&x.payload, &y.payload);
        }
    }
}

/// A fault burst longer than the retry budget surfaces as backpressure,
/// keeps the batch buffered, and clears once the faults pass.
#[test]
fn fault_burst_beyond_retries_is_reported_then_recovers() {
    let broker = Broker::new(BrokerConfig {
        partitions_per_topic: 1,
        batch_size: 8,
        max_retries: 2,
        retry_backoff_ms: 0,
        codec: Codec::Block,
        ..BrokerConfig::default()
    });
    broker.create_topic("t", 1).unwrap();
    let mut producer = broker.producer("t").unwrap();
    for i in 0..5u8 {
        producer.produce(&[i], vec![i]).unwrap();
    }

    broker.inject_append_faults(3);
    match producer.flush() {
        Err(laneflow::Error::Backpressure { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected backpressure, got {other:?}"),
    }
    assert_eq!(producer.buffered(), 5, "failed batch stays buffered");
    assert_eq!(broker.watermarks("t").unwrap(), vec![0]);

    let report = producer.flush().expect("faults exhausted");
    assert_eq!(report.appended, 5);
    assert_eq!(broker.watermarks("t").unwrap(), vec![5]);
}
