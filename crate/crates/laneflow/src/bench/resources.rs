//! Best-effort resident-memory sampling from /proc. Platforms without it
//! get `None` rather than an error.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceSample {
    pub timestamp_ms: i64,
    pub rss_bytes: u64,
}

/// Current resident set size, or None where /proc is absent.
pub fn rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kib: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kib * 1024)
}

pub struct ResourceSampler {
    stop: Arc<AtomicBool>,
    handle: thread::JoinHandle<Vec<ResourceSample>>,
}

impl ResourceSampler {
    /// Starts a background sampler, or returns None when resident memory
    /// cannot be read on this platform.
    pub fn start(interval_ms: u64) -> Option<ResourceSampler> {
        rss_bytes()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = thread::spawn(move || {
            let mut samples = Vec::new();
            loop {
                if let Some(rss) = rss_bytes() {
                    samples.push(ResourceSample {
                        timestamp_ms: clock::now_ms(),
                        rss_bytes: rss,
                    });
                }
                if flag.load(Ordering::Relaxed) {
                    return samples;
                }
                thread::sleep(Duration::from_millis(interval_ms));
            }
        });
        Some(ResourceSampler { stop, handle })
    }

    /// Stops the sampler and returns everything collected so far.
    pub fn stop(self) -> Vec<ResourceSample> {
        self.stop.store(true, Ordering::Relaxed);
        self.handle.join().expect("resource sampler panicked")
    }
}
