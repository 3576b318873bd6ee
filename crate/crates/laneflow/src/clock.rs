//! Monotone wall-aligned millisecond clock.
//!
//! Ingest and commit timestamps must never run backwards relative to each
//! other, so everything in the pipeline stamps time through this clock: the
//! wall clock is read once at first use and advanced by a monotonic timer
//! from then on.

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use once_cell::sync::Lazy;

static ORIGIN: Lazy<(Instant, i64)> = Lazy::new(|| {
    let wall = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0);
    (Instant::now(), wall)
});

/// Milliseconds since the Unix epoch, guaranteed non-decreasing within the
/// process.
pub fn now_ms() -> i64 {
    let (start, wall) = *ORIGIN;
    wall + start.elapsed().as_millis() as i64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn never_decreases() {
        let mut prev = now_ms();
        for _ in 0..1000 {
            let next = now_ms();
            assert!(next >= prev);
            prev = next;
        }
    }
}
