//! Seeded synthetic telemetry generation.
//!
//! Records are drawn from a three-regime mixture over velocity and driver
//! time gap; spacing derives from the two. Each record gets its own
//! counter-derived RNG stream, so output is bit-identical for a given seed
//! no matter how the index range is chunked, and tests can re-derive any
//! single record's draws independently.

mod csv_io;

pub use csv_io::{read_csv, write_csv, CSV_HEADER};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound of the plausible velocity range in m/s; noise injection
/// scrambles velocities uniformly over `[0, NOISE_VEL_MAX]`.
pub const NOISE_VEL_MAX: f64 = 40.0;
/// Velocity floor for headway derivation: spacing and closing time are
/// evaluated at no slower than this crawl speed, so both stay bounded and
/// continuous through stop-and-go traffic.
pub const MIN_DIVISOR_VEL: f64 = 3.0;
/// Space headway is clamped to this floor (meters): vehicles never overlap.
pub const MIN_SPACE_HEADWAY: f64 = 0.5;
/// Drawn time gaps are clamped to this floor (seconds): tailgating has a
/// physical limit.
pub const MIN_TIME_GAP: f64 = 0.2;
/// Sections per lane covered by the road directory.
pub const SECTION_COUNT: u32 = 20;
/// Distinct vehicles cycled through while generating.
const VEHICLE_POOL: u64 = 1000;
/// Fixed epoch base for synthetic timestamps (ms).
const BASE_TIMESTAMP_MS: i64 = 1_700_000_000_000;
/// Frame cadence of the simulated sensors (ms).
const FRAME_INTERVAL_MS: i64 = 100;
const SECTION_LENGTH_M: f64 = 100.0;
const LANE_WIDTH_M: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Weather {
    Clear,
    Rain,
    Fog,
}

impl std::fmt::Display for Weather {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Weather::Clear => f.write_str("Clear"),
            Weather::Rain => f.write_str("Rain"),
            Weather::Fog => f.write_str("Fog"),
        }
    }
}

/// One raw telemetry reading. Optional fields model sensor dropouts; the
/// stream processor fills them downstream.
///
/// Serde names match the CSV header and the JSON wire payload exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficRecordRaw {
    #[serde(rename = "Vehicle_ID")]
    pub vehicle_id: u64,
    #[serde(rename = "Frame_ID")]
    pub frame_id: u64,
    #[serde(rename = "Timestamp_ms")]
    pub timestamp_ms: i64,
    #[serde(rename = "Lane_ID")]
    pub lane_id: Option<i32>,
    #[serde(rename = "Section_ID")]
    pub section_id: Option<i32>,
    #[serde(rename = "Global_X")]
    pub global_x: Option<f64>,
    #[serde(rename = "Global_Y")]
    pub global_y: Option<f64>,
    #[serde(rename = "v_Vel")]
    pub v_vel: Option<f64>,
    #[serde(rename = "v_Acc")]
    pub v_acc: Option<f64>,
    #[serde(rename = "Space_Headway")]
    pub space_headway: Option<f64>,
    #[serde(rename = "Time_Headway")]
    pub time_headway: Option<f64>,
    #[serde(rename = "Weather")]
    pub weather: Weather,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeKind {
    FreeFlow,
    Moderate,
    Congested,
}

/// Latent traffic regime. Velocity is Gaussian. Drivers regulate the time
/// gap to the vehicle ahead (`time_gap_mean`, `time_gap_std`, seconds);
/// spacing follows as gap times effective speed. Acceleration is a
/// mean-zero mixture of cruise jitter (`acc_std`) and rarer hard braking or
/// surge events (`acc_event_prob`, `acc_event_std`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentRegime {
    pub kind: RegimeKind,
    pub vel_mean: f64,
    pub vel_std: f64,
    pub time_gap_mean: f64,
    pub time_gap_std: f64,
    pub acc_std: f64,
    pub acc_event_prob: f64,
    pub acc_event_std: f64,
}

/// Default regimes. Velocity separates the classes sharply; time gaps widen
/// as traffic slows, so both headways track congestion with blur.
/// Acceleration carries no positional information about the regime: its
/// mean is zero everywhere and its tails come from sparse braking events,
/// denser in stop-and-go traffic.
pub const DEFAULT_REGIMES: [LatentRegime; 3] = [
    LatentRegime {
        kind: RegimeKind::FreeFlow,
        vel_mean: 25.0,
        vel_std: 3.5,
        time_gap_mean: 1.6,
        time_gap_std: 0.3,
        acc_std: 0.4,
        acc_event_prob: 0.05,
        acc_event_std: 2.5,
    },
    LatentRegime {
        kind: RegimeKind::Moderate,
        vel_mean: 12.0,
        vel_std: 2.5,
        time_gap_mean: 1.8,
        time_gap_std: 0.35,
        acc_std: 0.7,
        acc_event_prob: 0.08,
        acc_event_std: 3.0,
    },
    LatentRegime {
        kind: RegimeKind::Congested,
        vel_mean: 2.0,
        vel_std: 1.2,
        time_gap_mean: 2.6,
        time_gap_std: 0.5,
        acc_std: 0.5,
        acc_event_prob: 0.10,
        acc_event_std: 2.8,
    },
];

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub num_records: u64,
    pub seed: u64,
    pub regime_weights: [f64; 3],
    pub regimes: [LatentRegime; 3],
    /// Probability that each optional field is independently absent.
    pub missing_prob: f64,
    pub lanes: u32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_records: 0,
            seed: 0,
            regime_weights: [1.0, 1.0, 1.0],
            regimes: DEFAULT_REGIMES,
            missing_prob: 0.02,
            lanes: 8,
        }
    }
}

impl GeneratorConfig {
    pub fn new(num_records: u64, seed: u64) -> Self {
        GeneratorConfig {
            num_records,
            seed,
            ..GeneratorConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.2).contains(&self.missing_prob) {
            return Err(Error::Config(format!(
                "missing_prob must be in [0, 0.2], got {}",
                self.missing_prob
            )));
        }
        if self.lanes == 0 {
            return Err(Error::Config("lanes must be at least 1".into()));
        }
        let sum: f64 = self.regime_weights.iter().sum();
        if self.regime_weights.iter().any(|w| *w < 0.0) || sum <= 0.0 {
            return Err(Error::Config(
                "regime weights must be non-negative with a positive sum".into(),
            ));
        }
        for r in &self.regimes {
            if r.vel_std < 0.0 || r.time_gap_std < 0.0 || r.acc_std < 0.0 || r.acc_event_std < 0.0
            {
                return Err(Error::Config("regime std deviations must be >= 0".into()));
            }
            if !(0.0..=1.0).contains(&r.acc_event_prob) {
                return Err(Error::Config(
                    "regime acc_event_prob must be in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }
}

/// RNG stream for record `index` under `seed`. Draw order within a record is
/// fixed: regime, lane, section, x, y, velocity, acceleration event flag,
/// acceleration, time gap, weather, then one presence draw per optional
/// field.
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Picks a regime index by cumulative weight walk over `u in [0, 1)`.
pub fn regime_for_draw(weights: &[f64; 3], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    2
}

fn generate_one(cfg: &GeneratorConfig, index: u64) -> TrafficRecordRaw {
    let mut rng = record_rng(cfg.seed, index);

    let regime = &cfg.regimes[regime_for_draw(&cfg.regime_weights, rng.random::<f64>())];
    let lane = rng.random_range(1..=cfg.lanes as i32);
    let section = rng.random_range(1..=SECTION_COUNT as i32);
    let global_x = (section - 1) as f64 * SECTION_LENGTH_M + rng.random::<f64>() * SECTION_LENGTH_M;
    let global_y = (lane - 1) as f64 * LANE_WIDTH_M + rng.random::<f64>() * LANE_WIDTH_M;

    let v_vel = Normal::new(regime.vel_mean, regime.vel_std)
        .expect("validated std")
        .sample(&mut rng)
        .max(0.0);
    // The event flag draw happens unconditionally so the stream layout is
    // identical across regimes.
    let acc_sigma = if rng.random::<f64>() < regime.acc_event_prob {
        regime.acc_event_std
    } else {
        regime.acc_std
    };
    let v_acc = Normal::new(0.0, acc_sigma)
        .expect("validated std")
        .sample(&mut rng);
    let time_gap = Normal::new(regime.time_gap_mean, regime.time_gap_std)
        .expect("validated std")
        .sample(&mut rng)
        .max(MIN_TIME_GAP);
    let effective_vel = v_vel.max(MIN_DIVISOR_VEL);
    let space_headway = (time_gap * effective_vel).max(MIN_SPACE_HEADWAY);
    // Derived from the clamped spacing before dropout, so the ratio
    // identity holds whenever all three fields survive.
    let time_headway = space_headway / effective_vel;

    let weather = {
        let u = rng.random::<f64>();
        if u < 0.70 {
            Weather::Clear
        } else if u < 0.90 {
            Weather::Rain
        } else {
            Weather::Fog
        }
    };

    let mut keep = [true; 8];
    for k in keep.iter_mut() {
        *k = rng.random::<f64>() >= cfg.missing_prob;
    }

    let vehicle_id = index % VEHICLE_POOL + 1;
    let frame_id = index / VEHICLE_POOL + 1;
    TrafficRecordRaw {
        vehicle_id,
        frame_id,
        timestamp_ms: BASE_TIMESTAMP_MS + frame_id as i64 * FRAME_INTERVAL_MS,
        lane_id: keep[0].then_some(lane),
        section_id: keep[1].then_some(section),
        global_x: keep[2].then_some(global_x),
        global_y: keep[3].then_some(global_y),
        v_vel: keep[4].then_some(v_vel),
        v_acc: keep[5].then_some(v_acc),
        space_headway: keep[6].then_some(space_headway),
        time_headway: keep[7].then_some(time_headway),
        weather,
    }
}

/// Generates `cfg.num_records` records deterministically.
pub fn generate(cfg: &GeneratorConfig) -> Result<Vec<TrafficRecordRaw>> {
    cfg.validate()?;
    Ok((0..cfg.num_records)
        .map(|i| generate_one(cfg, i))
        .collect())
}

/// Indices perturbed by [`inject_noise`] for a given selection: exactly
/// `floor(intensity * len)` distinct positions, in ascending order.
pub fn noise_indices(len: usize, intensity: f64, seed: u64) -> Vec<usize> {
    let k = (intensity * len as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, len, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Corrupts a seeded fraction of records: selected records get their
/// velocity replaced by a uniform draw over `[0, NOISE_VEL_MAX]` and both
/// headways scaled by independent factors in `[0.5, 1.5]`. Three draws are
/// consumed per selected record (in ascending index order) regardless of
/// which fields are present, so the perturbation is reproducible from the
/// seed alone.
pub fn inject_noise(
    records: &[TrafficRecordRaw],
    intensity: f64,
    seed: u64,
) -> Result<Vec<TrafficRecordRaw>> {
    if !(0.0..=1.0).contains(&intensity) {
        return Err(Error::Config(format!(
            "noise intensity must be in [0, 1], got {intensity}"
        )));
    }
    let mut out = records.to_vec();
    let picked = noise_indices(records.len(), intensity, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Skip the selection draws so perturbation draws don't overlap them.
    let _ = rand::seq::index::sample(&mut rng, records.len(), picked.len());
    for &i in &picked {
        let vel = rng.random::<f64>() * NOISE_VEL_MAX;
        let f_space = 0.5 + rng.random::<f64>();
        let f_time = 0.5 + rng.random::<f64>();
        let rec = &mut out[i];
        rec.v_vel = Some(vel);
        if let Some(sh) = rec.space_headway.as_mut() {
            *sh *= f_space;
        }
        if let Some(th) = rec.time_headway.as_mut() {
            *th *= f_time;
        }
    }
    Ok(out)
}
