//! Traffic-class delay model.
//!
//! Each class is a single FIFO link of fixed line rate carrying Poisson
//! background packets at utilisation `congestion`. A message's one-way delay
//! is propagation + octet-slot alignment + the unfinished background work it
//! finds in the queue + its own serialization time. The analytic mean
//! (without slot alignment) is the M/D/1 sojourn time
//! `propagation + S (1 + rho / (2 (1 - rho)))`.

mod proxy;
mod stats;

pub use proxy::{forward_with_delay, ProxyHandle};
pub use stats::{read_records_csv, stats_report, write_records_csv, DelayRecord, DelayStats, Direction, Histogram};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::model::TrafficClass;

#[derive(Debug, Error, PartialEq)]
pub enum NetemError {
    #[error("congestion {0} must be in [0, 1)")]
    Congestion(f64),
    #[error("need at least 2 messages for jitter, have {0}")]
    InsufficientSamples(usize),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficClassModel {
    pub class: TrafficClass,
    pub link_rate: f64,
    pub propagation_ms: f64,
    pub congestion: f64,
    pub background_packet: u32,
    pub slot_alignment: bool,
    pub seed: u64,
}

impl TrafficClassModel {
    pub fn new(class: TrafficClass, congestion: f64, seed: u64) -> Self {
        Self {
            class,
            link_rate: class.link_rate_bps(),
            propagation_ms: 2.0,
            congestion,
            background_packet: 178,
            slot_alignment: true,
            seed,
        }
    }

    pub fn with_propagation(mut self, ms: f64) -> Self {
        self.propagation_ms = ms;
        self
    }

    pub fn with_background_packet(mut self, bytes: u32) -> Self {
        self.background_packet = bytes;
        self
    }

    pub fn with_slot_alignment(mut self, on: bool) -> Self {
        self.slot_alignment = on;
        self
    }

    pub fn from_scenario(config: &crate::model::ScenarioConfig, seed: u64) -> Self {
        Self::new(config.traffic_class, config.congestion, seed)
            .with_propagation(config.network.propagation_ms)
            .with_background_packet(config.network.background_packet)
            .with_slot_alignment(config.network.slot_alignment)
    }

    fn check(&self) -> Result<(), NetemError> {
        if !(0.0..1.0).contains(&self.congestion) {
            return Err(NetemError::Congestion(self.congestion));
        }
        Ok(())
    }

    /// Duration of one octet on the line, ms.
    pub fn octet_ms(&self) -> f64 {
        8.0 / self.link_rate * 1e3
    }

    fn background_service_ms(&self) -> f64 {
        serialization_delay(self.background_packet as usize, self)
    }
}

/// Time to clock `bytes` onto the line, ms.
pub fn serialization_delay(bytes: usize, model: &TrafficClassModel) -> f64 {
    8.0 * bytes as f64 / model.link_rate * 1e3
}

/// Analytic mean one-way delay, ms. Background packets are assumed to be the
/// same size as the message.
pub fn mean_delay_md1(bytes: usize, model: &TrafficClassModel) -> Result<f64, NetemError> {
    model.check()?;
    let s = serialization_delay(bytes, model);
    let rho = model.congestion;
    Ok(model.propagation_ms + s * (1.0 + rho / (2.0 * (1.0 - rho))))
}

/// Unfinished work of the background process on one link.
#[derive(Debug, Clone)]
struct Backlog {
    rng: ChaCha8Rng,
    /// Arrival rate of background packets, per ms.
    rate: f64,
    service_ms: f64,
    clock_ms: f64,
    work_ms: f64,
    next_arrival_ms: f64,
}

impl Backlog {
    fn new(model: &TrafficClassModel, rng: ChaCha8Rng) -> Self {
        let service_ms = model.background_service_ms();
        let rate = if model.congestion > 0.0 { model.congestion / service_ms } else { 0.0 };
        let mut backlog = Self { rng, rate, service_ms, clock_ms: 0.0, work_ms: 0.0, next_arrival_ms: f64::INFINITY };
        if rate > 0.0 {
            backlog.next_arrival_ms = backlog.exp_gap();
        }
        backlog
    }

    fn exp_gap(&mut self) -> f64 {
        let u: f64 = self.rng.random();
        -(1.0 - u).ln() / self.rate
    }

    fn advance_to(&mut self, t_ms: f64) {
        if t_ms <= self.clock_ms {
            return;
        }
        while self.next_arrival_ms <= t_ms {
            self.work_ms = (self.work_ms - (self.next_arrival_ms - self.clock_ms)).max(0.0) + self.service_ms;
            self.clock_ms = self.next_arrival_ms;
            self.next_arrival_ms += self.exp_gap();
        }
        self.work_ms = (self.work_ms - (t_ms - self.clock_ms)).max(0.0);
        self.clock_ms = t_ms;
    }
}

/// Draws independent delay samples from the stationary model: each call
/// moves the background process forward by a gap long enough for the queue
/// to decorrelate, then probes it without adding load.
#[derive(Debug, Clone)]
pub struct DelaySampler {
    model: TrafficClassModel,
    backlog: Backlog,
    spacing_ms: f64,
}

/// Gap between probes, in background service times.
const PROBE_SPACING: f64 = 200.0;

impl DelaySampler {
    pub fn new(model: TrafficClassModel) -> Result<Self, NetemError> {
        model.check()?;
        let rng = ChaCha8Rng::seed_from_u64(model.seed);
        let backlog = Backlog::new(&model, rng);
        let spacing_ms = PROBE_SPACING * model.background_service_ms();
        let mut sampler = Self { model, backlog, spacing_ms };
        // burn-in to stationarity
        let warm = 10.0 * sampler.spacing_ms;
        sampler.backlog.advance_to(warm);
        Ok(sampler)
    }

    pub fn model(&self) -> &TrafficClassModel {
        &self.model
    }

    /// One-way delay of a `bytes`-long message, ms.
    pub fn sample_delay(&mut self, bytes: usize) -> f64 {
        let t = self.backlog.clock_ms + self.spacing_ms;
        self.backlog.advance_to(t);
        let align = if self.model.slot_alignment {
            let u: f64 = self.backlog.rng.random();
            u * self.model.octet_ms()
        } else {
            0.0
        };
        if align > 0.0 {
            self.backlog.advance_to(t + align);
        }
        self.model.propagation_ms + align + self.backlog.work_ms + serialization_delay(bytes, &self.model)
    }
}

/// One direction of a live connection: foreground messages join the same
/// FIFO as the background traffic, so release order equals arrival order.
#[derive(Debug, Clone)]
pub struct LinkQueue {
    model: TrafficClassModel,
    backlog: Backlog,
    last_release_ms: f64,
}

impl LinkQueue {
    pub fn new(model: TrafficClassModel) -> Result<Self, NetemError> {
        model.check()?;
        let rng = ChaCha8Rng::seed_from_u64(model.seed);
        let mut backlog = Backlog::new(&model, rng);
        // start from a stationary backlog rather than an empty link
        backlog.advance_to(PROBE_SPACING * 10.0 * model.background_service_ms());
        let origin = backlog.clock_ms;
        backlog.clock_ms = 0.0;
        backlog.next_arrival_ms -= origin;
        Ok(Self { model, backlog, last_release_ms: f64::NEG_INFINITY })
    }

    pub fn model(&self) -> &TrafficClassModel {
        &self.model
    }

    /// Release time (ms) of a message of `bytes` arriving at `arrival_ms`.
    /// Arrivals must be non-decreasing.
    pub fn offer(&mut self, arrival_ms: f64, bytes: usize) -> f64 {
        let align = if self.model.slot_alignment {
            let u: f64 = self.backlog.rng.random();
            u * self.model.octet_ms()
        } else {
            0.0
        };
        let enter = arrival_ms + align;
        self.backlog.advance_to(enter);
        let service = serialization_delay(bytes, &self.model);
        let departure = enter + self.backlog.work_ms + service;
        self.backlog.work_ms += service;
        let release = (departure + self.model.propagation_ms).max(self.last_release_ms);
        self.last_release_ms = release;
        release
    }
}

/// Delay-table values reported for the five traffic classes at 0/25/50/75 %
/// congestion: mean one-way delay (ms) and jitter (us).
pub mod reference {
    use super::TrafficClass;

    pub const CONGESTION_LEVELS: [f64; 4] = [0.0, 0.25, 0.5, 0.75];

    pub fn mean_delay_ms(class: TrafficClass) -> [f64; 4] {
        match class {
            TrafficClass::DS0 => [24.25, 27.91, 35.13, 56.56],
            TrafficClass::DS1 => [2.92, 3.077, 3.385, 4.307],
            TrafficClass::DS3 => [2.03, 2.037, 2.048, 2.081],
            TrafficClass::E1 => [2.69, 2.81, 3.04, 3.73],
            TrafficClass::E3 => [2.04, 2.048, 2.059, 2.103],
        }
    }

    pub fn jitter_us(class: TrafficClass) -> [f64; 4] {
        match class {
            TrafficClass::DS0 => [135.0, 152.0, 401.0, 1770.0],
            TrafficClass::DS1 => [1.437, 1.905, 3.693, 8.205],
            TrafficClass::DS3 => [0.063, 0.0638, 0.119, 0.228],
            TrafficClass::E1 => [1.14, 1.853, 2.6, 5.02],
            TrafficClass::E3 => [0.138, 0.101, 0.155, 0.322],
        }
    }

    /// Foreground message size behind the tabulated delays, bytes.
    pub const MESSAGE_BYTES: usize = 178;
}
