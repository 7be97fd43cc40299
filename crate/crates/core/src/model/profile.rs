use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BusSpec, ModelError};
use crate::DAY_S;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Pv,
    Load,
    PriceGrid,
    PriceBess,
}

impl ProfileKind {
    /// PV is interpolated linearly between samples; loads and prices hold
    /// each sample until the next one.
    pub fn interpolation(self) -> Interpolation {
        match self {
            ProfileKind::Pv => Interpolation::Linear,
            _ => Interpolation::Step,
        }
    }

    pub fn is_power(self) -> bool {
        matches!(self, ProfileKind::Pv | ProfileKind::Load)
    }
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileKind::Pv => "pv",
            ProfileKind::Load => "load",
            ProfileKind::PriceGrid => "price_grid",
            ProfileKind::PriceBess => "price_bess",
        })
    }
}

impl std::str::FromStr for ProfileKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pv" => Ok(ProfileKind::Pv),
            "load" => Ok(ProfileKind::Load),
            "price_grid" => Ok(ProfileKind::PriceGrid),
            "price_bess" => Ok(ProfileKind::PriceBess),
            other => Err(ModelError::InvalidArgument(format!("unknown profile kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Step,
    Linear,
}

/// A daily profile sampled at seconds-of-day. Values repeat with a period of
/// one day; the segment after the last sample wraps to the first one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesProfile {
    pub kind: ProfileKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bus_id: Option<u8>,
    pub samples: Vec<(f64, f64)>,
}

impl TimeSeriesProfile {
    pub fn new(
        kind: ProfileKind,
        bus_id: Option<u8>,
        samples: Vec<(f64, f64)>,
    ) -> Result<Self, ModelError> {
        let profile = Self { kind, bus_id, samples };
        if let Some(problem) = profile.problems().into_iter().next() {
            return Err(ModelError::InvalidArgument(problem));
        }
        Ok(profile)
    }

    pub fn with_bus(mut self, bus_id: u8) -> Self {
        self.bus_id = Some(bus_id);
        self
    }

    /// Constant profile with a single sample at midnight.
    pub fn constant(kind: ProfileKind, bus_id: Option<u8>, value: f64) -> Self {
        Self { kind, bus_id, samples: vec![(0.0, value)] }
    }

    /// Human-readable invariant violations; empty when the profile is valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.samples.is_empty() {
            out.push("profile has no samples".to_string());
        }
        let mut prev: Option<f64> = None;
        for (i, &(t, v)) in self.samples.iter().enumerate() {
            if !t.is_finite() || !v.is_finite() {
                out.push(format!("sample {i} is not finite"));
                continue;
            }
            if !(0.0..DAY_S).contains(&t) {
                out.push(format!("sample {i} time {t} outside [0, 86400)"));
            }
            if let Some(p) = prev {
                if t <= p {
                    out.push(format!("sample {i} time {t} does not increase (previous {p})"));
                }
            }
            if self.kind.is_power() && v < 0.0 {
                out.push(format!("sample {i} negative {} value {v}", self.kind));
            }
            prev = Some(t);
        }
        out
    }

    pub fn table(&self) -> ProfileTable {
        ProfileTable::new(self)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.table().value_at(t)
    }

    /// Mean value over `[t0, t1)`, wrapping across midnight as needed.
    pub fn mean_over(&self, t0: f64, t1: f64) -> f64 {
        self.table().mean_over(t0, t1)
    }

    pub fn max_value(&self) -> f64 {
        self.samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: f64,
    end: f64,
    v0: f64,
    v1: f64,
}

impl Segment {
    fn value(&self, t: f64) -> f64 {
        if self.v0 == self.v1 {
            return self.v0;
        }
        self.v0 + (self.v1 - self.v0) * (t - self.start) / (self.end - self.start)
    }

    fn area_to(&self, t: f64) -> f64 {
        (t - self.start) * 0.5 * (self.v0 + self.value(t))
    }
}

/// Piecewise representation of a profile over one day, for fast evaluation
/// and exact integration.
#[derive(Debug, Clone)]
pub struct ProfileTable {
    segments: Vec<Segment>,
    cumulative: Vec<f64>,
    day_integral: f64,
}

impl ProfileTable {
    fn new(profile: &TimeSeriesProfile) -> Self {
        let s = &profile.samples;
        let mut segments = Vec::with_capacity(s.len() + 2);
        match s.len() {
            0 => segments.push(Segment { start: 0.0, end: DAY_S, v0: 0.0, v1: 0.0 }),
            1 => segments.push(Segment { start: 0.0, end: DAY_S, v0: s[0].1, v1: s[0].1 }),
            n => match profile.kind.interpolation() {
                Interpolation::Step => {
                    if s[0].0 > 0.0 {
                        let v = s[n - 1].1;
                        segments.push(Segment { start: 0.0, end: s[0].0, v0: v, v1: v });
                    }
                    for k in 0..n {
                        let end = if k + 1 < n { s[k + 1].0 } else { DAY_S };
                        segments.push(Segment { start: s[k].0, end, v0: s[k].1, v1: s[k].1 });
                    }
                }
                Interpolation::Linear => {
                    let (t_last, v_last) = s[n - 1];
                    let span = s[0].0 + DAY_S - t_last;
                    let v_midnight = v_last + (s[0].1 - v_last) * (DAY_S - t_last) / span;
                    if s[0].0 > 0.0 {
                        segments.push(Segment { start: 0.0, end: s[0].0, v0: v_midnight, v1: s[0].1 });
                    }
                    for k in 0..n - 1 {
                        segments.push(Segment {
                            start: s[k].0,
                            end: s[k + 1].0,
                            v0: s[k].1,
                            v1: s[k + 1].1,
                        });
                    }
                    segments.push(Segment { start: t_last, end: DAY_S, v0: v_last, v1: v_midnight });
                }
            },
        }
        let mut cumulative = Vec::with_capacity(segments.len());
        let mut acc = 0.0;
        for seg in &segments {
            cumulative.push(acc);
            acc += seg.area_to(seg.end);
        }
        Self { segments, cumulative, day_integral: acc }
    }

    fn locate(&self, x: f64) -> usize {
        self.segments.partition_point(|s| s.start <= x).saturating_sub(1)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let x = t.rem_euclid(DAY_S);
        self.segments[self.locate(x)].value(x)
    }

    /// Evaluation for mostly non-decreasing `t`; `hint` caches the segment.
    pub fn value_at_hint(&self, t: f64, hint: &mut usize) -> f64 {
        let x = t.rem_euclid(DAY_S);
        let mut i = (*hint).min(self.segments.len() - 1);
        if x < self.segments[i].start {
            i = self.locate(x);
        } else {
            while x >= self.segments[i].end && i + 1 < self.segments.len() {
                i += 1;
            }
        }
        *hint = i;
        self.segments[i].value(x)
    }

    /// Time of the next sample boundary strictly after `t` (within the day
    /// containing `t`).
    pub fn next_boundary(&self, t: f64) -> f64 {
        let day = (t / DAY_S).floor() * DAY_S;
        let x = t - day;
        let i = self.locate(x);
        day + self.segments[i].end
    }

    fn integral_from_midnight(&self, x: f64) -> f64 {
        let i = self.locate(x);
        self.cumulative[i] + self.segments[i].area_to(x)
    }

    fn antiderivative(&self, t: f64) -> f64 {
        let days = (t / DAY_S).floor();
        let x = t - days * DAY_S;
        days * self.day_integral + self.integral_from_midnight(x.min(DAY_S))
    }

    /// Exact integral over `[t0, t1]` in value-seconds.
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        self.antiderivative(t1) - self.antiderivative(t0)
    }

    pub fn mean_over(&self, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return self.value_at(t0);
        }
        self.integral(t0, t1) / (t1 - t0)
    }

    pub fn day_integral(&self) -> f64 {
        self.day_integral
    }
}

/// Half-sine PV output: zero outside `[sunrise, sunset]` hours, peaking at
/// `rating` at the midpoint.
pub fn generate_pv_profile(
    rating: f64,
    sunrise: f64,
    sunset: f64,
    resolution: f64,
) -> Result<TimeSeriesProfile, ModelError> {
    if !(0.0..=24.0).contains(&sunrise) || !(0.0..=24.0).contains(&sunset) || sunrise >= sunset {
        return Err(ModelError::InvalidHours(format!("sunrise {sunrise} h, sunset {sunset} h")));
    }
    if !(rating >= 0.0) || !rating.is_finite() {
        return Err(ModelError::InvalidArgument(format!("pv rating {rating} W")));
    }
    if !(resolution > 0.0) || resolution > DAY_S {
        return Err(ModelError::InvalidArgument(format!("resolution {resolution} s")));
    }
    let count = (DAY_S / resolution).ceil() as usize;
    let samples = (0..count)
        .map(|k| k as f64 * resolution)
        .filter(|&t| t < DAY_S)
        .map(|t| {
            let h = t / 3600.0;
            let v = if h < sunrise || h > sunset {
                0.0
            } else {
                rating * (std::f64::consts::PI * ((h - sunrise) / (sunset - sunrise))).sin()
            };
            (t, v.max(0.0))
        })
        .collect();
    Ok(TimeSeriesProfile { kind: ProfileKind::Pv, bus_id: None, samples })
}

fn circular_hours(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(24.0);
    d.min(24.0 - d)
}

/// Hourly load with a morning and an evening peak at `load_max`, a floor at
/// `load_min` and bounded seeded jitter on the off-peak hours.
pub fn generate_load_profile(
    bus: &BusSpec,
    morning_peak: u32,
    evening_peak: u32,
    seed: u64,
) -> Result<TimeSeriesProfile, ModelError> {
    if bus.load_min > bus.load_max || bus.load_min < 0.0 {
        return Err(ModelError::InvalidArgument(format!(
            "bus {} load band [{}, {}]",
            bus.bus_id, bus.load_min, bus.load_max
        )));
    }
    if morning_peak >= 24 || evening_peak >= 24 || morning_peak == evening_peak {
        return Err(ModelError::InvalidHours(format!(
            "peaks at {morning_peak} h and {evening_peak} h"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(bus.bus_id) << 56));
    let span = bus.load_max - bus.load_min;
    let samples = (0..24u32)
        .map(|h| {
            let shape = if h == morning_peak || h == evening_peak {
                1.0
            } else {
                let hf = f64::from(h);
                let m = circular_hours(hf, f64::from(morning_peak));
                let e = circular_hours(hf, f64::from(evening_peak));
                let bump = (-(m * m) / (2.0 * 1.5 * 1.5))
                    .exp()
                    .max((-(e * e) / (2.0 * 2.0 * 2.0)).exp());
                let jitter: f64 = rng.random_range(-0.05..0.05);
                (0.2 + 0.8 * bump + jitter).clamp(0.0, 0.98)
            };
            (f64::from(h) * 3600.0, bus.load_min + span * shape)
        })
        .collect();
    Ok(TimeSeriesProfile { kind: ProfileKind::Load, bus_id: Some(bus.bus_id), samples })
}

/// Parses `time_s,value` rows; a non-numeric first row is taken as a header.
pub fn parse_profile_csv(
    text: &str,
    kind: ProfileKind,
    bus_id: Option<u8>,
) -> Result<TimeSeriesProfile, ModelError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut samples: Vec<(f64, f64)> = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ModelError::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(index + 1),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(index + 1);
        if record.len() != 2 {
            return Err(ModelError::Parse {
                line,
                message: format!("expected 2 columns, found {}", record.len()),
            });
        }
        let parsed = (record[0].parse::<f64>(), record[1].parse::<f64>());
        let (t, v) = match parsed {
            (Ok(t), Ok(v)) => (t, v),
            _ if index == 0 && samples.is_empty() => continue,
            _ => {
                return Err(ModelError::Parse {
                    line,
                    message: format!("cannot parse {:?},{:?} as numbers", &record[0], &record[1]),
                })
            }
        };
        if !t.is_finite() || !v.is_finite() || !(0.0..DAY_S).contains(&t) {
            return Err(ModelError::Parse {
                line,
                message: format!("time {t} must be finite and within [0, 86400), value {v} finite"),
            });
        }
        if let Some(&(previous, _)) = samples.last() {
            if t <= previous {
                return Err(ModelError::NonMonotone { line, time: t, previous });
            }
        }
        if kind.is_power() && v < 0.0 {
            return Err(ModelError::NegativeValue { line, kind, value: v });
        }
        samples.push((t, v));
    }
    if samples.is_empty() {
        return Err(ModelError::Parse { line: 1, message: "no samples".into() });
    }
    Ok(TimeSeriesProfile { kind, bus_id, samples })
}

pub fn load_profile_csv(
    path: impl AsRef<Path>,
    kind: ProfileKind,
    bus_id: Option<u8>,
) -> Result<TimeSeriesProfile, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    parse_profile_csv(&text, kind, bus_id)
}

pub fn write_profile_csv(profile: &TimeSeriesProfile, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let mut out = String::from("time_s,value\n");
    for (t, v) in &profile.samples {
        out.push_str(&format!("{t},{v}\n"));
    }
    std::fs::write(path, out).map_err(|source| ModelError::Io { path: path.display().to_string(), source })
}
