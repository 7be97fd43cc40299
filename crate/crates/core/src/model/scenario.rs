use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    generate_load_profile, generate_pv_profile, parse_profile_csv, MicrogridSpec, ModelError,
    ProfileKind, TimeSeriesProfile,
};

/// Hourly grid price for the bundled day, currency per kWh.
pub const BUNDLED_PRICE_CSV: &str = include_str!("../../data/price_day.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrafficClass {
    DS0,
    DS1,
    DS3,
    E1,
    E3,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 5] =
        [TrafficClass::DS0, TrafficClass::DS1, TrafficClass::DS3, TrafficClass::E1, TrafficClass::E3];

    /// Line rate in bits per second.
    pub fn link_rate_bps(self) -> f64 {
        match self {
            TrafficClass::DS0 => 64_000.0,
            TrafficClass::DS1 => 1_544_000.0,
            TrafficClass::DS3 => 44_736_000.0,
            TrafficClass::E1 => 2_048_000.0,
            TrafficClass::E3 => 34_368_000.0,
        }
    }
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for TrafficClass {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TrafficClass::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::InvalidArgument(format!("unknown traffic class {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialSoc {
    pub bus_id: u8,
    pub soc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    /// Simulated duration, seconds.
    pub duration_s: f64,
    /// Plant integration step, sim seconds.
    pub dt_sim_s: f64,
    /// Plant trace sampling period, sim seconds.
    pub log_period_s: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self { duration_s: crate::DAY_S, dt_sim_s: 1e-3, log_period_s: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSettings {
    pub propagation_ms: f64,
    /// Size of the Poisson background packets, bytes.
    pub background_packet: u32,
    /// Messages shorter than this are delayed as if padded to it.
    pub min_message_bytes: u32,
    /// Random wait for the next octet slot of the carrier before queueing.
    pub slot_alignment: bool,
    pub timeout_ms: f64,
    pub retries: u32,
    /// Overrides the default staleness limit when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub staleness_limit_ms: Option<f64>,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        Self {
            propagation_ms: 2.0,
            background_packet: 178,
            min_message_bytes: 0,
            slot_alignment: true,
            timeout_ms: 250.0,
            retries: 1,
            staleness_limit_ms: None,
        }
    }
}

/// Everything a reproducible run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    /// Horizon length in dispatch steps.
    pub horizon_hours: usize,
    /// Dispatch step, hours.
    pub dt_dispatch: f64,
    /// Re-optimization period, sim minutes.
    pub reopt_period: f64,
    /// Measurement polling period, wall milliseconds.
    pub poll_period: f64,
    pub traffic_class: TrafficClass,
    pub congestion: f64,
    pub rng_seed: u64,
    /// Sim seconds per wall second.
    pub time_scale: f64,
    pub spec: MicrogridSpec,
    #[serde(default)]
    pub sim: SimSettings,
    #[serde(default)]
    pub network: NetworkSettings,
    #[serde(default)]
    pub initial_soc: Vec<InitialSoc>,
    #[serde(default)]
    pub profiles: Vec<TimeSeriesProfile>,
}

impl ScenarioConfig {
    /// The bundled four-bus day: half-sine PV, double-peaked loads, the
    /// bundled price curve and a constant battery remuneration at 20 % of
    /// the mean grid price.
    pub fn table1(seed: u64) -> Self {
        let spec = MicrogridSpec::table1();
        let mut profiles = Vec::new();
        for bus in &spec.buses {
            if bus.pv_rating > 0.0 {
                let pv = generate_pv_profile(bus.pv_rating, 6.0, 18.0, 300.0)
                    .expect("valid pv parameters")
                    .with_bus(bus.bus_id);
                profiles.push(pv);
            }
        }
        for bus in &spec.buses {
            profiles.push(generate_load_profile(bus, 8, 19, seed).expect("valid load band"));
        }
        let grid = parse_profile_csv(BUNDLED_PRICE_CSV, ProfileKind::PriceGrid, None)
            .expect("bundled price file parses");
        let mean = grid.samples.iter().map(|s| s.1).sum::<f64>() / grid.samples.len() as f64;
        profiles.push(grid);
        profiles.push(TimeSeriesProfile::constant(ProfileKind::PriceBess, None, 0.2 * mean));
        let initial_soc = spec
            .batteries()
            .map(|(bus_id, _)| InitialSoc { bus_id, soc: 0.5 })
            .collect();
        Self {
            name: "table1".into(),
            horizon_hours: 24,
            dt_dispatch: 1.0,
            reopt_period: 5.0,
            poll_period: 100.0,
            traffic_class: TrafficClass::DS3,
            congestion: 0.0,
            rng_seed: seed,
            time_scale: 600.0,
            spec,
            sim: SimSettings::default(),
            network: NetworkSettings::default(),
            initial_soc,
            profiles,
        }
    }

    pub fn initial_soc_for(&self, bus_id: u8) -> Option<f64> {
        self.initial_soc.iter().find(|s| s.bus_id == bus_id).map(|s| s.soc)
    }

    pub fn profile(&self, kind: ProfileKind, bus_id: Option<u8>) -> Option<&TimeSeriesProfile> {
        self.profiles.iter().find(|p| p.kind == kind && p.bus_id == bus_id)
    }

    pub fn without_batteries(&self) -> Self {
        let mut config = self.clone();
        config.spec = config.spec.without_batteries();
        config.initial_soc.clear();
        config
    }

    /// Network settings are excluded, so runs of one scenario under
    /// different traffic classes share a fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut normalized = self.clone();
        normalized.traffic_class = TrafficClass::DS0;
        normalized.congestion = 0.0;
        normalized.network = NetworkSettings::default();
        normalized.name.clear();
        let text = normalized.to_toml_string().unwrap_or_default();
        hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
    }

    /// Default staleness limit: two polling periods plus twice the mean
    /// one-way delay of the slowest class at the heaviest tabulated
    /// congestion (DS0 at 75 %).
    pub fn staleness_limit_ms(&self) -> f64 {
        if let Some(limit) = self.network.staleness_limit_ms {
            return limit;
        }
        let worst = crate::netem::TrafficClassModel::new(TrafficClass::DS0, 0.75, 0)
            .with_propagation(self.network.propagation_ms)
            .with_background_packet(self.network.background_packet);
        let worst_ms = crate::netem::mean_delay_md1(self.network.background_packet as usize, &worst)
            .expect("0.75 < 1");
        2.0 * self.poll_period + 2.0 * worst_ms
    }

    pub fn to_toml_string(&self) -> Result<String, ModelError> {
        toml::to_string(self).map_err(|e| ModelError::Config(e.to_string()))
    }

    /// Parses a scenario file. Profile entries may carry `csv = "path"`
    /// instead of inline `samples`; relative paths resolve against `base`.
    pub fn from_toml_str(text: &str, base: Option<&Path>) -> Result<Self, ModelError> {
        let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| ModelError::Config(e.to_string()))?;
        if let Some(toml::Value::Array(entries)) = value.get_mut("profiles") {
            for entry in entries.iter_mut() {
                let Some(table) = entry.as_table_mut() else { continue };
                let Some(csv_path) = table.remove("csv") else { continue };
                let csv_path = csv_path
                    .as_str()
                    .ok_or_else(|| ModelError::Config("profile csv must be a string".into()))?;
                let kind: ProfileKind = table
                    .get("kind")
                    .and_then(|k| k.as_str())
                    .ok_or_else(|| ModelError::Config(format!("profile {csv_path} lacks a kind")))?
                    .parse()?;
                let bus_id = table.get("bus_id").and_then(|b| b.as_integer()).map(|b| b as u8);
                let path = match base {
                    Some(base) => base.join(csv_path),
                    None => Path::new(csv_path).to_path_buf(),
                };
                let profile = super::load_profile_csv(&path, kind, bus_id)?;
                let samples = profile
                    .samples
                    .iter()
                    .map(|&(t, v)| toml::Value::Array(vec![t.into(), v.into()]))
                    .collect();
                table.insert("samples".into(), toml::Value::Array(samples));
            }
        }
        value.try_into().map_err(|e: toml::de::Error| ModelError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()?)
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn positive(out: &mut Vec<Violation>, field: impl Into<String>, value: f64) {
    if !(value > 0.0) || !value.is_finite() {
        out.push(Violation::new(field, format!("must be > 0, got {value}")));
    }
}

/// Checks every scenario invariant; the scenario is usable iff the result is
/// empty.
pub fn validate_scenario(config: &ScenarioConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let spec = &config.spec;

    if spec.buses.len() != 4 {
        out.push(Violation::new("spec.buses", format!("expected 4 prosumer buses, got {}", spec.buses.len())));
    }
    positive(&mut out, "spec.v_nominal", spec.v_nominal);
    positive(&mut out, "spec.c_dc", spec.c_dc);
    let conv = &spec.converters;
    positive(&mut out, "spec.converters.v_pv", conv.v_pv);
    positive(&mut out, "spec.converters.l_pv", conv.l_pv);
    positive(&mut out, "spec.converters.v_battery", conv.v_battery);
    positive(&mut out, "spec.converters.current_bandwidth", conv.current_bandwidth);
    positive(&mut out, "spec.converters.voltage_bandwidth", conv.voltage_bandwidth);
    positive(&mut out, "spec.converters.grid_limit_w", conv.grid_limit_w);
    if conv.v_pv >= spec.v_nominal || conv.v_battery >= spec.v_nominal {
        out.push(Violation::new("spec.converters", "source voltages must be below the bus voltage"));
    }
    for (i, feeder) in spec.feeders.iter().enumerate() {
        positive(&mut out, format!("spec.feeders[{i}].r"), feeder.r);
        positive(&mut out, format!("spec.feeders[{i}].l"), feeder.l);
    }
    let mut seen = Vec::new();
    for bus in &spec.buses {
        let field = format!("bus {}", bus.bus_id);
        if seen.contains(&bus.bus_id) {
            out.push(Violation::new(&field, "duplicate bus id"));
        }
        seen.push(bus.bus_id);
        if !(2..=5).contains(&bus.bus_id) {
            out.push(Violation::new(&field, "bus ids must lie in 2..=5"));
        }
        if bus.feeder_index >= spec.feeders.len() {
            out.push(Violation::new(&field, format!("feeder index {} does not exist", bus.feeder_index)));
        }
        if !(bus.pv_rating >= 0.0) {
            out.push(Violation::new(&field, "pv_rating must be >= 0"));
        }
        if !(bus.load_min >= 0.0) || !(bus.load_min <= bus.load_max) {
            out.push(Violation::new(&field, format!("load band [{}, {}] invalid", bus.load_min, bus.load_max)));
        }
        if let Some(b) = &bus.bess {
            positive(&mut out, format!("{field} capacity"), b.capacity);
            positive(&mut out, format!("{field} l_conv"), b.l_conv);
            if !(0.0 <= b.soc_min && b.soc_min < b.soc_max && b.soc_max <= 1.0) {
                out.push(Violation::new(&field, format!("soc bounds [{}, {}] invalid", b.soc_min, b.soc_max)));
            }
            if !(b.eta > 0.0 && b.eta <= 1.0) {
                out.push(Violation::new(&field, format!("eta {} must be in (0, 1]", b.eta)));
            }
            if !(b.p_dispatch > 0.0 && b.p_dispatch <= b.p_conv_max) {
                out.push(Violation::new(
                    &field,
                    format!("p_dispatch {} must be in (0, p_conv_max {}]", b.p_dispatch, b.p_conv_max),
                ));
            }
            match config.initial_soc_for(bus.bus_id) {
                None => out.push(Violation::new(&field, "missing initial_soc")),
                Some(soc) if !(soc >= b.soc_min && soc <= b.soc_max) => out.push(Violation::new(
                    &field,
                    format!("initial_soc {soc} outside [{}, {}]", b.soc_min, b.soc_max),
                )),
                Some(_) => {}
            }
        }
    }
    for s in &config.initial_soc {
        if spec.bus(s.bus_id).and_then(|b| b.bess.as_ref()).is_none() {
            out.push(Violation::new("initial_soc", format!("bus {} has no battery", s.bus_id)));
        }
    }

    for (i, p) in config.profiles.iter().enumerate() {
        let field = format!("profiles[{i}] ({})", p.kind);
        for problem in p.problems() {
            out.push(Violation::new(&field, problem));
        }
        match (p.kind, p.bus_id) {
            (ProfileKind::Pv | ProfileKind::Load, None) => out.push(Violation::new(&field, "needs a bus_id")),
            (_, Some(id)) if spec.bus(id).is_none() => {
                out.push(Violation::new(&field, format!("bus {id} does not exist")))
            }
            _ => {}
        }
    }
    if config.profile(ProfileKind::PriceGrid, None).is_none() {
        out.push(Violation::new("profiles", "missing price_grid profile"));
    }

    if !(config.congestion >= 0.0 && config.congestion < 1.0) {
        out.push(Violation::new("congestion", "congestion must be < 1 and >= 0"));
    }
    if !(config.time_scale >= 1.0) {
        out.push(Violation::new("time_scale", "must be >= 1"));
    }
    positive(&mut out, "reopt_period", config.reopt_period);
    positive(&mut out, "poll_period", config.poll_period);
    positive(&mut out, "dt_dispatch", config.dt_dispatch);
    if config.horizon_hours == 0 {
        out.push(Violation::new("horizon_hours", "must be >= 1"));
    }
    positive(&mut out, "sim.duration_s", config.sim.duration_s);
    positive(&mut out, "sim.log_period_s", config.sim.log_period_s);
    if !(config.sim.dt_sim_s > 0.0 && config.sim.dt_sim_s <= 1e-3) {
        out.push(Violation::new("sim.dt_sim_s", "must be in (0, 1 ms]"));
    }
    positive(&mut out, "network.timeout_ms", config.network.timeout_ms);
    if !(config.network.propagation_ms >= 0.0) {
        out.push(Violation::new("network.propagation_ms", "must be >= 0"));
    }
    if config.network.background_packet == 0 {
        out.push(Violation::new("network.background_packet", "must be > 0"));
    }
    out
}
