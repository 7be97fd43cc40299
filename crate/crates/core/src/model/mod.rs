//! Shared domain types, scenario configuration and time-series profiles.

mod profile;
mod scenario;
mod spec;

pub use profile::{
    generate_load_profile, generate_pv_profile, load_profile_csv, parse_profile_csv,
    write_profile_csv, Interpolation, ProfileKind, ProfileTable, TimeSeriesProfile,
};
pub use scenario::{
    validate_scenario, InitialSoc, NetworkSettings, ScenarioConfig, SimSettings, TrafficClass,
    Violation, BUNDLED_PRICE_CSV,
};
pub use spec::{BatterySpec, BusSpec, ConverterParams, FeederSpec, MicrogridSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid hour range: {0}")]
    InvalidHours(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: time {time} does not increase (previous {previous})")]
    NonMonotone { line: usize, time: f64, previous: f64 },
    #[error("line {line}: negative {kind} value {value}")]
    NegativeValue { line: usize, kind: ProfileKind, value: f64 },
    #[error("invalid scenario: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
