//! Scenario runs, run metrics, run comparison and the delay calibration
//! sweep.
//!
//! A run either executes on the deterministic virtual clock in this process
//! ([`run_virtual`]) or as three supervised OS processes talking over real
//! sockets ([`realtime::supervise`]). Both leave the same artifacts in the
//! output directory: the scenario file, the plant trace, the plan log, the
//! per-message delay records and a metrics summary.

mod calibrate;
mod metrics;
pub mod realtime;
mod trace;
mod virtual_time;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use calibrate::{calibrate_netem, write_calibration_csv, CalibrationRow};
pub use metrics::{
    compare_runs, compute_metrics, CompareReport, DeltaRow, RunMetrics, TraceSet, BALANCE_TOLERANCE, VOLTAGE_BAND,
};
pub use trace::{PlanLogBuilder, PlantTraceBuilder, TraceTable, DELAYS, METRICS, PLANT_TRACE, PLAN_LOG, SCENARIO};
pub use virtual_time::{run_virtual, VirtualOutcome};

use crate::ems::EmsError;
use crate::model::{validate_scenario, ModelError, ScenarioConfig};
use crate::netem::{write_records_csv, NetemError};
use crate::plant::PlantError;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("plant: {0}")]
    Plant(#[from] PlantError),
    #[error("ems: {0}")]
    Ems(#[from] EmsError),
    #[error("netem: {0}")]
    Netem(#[from] NetemError),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("trace is missing column {0:?}")]
    MissingColumn(String),
    #[error("trace: {0}")]
    Trace(String),
    #[error("cannot compare runs: {0}")]
    Mismatch(String),
    #[error("component {component} failed: {detail}")]
    Component { component: String, detail: String },
}

impl OrchestratorError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io { path: path.display().to_string(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RunMode {
    #[default]
    Virtual,
    Realtime,
}

impl std::str::FromStr for RunMode {
    type Err = OrchestratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "virtual" => Ok(Self::Virtual),
            "realtime" => Ok(Self::Realtime),
            other => Err(OrchestratorError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub mode: RunMode,
    /// The `dcgrid` executable that hosts the components in real-time mode.
    pub executable: Option<PathBuf>,
}

pub(crate) fn label_metrics(m: &mut RunMetrics, config: &ScenarioConfig, mode: &str) {
    m.scenario = config.name.clone();
    m.fingerprint = config.fingerprint();
    m.mode = mode.to_string();
    m.traffic_class = config.traffic_class.to_string();
    m.congestion = config.congestion;
    m.seed = config.rng_seed;
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), OrchestratorError> {
    std::fs::create_dir_all(dir).map_err(|e| OrchestratorError::io(dir, e))
}

/// Runs one simulated scenario and writes its artifacts to `out_dir`.
pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path, options: &RunOptions) -> Result<RunMetrics, OrchestratorError> {
    let violations = validate_scenario(config);
    if !violations.is_empty() {
        return Err(ModelError::Invalid(violations).into());
    }
    create_dir(out_dir)?;
    config.save(out_dir.join(SCENARIO))?;
    let metrics = match options.mode {
        RunMode::Virtual => {
            let outcome = run_virtual(config)?;
            write_traces(&outcome.traces, out_dir)?;
            outcome.metrics
        }
        RunMode::Realtime => {
            let exe = match &options.executable {
                Some(p) => p.clone(),
                None => std::env::current_exe().map_err(|e| OrchestratorError::Config(e.to_string()))?,
            };
            realtime::supervise(config, out_dir, &exe)?
        }
    };
    metrics.save(&out_dir.join(METRICS))?;
    Ok(metrics)
}

pub fn write_traces(traces: &TraceSet, out_dir: &Path) -> Result<(), OrchestratorError> {
    traces.plant.write_csv(&out_dir.join(PLANT_TRACE))?;
    if let Some(plan) = &traces.plan {
        plan.write_csv(&out_dir.join(PLAN_LOG))?;
    }
    write_records_csv(&traces.delays, &out_dir.join(DELAYS))?;
    Ok(())
}
