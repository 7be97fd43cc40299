use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::model::TrafficClass;
use crate::netem::reference::{self, CONGESTION_LEVELS, MESSAGE_BYTES};
use crate::netem::{mean_delay_md1, DelaySampler, DelayStats, TrafficClassModel};

/// One cell of the delay/jitter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub class: TrafficClass,
    pub congestion: f64,
    pub messages: usize,
    pub mean_ms: f64,
    pub reference_ms: f64,
    pub rel_error: f64,
    pub analytic_ms: f64,
    pub jitter_us: f64,
    pub reference_jitter_us: f64,
}

/// Sweeps every class and congestion level with `messages` probes of the
/// reference message size. Cells are independent and run on separate
/// threads; each has its own seed, so the table does not depend on
/// scheduling.
pub fn calibrate_netem(messages: usize, seed: u64) -> Result<Vec<CalibrationRow>, OrchestratorError> {
    let cells: Vec<(TrafficClass, usize)> =
        TrafficClass::ALL.iter().flat_map(|&c| (0..CONGESTION_LEVELS.len()).map(move |k| (c, k))).collect();
    let rows = std::thread::scope(|s| {
        let handles: Vec<_> = cells
            .iter()
            .enumerate()
            .map(|(i, &(class, k))| s.spawn(move || calibrate_cell(class, k, messages, seed.wrapping_add(i as u64))))
            .collect();
        handles.into_iter().map(|h| h.join().expect("calibration thread panicked")).collect::<Result<Vec<_>, _>>()
    })?;
    Ok(rows)
}

fn calibrate_cell(class: TrafficClass, level: usize, messages: usize, seed: u64) -> Result<CalibrationRow, OrchestratorError> {
    let congestion = CONGESTION_LEVELS[level];
    let model = TrafficClassModel::new(class, congestion, seed);
    let analytic_ms = mean_delay_md1(MESSAGE_BYTES, &model)?;
    let mut sampler = DelaySampler::new(model)?;
    let delays: Vec<f64> = (0..messages).map(|_| sampler.sample_delay(MESSAGE_BYTES)).collect();
    let stats = DelayStats::from_delays(&delays)?;
    let reference_ms = reference::mean_delay_ms(class)[level];
    Ok(CalibrationRow {
        class,
        congestion,
        messages,
        mean_ms: stats.mean_ms,
        reference_ms,
        rel_error: (stats.mean_ms - reference_ms) / reference_ms,
        analytic_ms,
        jitter_us: stats.jitter_us,
        reference_jitter_us: reference::jitter_us(class)[level],
    })
}

pub fn write_calibration_csv(rows: &[CalibrationRow], path: &Path) -> Result<(), OrchestratorError> {
    let err = |e: csv::Error| OrchestratorError::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| OrchestratorError::io(path, e))
}
