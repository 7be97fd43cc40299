use std::path::Path;

use super::OrchestratorError;
use crate::ems::TickOutput;
use crate::model::{MicrogridSpec, ProfileTable};
use crate::plant::MeasurementSnapshot;

pub const PLANT_TRACE: &str = "plant_trace.csv";
pub const PLAN_LOG: &str = "plan_log.csv";
pub const DELAYS: &str = "delays.csv";
pub const METRICS: &str = "metrics.toml";
pub const SCENARIO: &str = "scenario.toml";

/// A numeric CSV table: one header row, every cell an `f64`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TraceTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn require(&self, name: &str) -> Result<usize, OrchestratorError> {
        self.column_index(name).ok_or_else(|| OrchestratorError::MissingColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, OrchestratorError> {
        let i = self.require(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), OrchestratorError> {
        let err = |e: csv::Error| OrchestratorError::io(path, e);
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(&self.columns).map_err(err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(err)?;
        }
        w.flush().map_err(|e| OrchestratorError::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self, OrchestratorError> {
        let err = |e: csv::Error| OrchestratorError::io(path, e);
        let mut r = csv::Reader::from_path(path).map_err(err)?;
        let columns: Vec<String> = r.headers().map_err(err)?.iter().map(str::to_string).collect();
        let mut table = Self::new(columns);
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(err)?;
            let row = record
                .iter()
                .map(|cell| {
                    cell.parse::<f64>().map_err(|_| {
                        OrchestratorError::Trace(format!("{}: row {}: not a number: {cell:?}", path.display(), line + 2))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != table.columns.len() {
                return Err(OrchestratorError::Trace(format!("{}: row {} has {} cells", path.display(), line + 2, row.len())));
            }
            table.rows.push(row);
        }
        Ok(table)
    }
}

/// Builds plant trace rows from snapshots.
#[derive(Debug, Clone)]
pub struct PlantTraceBuilder {
    buses: Vec<(u8, bool)>,
    c_grid: ProfileTable,
    c_bess: Option<ProfileTable>,
    table: TraceTable,
}

impl PlantTraceBuilder {
    pub fn new(spec: &MicrogridSpec, c_grid: ProfileTable, c_bess: Option<ProfileTable>) -> Self {
        let buses: Vec<(u8, bool)> = spec.buses.iter().map(|b| (b.bus_id, b.bess.is_some())).collect();
        let mut columns: Vec<String> = ["t_sim", "v_dc", "p_pcc", "c_grid", "c_bess"].map(String::from).to_vec();
        for &(b, has_bess) in &buses {
            for name in ["v_bus", "p_pv", "p_load", "p_bess"] {
                columns.push(format!("{name}_{b}"));
            }
            if has_bess {
                columns.push(format!("soc_{b}"));
                columns.push(format!("d_{b}"));
            }
        }
        Self { buses, c_grid, c_bess, table: TraceTable::new(columns) }
    }

    /// Appends one sample; `commands` are the active dispatch commands.
    pub fn record(&mut self, snap: &MeasurementSnapshot, commands: &[(u8, i32)]) {
        let t = snap.t_sim;
        let mut row = vec![
            t,
            snap.v_dc,
            snap.p_pcc,
            self.c_grid.value_at(t),
            self.c_bess.as_ref().map_or(0.0, |c| c.value_at(t)),
        ];
        for &(b, has_bess) in &self.buses {
            let m = snap.bus(b).expect("snapshot covers every bus");
            row.extend([m.v_bus, m.p_pv, m.p_load, m.p_bess]);
            if has_bess {
                row.push(m.soc.unwrap_or(f64::NAN));
                row.push(f64::from(commands.iter().find(|c| c.0 == b).map_or(0, |c| c.1)));
            }
        }
        self.table.push(row);
    }

    pub fn finish(self) -> TraceTable {
        self.table
    }
}

/// Builds plan log rows from EMS ticks.
#[derive(Debug, Clone)]
pub struct PlanLogBuilder {
    batteries: Vec<u8>,
    table: TraceTable,
}

impl PlanLogBuilder {
    pub fn new(batteries: Vec<u8>) -> Self {
        let mut columns: Vec<String> = ["t_sim", "stale", "stale_batteries", "p_g_forecast", "cost_forecast"]
            .map(String::from)
            .to_vec();
        columns.extend(batteries.iter().map(|b| format!("d_{b}")));
        Self { batteries, table: TraceTable::new(columns) }
    }

    pub fn record(&mut self, t_sim: f64, tick: &TickOutput) {
        let row = tick.log_row(t_sim);
        let mut values = vec![
            row.t_sim,
            f64::from(u8::from(row.stale)),
            tick.stale_buses.len() as f64,
            row.p_g_forecast,
            row.cost_forecast,
        ];
        for b in &self.batteries {
            values.push(f64::from(row.commands.iter().find(|c| c.0 == *b).map_or(0, |c| c.1)));
        }
        self.table.push(values);
    }

    pub fn finish(self) -> TraceTable {
        self.table
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = TraceTable::new(vec!["a".into(), "b".into()]);
        t.push(vec![0.1 + 0.2, -1e-300]);
        t.push(vec![f64::MAX, 400.0]);
        t.write_csv(&path).unwrap();
        assert_eq!(TraceTable::read_csv(&path).unwrap(), t);
    }

    #[test]
    fn missing_column_is_named() {
        let t = TraceTable::new(vec!["t_sim".into()]);
        let err = t.column("p_pcc").unwrap_err();
        assert!(matches!(err, OrchestratorError::MissingColumn(ref c) if c == "p_pcc"));
    }
}
