use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trace::TraceTable;
use super::OrchestratorError;
use crate::model::MicrogridSpec;
use crate::netem::{DelayRecord, DelayStats, Direction};

/// Accepted deviation of any bus voltage from nominal, as a fraction.
pub const VOLTAGE_BAND: f64 = 0.05;
/// Accepted power balance residual, as a fraction of total load.
pub const BALANCE_TOLERANCE: f64 = 0.005;

/// Summary of one run. Counts of invariant violations decide the exit code.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub fingerprint: String,
    pub mode: String,
    pub traffic_class: String,
    pub congestion: f64,
    pub seed: u64,
    pub samples: usize,
    /// Grid purchases minus battery remuneration over the run.
    pub total_cost: f64,
    pub soc_violations: u64,
    pub voltage_violations: u64,
    pub balance_violations: u64,
    /// Largest balance residual seen, as a fraction of total load.
    pub max_balance_error: f64,
    pub v_dc_min: f64,
    pub v_dc_max: f64,
    pub v_bus_min: f64,
    pub v_bus_max: f64,
    pub pcc_energy_import_kwh: f64,
    pub pcc_energy_export_kwh: f64,
    pub ticks: u64,
    pub stale_ticks: u64,
    pub timeouts: u64,
    pub cycles_skipped: u64,
    pub saturated_commands: u64,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelayStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay_request: Option<DelayStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay_response: Option<DelayStats>,
}

impl RunMetrics {
    pub fn invariant_violations(&self) -> u64 {
        self.soc_violations + self.voltage_violations + self.balance_violations
    }

    pub fn to_toml_string(&self) -> Result<String, OrchestratorError> {
        toml::to_string(self).map_err(|e| OrchestratorError::Trace(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), OrchestratorError> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| OrchestratorError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path).map_err(|e| OrchestratorError::io(path, e))?;
        toml::from_str(&text).map_err(|e| OrchestratorError::Trace(format!("{}: {e}", path.display())))
    }
}

/// Everything a run leaves behind that metrics are computed from.
#[derive(Debug, Clone, Default)]
pub struct TraceSet {
    pub plant: TraceTable,
    pub plan: Option<TraceTable>,
    pub delays: Vec<DelayRecord>,
    /// End of the run, sim seconds; closes the last sample interval.
    pub duration_s: f64,
}

fn delay_stats(records: &[&DelayRecord]) -> Option<DelayStats> {
    let delays: Vec<f64> = records.iter().map(|r| r.delay_us / 1e3).collect();
    DelayStats::from_delays(&delays).ok()
}

/// Integrates cost and PCC energy over the plant trace (each sample held
/// until the next) and checks every sample against the SoC band, the
/// voltage band and the power balance.
pub fn compute_metrics(traces: &TraceSet, spec: &MicrogridSpec) -> Result<RunMetrics, OrchestratorError> {
    let t = &traces.plant;
    let col = |name: &str| t.require(name);
    let (i_t, i_v, i_pcc, i_cg, i_cb) = (col("t_sim")?, col("v_dc")?, col("p_pcc")?, col("c_grid")?, col("c_bess")?);
    let mut bus_cols = Vec::new();
    for b in &spec.buses {
        let id = b.bus_id;
        let soc = match &b.bess {
            Some(bess) => Some((col(&format!("soc_{id}"))?, bess.soc_min, bess.soc_max)),
            None => None,
        };
        bus_cols.push((
            col(&format!("v_bus_{id}"))?,
            col(&format!("p_pv_{id}"))?,
            col(&format!("p_load_{id}"))?,
            col(&format!("p_bess_{id}"))?,
            soc,
        ));
    }

    let v_lo = spec.v_nominal * (1.0 - VOLTAGE_BAND);
    let v_hi = spec.v_nominal * (1.0 + VOLTAGE_BAND);
    let in_band = |v: f64| (v_lo..=v_hi).contains(&v);
    let mut m = RunMetrics {
        samples: t.rows.len(),
        v_dc_min: f64::INFINITY,
        v_dc_max: f64::NEG_INFINITY,
        v_bus_min: f64::INFINITY,
        v_bus_max: f64::NEG_INFINITY,
        ..RunMetrics::default()
    };
    for (k, row) in t.rows.iter().enumerate() {
        let t_next = t.rows.get(k + 1).map_or(traces.duration_s, |r| r[i_t]);
        let hours = (t_next - row[i_t]).max(0.0) / 3600.0;
        let p_pcc = row[i_pcc];
        let (mut load, mut pv, mut bess) = (0.0, 0.0, 0.0);
        let mut voltage_ok = in_band(row[i_v]);
        m.v_dc_min = m.v_dc_min.min(row[i_v]);
        m.v_dc_max = m.v_dc_max.max(row[i_v]);
        for &(iv, ipv, il, ib, soc) in &bus_cols {
            load += row[il];
            pv += row[ipv];
            bess += row[ib];
            // an open breaker reads 0 V and is not a voltage excursion
            if row[iv] != 0.0 {
                m.v_bus_min = m.v_bus_min.min(row[iv]);
                m.v_bus_max = m.v_bus_max.max(row[iv]);
                voltage_ok &= in_band(row[iv]);
            }
            if let Some((is, lo, hi)) = soc {
                let s = row[is];
                if !(s >= lo - 1e-9 && s <= hi + 1e-9) {
                    m.soc_violations += 1;
                }
            }
        }
        m.voltage_violations += u64::from(!voltage_ok);
        let error = (p_pcc - (load - pv - bess)).abs() / load.max(1.0);
        m.max_balance_error = m.max_balance_error.max(error);
        if !(error < BALANCE_TOLERANCE) {
            m.balance_violations += 1;
        }
        m.total_cost += (row[i_cg] * p_pcc - row[i_cb] * bess) / 1000.0 * hours;
        if p_pcc > 0.0 {
            m.pcc_energy_import_kwh += p_pcc / 1000.0 * hours;
        } else {
            m.pcc_energy_export_kwh += -p_pcc / 1000.0 * hours;
        }
    }

    if let Some(plan) = &traces.plan {
        let stale = plan.column("stale")?;
        m.ticks = stale.len() as u64;
        m.stale_ticks = stale.iter().filter(|&&s| s != 0.0).count() as u64;
    }

    let mut all: Vec<&DelayRecord> = traces.delays.iter().collect();
    all.sort_by(|a, b| a.arrival_us.total_cmp(&b.arrival_us));
    m.delay = delay_stats(&all);
    let by = |d: Direction| all.iter().copied().filter(|r| r.direction == d).collect::<Vec<_>>();
    m.delay_request = delay_stats(&by(Direction::Request));
    m.delay_response = delay_stats(&by(Direction::Response));
    Ok(m)
}

/// One compared quantity; `delta = b - a`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub quantity: &'static str,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub label_a: String,
    pub label_b: String,
    pub rows: Vec<DeltaRow>,
}

impl CompareReport {
    pub fn get(&self, quantity: &str) -> Option<&DeltaRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>16} {:>16} {:>16}", "quantity", self.label_a, self.label_b, "delta")?;
        for r in &self.rows {
            writeln!(f, "{:<24} {:>16.6} {:>16.6} {:>+16.6}", r.quantity, r.a, r.b, r.delta)?;
        }
        Ok(())
    }
}

/// Side-by-side deltas of two runs of the same scenario.
pub fn compare_runs(a: &RunMetrics, b: &RunMetrics) -> Result<CompareReport, OrchestratorError> {
    if a.fingerprint != b.fingerprint {
        return Err(OrchestratorError::Mismatch(format!(
            "scenario fingerprints differ ({} vs {})",
            a.fingerprint, b.fingerprint
        )));
    }
    let nan = f64::NAN;
    let stat = |s: &Option<DelayStats>, f: fn(&DelayStats) -> f64| s.as_ref().map_or(nan, f);
    let pairs: [(&'static str, f64, f64); 12] = [
        ("stale_ticks", a.stale_ticks as f64, b.stale_ticks as f64),
        ("total_cost", a.total_cost, b.total_cost),
        ("soc_violations", a.soc_violations as f64, b.soc_violations as f64),
        ("voltage_violations", a.voltage_violations as f64, b.voltage_violations as f64),
        ("balance_violations", a.balance_violations as f64, b.balance_violations as f64),
        ("pcc_import_kwh", a.pcc_energy_import_kwh, b.pcc_energy_import_kwh),
        ("pcc_export_kwh", a.pcc_energy_export_kwh, b.pcc_energy_export_kwh),
        ("timeouts", a.timeouts as f64, b.timeouts as f64),
        ("delay_mean_ms", stat(&a.delay, |s| s.mean_ms), stat(&b.delay, |s| s.mean_ms)),
        ("delay_jitter_us", stat(&a.delay, |s| s.jitter_us), stat(&b.delay, |s| s.jitter_us)),
        ("delay_max_ms", stat(&a.delay, |s| s.max_ms), stat(&b.delay, |s| s.max_ms)),
        ("round_trip_mean_ms", round_trip(a), round_trip(b)),
    ];
    let label = |m: &RunMetrics| format!("{}@{}", m.traffic_class, m.congestion);
    Ok(CompareReport {
        label_a: label(a),
        label_b: label(b),
        rows: pairs.into_iter().map(|(quantity, a, b)| DeltaRow { quantity, a, b, delta: b - a }).collect(),
    })
}

fn round_trip(m: &RunMetrics) -> f64 {
    match (&m.delay_request, &m.delay_response) {
        (Some(q), Some(r)) => q.mean_ms + r.mean_ms,
        _ => f64::NAN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MicrogridSpec;

    fn trace(spec: &MicrogridSpec, rows: usize, period: f64, f: impl Fn(usize, &str) -> f64) -> TraceTable {
        let mut columns: Vec<String> = ["t_sim", "v_dc", "p_pcc", "c_grid", "c_bess"].map(String::from).to_vec();
        for b in &spec.buses {
            for name in ["v_bus", "p_pv", "p_load", "p_bess"] {
                columns.push(format!("{name}_{}", b.bus_id));
            }
            if b.bess.is_some() {
                columns.push(format!("soc_{}", b.bus_id));
            }
        }
        let mut t = TraceTable::new(columns.clone());
        for k in 0..rows {
            t.push(columns.iter().map(|c| if c == "t_sim" { k as f64 * period } else { f(k, c) }).collect());
        }
        t
    }

    fn nominal(_: usize, c: &str) -> f64 {
        match c {
            "v_dc" => 400.0,
            "p_pcc" => 720.0,
            "c_grid" => 0.10,
            "c_bess" => 0.02,
            c if c.starts_with("v_bus") => 399.0,
            c if c.starts_with("p_load") => 180.0,
            c if c.starts_with("soc") => 0.5,
            _ => 0.0,
        }
    }

    #[test]
    fn constant_import_day_cost() {
        let spec = MicrogridSpec::table1();
        let traces = TraceSet { plant: trace(&spec, 8640, 10.0, nominal), duration_s: 86_400.0, ..Default::default() };
        let m = compute_metrics(&traces, &spec).unwrap();
        assert!((m.total_cost - 1.728).abs() < 1e-9, "{}", m.total_cost);
        assert!((m.pcc_energy_import_kwh - 17.28).abs() < 1e-9);
        assert_eq!(m.pcc_energy_export_kwh, 0.0);
        assert_eq!(m.invariant_violations(), 0);
        assert_eq!((m.v_dc_min, m.v_dc_max, m.v_bus_min), (400.0, 400.0, 399.0));
    }

    #[test]
    fn one_soc_sample_above_band() {
        let spec = MicrogridSpec::table1();
        let f = |k, c: &str| if k == 3 && c == "soc_2" { 0.96 } else { nominal(k, c) };
        let traces = TraceSet { plant: trace(&spec, 10, 10.0, f), duration_s: 100.0, ..Default::default() };
        assert_eq!(compute_metrics(&traces, &spec).unwrap().soc_violations, 1);
    }

    #[test]
    fn no_batteries_means_no_revenue() {
        let spec = MicrogridSpec::table1().without_batteries();
        let traces = TraceSet { plant: trace(&spec, 360, 10.0, nominal), duration_s: 3600.0, ..Default::default() };
        let m = compute_metrics(&traces, &spec).unwrap();
        assert!((m.total_cost - 0.072).abs() < 1e-12);
    }

    #[test]
    fn voltage_and_balance_violations() {
        let spec = MicrogridSpec::table1();
        let f = |k, c: &str| match (k, c) {
            (1, "v_dc") => 379.0,
            (2, "v_bus_3") => 421.0,
            (4, "p_pcc") => 700.0,
            _ => nominal(k, c),
        };
        let traces = TraceSet { plant: trace(&spec, 6, 10.0, f), duration_s: 60.0, ..Default::default() };
        let m = compute_metrics(&traces, &spec).unwrap();
        assert_eq!((m.voltage_violations, m.balance_violations), (2, 1));
        assert_eq!(m.v_dc_min, 379.0);
        assert_eq!(m.v_bus_max, 421.0);
    }

    #[test]
    fn missing_columns_are_reported() {
        let spec = MicrogridSpec::table1();
        let mut t = trace(&spec, 2, 10.0, nominal);
        let i = t.column_index("p_bess_4").unwrap();
        t.columns[i] = "x".into();
        let err = compute_metrics(&TraceSet { plant: t, ..Default::default() }, &spec).unwrap_err();
        assert!(matches!(err, OrchestratorError::MissingColumn(c) if c == "p_bess_4"));
    }

    #[test]
    fn identical_runs_compare_to_zero() {
        let m = RunMetrics { fingerprint: "f".into(), total_cost: 1.5, stale_ticks: 3, ..Default::default() };
        let report = compare_runs(&m, &m).unwrap();
        assert!(report.rows.iter().all(|r| r.delta == 0.0 || r.delta.is_nan()));
        let other = RunMetrics { fingerprint: "g".into(), ..m.clone() };
        assert!(matches!(compare_runs(&m, &other), Err(OrchestratorError::Mismatch(_))));
    }

    #[test]
    fn metrics_toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.toml");
        let m = RunMetrics {
            scenario: "x".into(),
            total_cost: 0.1 + 0.2,
            delay: Some(DelayStats::from_delays(&[1.0, 2.5, 2.0]).unwrap()),
            ..Default::default()
        };
        m.save(&path).unwrap();
        let back = RunMetrics::load(&path).unwrap();
        assert_eq!(back.total_cost, m.total_cost);
        assert_eq!(back.delay.unwrap().mean_ms, m.delay.unwrap().mean_ms);
    }
}
