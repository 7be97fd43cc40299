use serde::{Deserialize, Serialize};

use super::{dp_dispatch, BatteryState, DispatchPlan, EmsError, HorizonProblem};
use crate::model::{BatterySpec, ProfileKind, ProfileTable, ScenarioConfig};

/// Perfect-foresight forecasts: the scenario's own daily profiles.
#[derive(Debug, Clone)]
pub struct Forecasts {
    bus_ids: Vec<u8>,
    pv: Vec<Option<ProfileTable>>,
    load: Vec<Option<ProfileTable>>,
    c_grid: ProfileTable,
    c_bess: Option<ProfileTable>,
}

impl Forecasts {
    pub fn from_scenario(config: &ScenarioConfig) -> Result<Self, EmsError> {
        let buses = &config.spec.buses;
        let table = |kind, bus| config.profile(kind, Some(bus)).map(|p| p.table());
        let c_grid = config
            .profile(ProfileKind::PriceGrid, None)
            .ok_or_else(|| EmsError::InvalidProblem("scenario has no grid price profile".into()))?
            .table();
        Ok(Self {
            bus_ids: buses.iter().map(|b| b.bus_id).collect(),
            pv: buses.iter().map(|b| if b.pv_rating > 0.0 { table(ProfileKind::Pv, b.bus_id) } else { None }).collect(),
            load: buses.iter().map(|b| table(ProfileKind::Load, b.bus_id)).collect(),
            c_grid,
            c_bess: config.profile(ProfileKind::PriceBess, None).map(|p| p.table()),
        })
    }

    /// Window means over `[now + t dt, now + (t + 1) dt)` for `t < horizon`,
    /// wrapping the daily profiles.
    pub fn problem(&self, now_s: f64, horizon: usize, dt_h: f64, batteries: Vec<BatteryState>) -> HorizonProblem {
        let step = dt_h * 3600.0;
        let window = |table: &ProfileTable, t: usize| table.mean_over(now_s + t as f64 * step, now_s + (t + 1) as f64 * step);
        let series = |tables: &[Option<ProfileTable>], t: usize| -> Vec<f64> {
            tables.iter().map(|tb| tb.as_ref().map_or(0.0, |tb| window(tb, t))).collect()
        };
        HorizonProblem {
            dt: dt_h,
            load: (0..horizon).map(|t| series(&self.load, t)).collect(),
            pv: (0..horizon).map(|t| series(&self.pv, t)).collect(),
            c_grid: (0..horizon).map(|t| window(&self.c_grid, t)).collect(),
            c_bess: (0..horizon).map(|t| self.c_bess.as_ref().map_or(0.0, |tb| window(tb, t))).collect(),
            batteries,
        }
    }

    pub fn bus_ids(&self) -> &[u8] {
        &self.bus_ids
    }
}

/// Latest telemetry for one battery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub bus_id: u8,
    pub soc: f64,
    /// Age of the measurement when the tick runs, wall milliseconds.
    pub age_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    /// `(bus_id, d)` for every battery, in bus order.
    pub commands: Vec<(u8, i32)>,
    pub plan: DispatchPlan,
    pub stale: bool,
    pub stale_buses: Vec<u8>,
}

/// One row of the plan log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanLogRow {
    pub t_sim: f64,
    pub commands: Vec<(u8, i32)>,
    pub p_g_forecast: f64,
    pub cost_forecast: f64,
    pub stale: bool,
}

/// Rolling-horizon controller: re-solves the full horizon at every tick and
/// releases only the first hour.
#[derive(Debug, Clone)]
pub struct RecedingHorizon {
    forecasts: Forecasts,
    batteries: Vec<(u8, BatterySpec)>,
    horizon: usize,
    dt_h: f64,
    staleness_limit_ms: f64,
    /// Last SoC seen per battery, used for planning when telemetry is stale.
    last_soc: Vec<f64>,
    previous: Vec<i32>,
}

impl RecedingHorizon {
    pub fn new(config: &ScenarioConfig) -> Result<Self, EmsError> {
        let batteries: Vec<(u8, BatterySpec)> = config.spec.batteries().map(|(b, s)| (b, s.clone())).collect();
        let last_soc = batteries.iter().map(|(b, _)| config.initial_soc_for(*b).unwrap_or(0.5)).collect();
        Ok(Self {
            forecasts: Forecasts::from_scenario(config)?,
            previous: vec![0; batteries.len()],
            batteries,
            horizon: config.horizon_hours,
            dt_h: config.dt_dispatch,
            staleness_limit_ms: config.staleness_limit_ms(),
            last_soc,
        })
    }

    pub fn battery_buses(&self) -> Vec<u8> {
        self.batteries.iter().map(|(b, _)| *b).collect()
    }

    pub fn staleness_limit_ms(&self) -> f64 {
        self.staleness_limit_ms
    }

    pub fn previous_commands(&self) -> Vec<(u8, i32)> {
        self.batteries.iter().map(|(b, _)| *b).zip(self.previous.iter().copied()).collect()
    }

    /// Plans from the measured SoC. Batteries without a fresh measurement
    /// keep their previous command and raise the stale flag.
    pub fn tick(&mut self, now_s: f64, measurements: &[Measurement]) -> Result<TickOutput, EmsError> {
        let mut fresh = vec![false; self.batteries.len()];
        for (i, (bus, _)) in self.batteries.iter().enumerate() {
            if let Some(m) = measurements.iter().filter(|m| m.bus_id == *bus).min_by(|a, b| a.age_ms.total_cmp(&b.age_ms)) {
                if m.soc.is_finite() {
                    self.last_soc[i] = m.soc;
                }
                fresh[i] = m.age_ms <= self.staleness_limit_ms;
            }
        }
        let states = self
            .batteries
            .iter()
            .zip(&self.last_soc)
            .map(|((bus_id, spec), soc)| BatteryState {
                bus_id: *bus_id,
                spec: spec.clone(),
                e0: (soc * spec.capacity).clamp(spec.e_min(), spec.e_max()),
            })
            .collect();
        let problem = self.forecasts.problem(now_s, self.horizon, self.dt_h, states);
        let plan = dp_dispatch(&problem)?;
        let mut stale_buses = Vec::new();
        for (i, (bus, _)) in self.batteries.iter().enumerate() {
            if fresh[i] {
                self.previous[i] = plan.d[0][i];
            } else {
                stale_buses.push(*bus);
            }
        }
        Ok(TickOutput { commands: self.previous_commands(), plan, stale: !stale_buses.is_empty(), stale_buses })
    }
}

impl TickOutput {
    pub fn log_row(&self, t_sim: f64) -> PlanLogRow {
        PlanLogRow {
            t_sim,
            commands: self.commands.clone(),
            p_g_forecast: self.plan.p_g.first().copied().unwrap_or(0.0),
            cost_forecast: self.plan.cost,
            stale: self.stale,
        }
    }
}
