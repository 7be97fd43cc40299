//! Hourly battery dispatch.
//!
//! Substituting the grid balance into the cost makes the objective
//! `const - sum_i sum_t (c_grid_t + c_bess_t) * d_it * P_i * dt`, so every
//! battery is scheduled on its own over its SoC lattice.

mod brute;
mod dp;
mod horizon;

pub use brute::{brute_force_dispatch, MAX_BRUTE_FORCE_HORIZON};
pub use dp::dp_dispatch;
pub use horizon::{Forecasts, Measurement, PlanLogRow, RecedingHorizon, TickOutput};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::BatterySpec;

/// Tolerance on the SoC band, watt-hours.
pub const BOUND_TOL: f64 = 1e-9;

/// Actions in tie-break preference order: idle, charge, discharge.
pub const PREFERENCE: [i32; 3] = [0, -1, 1];

#[derive(Debug, Error, PartialEq)]
pub enum EmsError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("infeasible plan: {0}")]
    Infeasible(String),
    #[error("horizon {0} too large for exhaustive search (max {MAX_BRUTE_FORCE_HORIZON})")]
    HorizonTooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub bus_id: u8,
    pub spec: BatterySpec,
    /// Stored energy at the start of the horizon, Wh.
    pub e0: f64,
}

/// One optimisation instance. Series are indexed `[t][bus]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonProblem {
    pub dt: f64,
    pub load: Vec<Vec<f64>>,
    pub pv: Vec<Vec<f64>>,
    pub c_grid: Vec<f64>,
    pub c_bess: Vec<f64>,
    pub batteries: Vec<BatteryState>,
}

/// Dispatch decisions and the quantities they imply. Matrices are `[t][battery]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchPlan {
    pub d: Vec<Vec<i32>>,
    pub p_b: Vec<Vec<f64>>,
    pub p_g: Vec<f64>,
    /// `horizon + 1` rows.
    pub e: Vec<Vec<f64>>,
    pub cost: f64,
}

impl HorizonProblem {
    pub fn horizon(&self) -> usize {
        self.c_grid.len()
    }

    pub fn validate(&self) -> Result<(), EmsError> {
        let t = self.horizon();
        let bad = |m: String| Err(EmsError::InvalidProblem(m));
        if t == 0 {
            return bad("empty horizon".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt {} must be positive", self.dt));
        }
        if self.c_bess.len() != t || self.load.len() != t || self.pv.len() != t {
            return bad(format!("series lengths differ from horizon {t}"));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.c_grid) || !finite(&self.c_bess) || !self.load.iter().chain(&self.pv).all(|r| finite(r)) {
            return bad("non-finite series value".into());
        }
        for b in &self.batteries {
            let s = &b.spec;
            if !(s.eta > 0.0 && s.p_dispatch >= 0.0 && s.capacity > 0.0 && s.soc_min <= s.soc_max) {
                return bad(format!("battery on bus {} has invalid parameters", b.bus_id));
            }
            if b.e0 < s.e_min() - BOUND_TOL || b.e0 > s.e_max() + BOUND_TOL {
                return bad(format!("battery on bus {}: e0 {} outside [{}, {}]", b.bus_id, b.e0, s.e_min(), s.e_max()));
            }
        }
        Ok(())
    }

    pub fn idle_plan(&self) -> Result<DispatchPlan, EmsError> {
        let d = vec![vec![0; self.batteries.len()]; self.horizon()];
        plan_from_actions(self, d)
    }
}

/// Stored energy after holding action `d` for `dt` hours; discharge lowers it.
pub fn soc_step(e: f64, d: i32, spec: &BatterySpec, dt: f64) -> f64 {
    e - f64::from(d) * spec.eta * spec.p_dispatch * dt
}

fn within_band(e: f64, spec: &BatterySpec) -> bool {
    e >= spec.e_min() - BOUND_TOL && e <= spec.e_max() + BOUND_TOL
}

/// Actions that keep the battery inside its SoC band, in `-1, 0, +1` order.
pub fn feasible_actions(e: f64, spec: &BatterySpec, dt: f64) -> Vec<i32> {
    [-1, 0, 1]
        .into_iter()
        .filter(|&d| d == 0 || within_band(soc_step(e, d, spec, dt), spec))
        .collect()
}

/// Grid import for hour `t` given one action per battery.
pub fn grid_power(problem: &HorizonProblem, t: usize, d_row: &[i32]) -> f64 {
    let load: f64 = problem.load[t].iter().sum();
    let pv: f64 = problem.pv[t].iter().sum();
    let bess: f64 = problem
        .batteries
        .iter()
        .zip(d_row)
        .map(|(b, &d)| f64::from(d) * b.spec.p_dispatch)
        .sum();
    load - pv - bess
}

/// Realised objective of `plan`: grid purchases minus battery remuneration,
/// with powers in kW and prices per kWh.
pub fn horizon_cost(problem: &HorizonProblem, plan: &DispatchPlan) -> Result<f64, EmsError> {
    check_plan(problem, plan)?;
    let mut cost = 0.0;
    for t in 0..problem.horizon() {
        let p_g = grid_power(problem, t, &plan.d[t]);
        let p_b: f64 = problem
            .batteries
            .iter()
            .zip(&plan.d[t])
            .map(|(b, &d)| f64::from(d) * b.spec.p_dispatch)
            .sum();
        cost += (problem.c_grid[t] * p_g - problem.c_bess[t] * p_b) / 1000.0 * problem.dt;
    }
    Ok(cost)
}

/// Cost of the all-idle plan; `horizon_cost` minus this is the sum of the
/// per-battery contributions.
pub fn baseline_cost(problem: &HorizonProblem) -> f64 {
    (0..problem.horizon())
        .map(|t| problem.c_grid[t] * grid_power(problem, t, &vec![0; problem.batteries.len()]) / 1000.0 * problem.dt)
        .sum()
}

/// Cost change caused by one battery's column of actions.
pub fn battery_contribution(problem: &HorizonProblem, battery: usize, d: &[i32]) -> f64 {
    let p = problem.batteries[battery].spec.p_dispatch;
    d.iter()
        .enumerate()
        .map(|(t, &d)| -(problem.c_grid[t] + problem.c_bess[t]) * f64::from(d) * p / 1000.0 * problem.dt)
        .sum()
}

fn check_plan(problem: &HorizonProblem, plan: &DispatchPlan) -> Result<(), EmsError> {
    let n = problem.batteries.len();
    let t_len = problem.horizon();
    if plan.d.len() != t_len || plan.d.iter().any(|r| r.len() != n) {
        return Err(EmsError::Infeasible("plan shape does not match problem".into()));
    }
    for (i, b) in problem.batteries.iter().enumerate() {
        let mut e = b.e0;
        for t in 0..t_len {
            let d = plan.d[t][i];
            if !(-1..=1).contains(&d) {
                return Err(EmsError::Infeasible(format!("action {d} at hour {t}")));
            }
            e = soc_step(e, d, &b.spec, problem.dt);
            if d != 0 && !within_band(e, &b.spec) {
                return Err(EmsError::Infeasible(format!(
                    "battery on bus {} leaves its band at hour {t} (e = {e})",
                    b.bus_id
                )));
            }
        }
    }
    Ok(())
}

/// Fills in powers, trajectories and cost for a matrix of actions.
pub fn plan_from_actions(problem: &HorizonProblem, d: Vec<Vec<i32>>) -> Result<DispatchPlan, EmsError> {
    let t_len = problem.horizon();
    let mut plan = DispatchPlan { d, p_b: Vec::new(), p_g: Vec::new(), e: Vec::new(), cost: 0.0 };
    check_plan(problem, &plan)?;
    plan.p_b = plan
        .d
        .iter()
        .map(|row| problem.batteries.iter().zip(row).map(|(b, &d)| f64::from(d) * b.spec.p_dispatch).collect())
        .collect();
    plan.p_g = (0..t_len).map(|t| grid_power(problem, t, &plan.d[t])).collect();
    let mut e: Vec<f64> = problem.batteries.iter().map(|b| b.e0).collect();
    plan.e.push(e.clone());
    for t in 0..t_len {
        for (i, b) in problem.batteries.iter().enumerate() {
            e[i] = soc_step(e[i], plan.d[t][i], &b.spec, problem.dt);
        }
        plan.e.push(e.clone());
    }
    plan.cost = horizon_cost(problem, &plan)?;
    Ok(plan)
}

/// Per-hour weights of one battery on a common integer scale.
///
/// The weight of action `d` at hour `t` is `d * w[t]`. Integer sums are
/// associative, so every search order assigns a path the same total and
/// equal-cost plans tie exactly. The scale keeps about 110 bits below the
/// largest weight, far finer than the `f64` inputs resolve.
pub(crate) fn integer_weights(problem: &HorizonProblem, battery: usize) -> Vec<i128> {
    let p = problem.batteries[battery].spec.p_dispatch;
    let w: Vec<f64> = (0..problem.horizon())
        .map(|t| -(problem.c_grid[t] + problem.c_bess[t]) * p / 1000.0 * problem.dt)
        .collect();
    let max = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 || !max.is_finite() {
        return vec![0; w.len()];
    }
    let exp = max.log2().floor() as i32;
    let shift = 110 - exp;
    // split the power of two so neither factor overflows
    let half = shift / 2;
    let (a, b) = (2f64.powi(half), 2f64.powi(shift - half));
    w.iter().map(|x| ((x * a) * b).round() as i128).collect()
}

/// Ordering key for equal-cost plans: compares hours from the last one
/// backwards, preferring idle, then charge, then discharge.
pub(crate) fn preference_rank(d: i32) -> usize {
    PREFERENCE.iter().position(|&p| p == d).expect("action in {-1, 0, 1}")
}
