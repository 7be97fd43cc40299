//! Averaged converter-level model of the DC microgrid.
//!
//! State per bus slot: PV inductor current and its PI integrator, battery
//! inductor current (battery side, discharge positive) and its integrator,
//! stored energy. Shared state: DC bus voltage and the grid slack integrator.
//!
//! ```text
//! L_p di_p/dt = v_pv - d_p v_dc            d_p in [0, 1]
//! L_b di_b/dt = v_b  - d_b v_dc            d_b in [-1, 1]
//! C   dv_dc/dt = sum d_p i_p + sum d_b i_b - sum G_L v_dc + i_g
//! dE/dt       = -eta v_b i_b / 3600        (Wh/s)
//! ```
//!
//! The grid branch is a voltage regulator: feed-forward of the measured
//! device currents plus a PI loop on the bus voltage, limited in power.

mod equilibrium;
mod runner;

pub use equilibrium::{solve_equilibrium, EquilibriumInputs};
pub use runner::{CommandOutcome, PlantCommand, PlantRunner};

use crate::model::{validate_scenario, ModelError, ProfileKind, ProfileTable, ScenarioConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on prosumer buses.
pub const MAX_SLOTS: usize = 4;
const N: usize = 2 + 5 * MAX_SLOTS;
const V: usize = 0;
const XG: usize = 1;
const fn ip(k: usize) -> usize {
    2 + 5 * k
}
const fn xp(k: usize) -> usize {
    3 + 5 * k
}
const fn ib(k: usize) -> usize {
    4 + 5 * k
}
const fn xb(k: usize) -> usize {
    5 + 5 * k
}
const fn en(k: usize) -> usize {
    6 + 5 * k
}

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ModelError),
    #[error("non-finite {variable} at t = {t_sim} s")]
    NonFinite { variable: String, t_sim: f64 },
    #[error("unknown bus {0}")]
    UnknownBus(u8),
    #[error("bus {0} has no battery")]
    NoBattery(u8),
    #[error("invalid command value {value} for bus {bus}")]
    InvalidCommand { bus: u8, value: i32 },
    #[error("no equilibrium: {0}")]
    NoSolution(String),
}

#[derive(Debug, Clone, Copy, Default)]
struct Slot {
    bus_id: u8,
    r_feeder: f64,
    pv_rating: f64,
    bess: Option<Bess>,
}

#[derive(Debug, Clone, Copy)]
struct Bess {
    capacity: f64,
    e_min: f64,
    e_max: f64,
    eta: f64,
    p_dispatch: f64,
    p_conv_max: f64,
    l: f64,
    kp: f64,
    ki: f64,
}

/// Fixed parameters derived from the scenario spec.
#[derive(Debug, Clone)]
struct Params {
    n: usize,
    slots: [Slot; MAX_SLOTS],
    v_nom: f64,
    c_dc: f64,
    v_pv: f64,
    l_pv: f64,
    kp_p: f64,
    ki_p: f64,
    v_b: f64,
    kp_v: f64,
    ki_v: f64,
    grid_limit: f64,
}

impl Params {
    fn from_spec(spec: &crate::model::MicrogridSpec) -> Self {
        let c = &spec.converters;
        let wc = c.current_bandwidth;
        let wv = c.voltage_bandwidth;
        let mut slots = [Slot::default(); MAX_SLOTS];
        for (k, bus) in spec.buses.iter().enumerate().take(MAX_SLOTS) {
            slots[k] = Slot {
                bus_id: bus.bus_id,
                r_feeder: spec.feeders[bus.feeder_index].r,
                pv_rating: bus.pv_rating,
                bess: bus.bess.as_ref().map(|b| Bess {
                    capacity: b.capacity,
                    e_min: b.e_min(),
                    e_max: b.e_max(),
                    eta: b.eta,
                    p_dispatch: b.p_dispatch,
                    p_conv_max: b.p_conv_max,
                    l: b.l_conv,
                    kp: 2.0 * wc * b.l_conv,
                    ki: wc * wc * b.l_conv,
                }),
            };
        }
        Self {
            n: spec.buses.len().min(MAX_SLOTS),
            slots,
            v_nom: spec.v_nominal,
            c_dc: spec.c_dc,
            v_pv: c.v_pv,
            l_pv: c.l_pv,
            kp_p: 2.0 * wc * c.l_pv,
            ki_p: wc * wc * c.l_pv,
            v_b: c.v_battery,
            kp_v: 2.0 * wv * spec.c_dc,
            ki_v: wv * wv * spec.c_dc,
            grid_limit: c.grid_limit_w,
        }
    }
}

/// Setpoints applied to the converters, indexed by bus slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverterCommand {
    /// Battery power at the bus, watts, discharge positive.
    pub bess_setpoint: [f64; MAX_SLOTS],
    /// PV output as a fraction of the profile value.
    pub curtailment: [f64; MAX_SLOTS],
    pub breaker_closed: [bool; MAX_SLOTS],
}

impl Default for ConverterCommand {
    fn default() -> Self {
        Self { bess_setpoint: [0.0; MAX_SLOTS], curtailment: [1.0; MAX_SLOTS], breaker_closed: [true; MAX_SLOTS] }
    }
}

/// Exogenous inputs held constant over one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepInputs {
    /// Available PV power, watts.
    pub pv: [f64; MAX_SLOTS],
    /// Load power at nominal voltage, watts.
    pub load: [f64; MAX_SLOTS],
}

/// Integrator state of the whole plant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    /// Completed integration steps; `t_sim = steps * dt`.
    pub steps: u64,
    pub dt: f64,
    y: [f64; N],
}

impl PlantState {
    pub fn t_sim(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn v_dc(&self) -> f64 {
        self.y[V]
    }

    pub fn i_pv(&self, slot: usize) -> f64 {
        self.y[ip(slot)]
    }

    pub fn i_bess(&self, slot: usize) -> f64 {
        self.y[ib(slot)]
    }

    pub fn energy(&self, slot: usize) -> f64 {
        self.y[en(slot)]
    }
}

/// Per-bus part of a [`MeasurementSnapshot`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusMeasurement {
    pub bus_id: u8,
    pub v_bus: f64,
    pub p_pv: f64,
    pub p_load: f64,
    /// Discharge positive.
    pub p_bess: f64,
    pub soc: Option<f64>,
    pub e: Option<f64>,
    pub breaker_closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSnapshot {
    pub t_sim: f64,
    /// Plant step counter at the time of the snapshot.
    pub seq: u64,
    pub v_dc: f64,
    /// Grid exchange, import positive.
    pub p_pcc: f64,
    pub buses: Vec<BusMeasurement>,
}

impl MeasurementSnapshot {
    pub fn bus(&self, bus_id: u8) -> Option<&BusMeasurement> {
        self.buses.iter().find(|b| b.bus_id == bus_id)
    }

    /// Power balance residual `p_pcc - (load - pv - bess)`.
    pub fn balance_residual(&self) -> f64 {
        let net: f64 = self.buses.iter().map(|b| b.p_load - b.p_pv - b.p_bess).sum();
        self.p_pcc - net
    }

    pub fn total_load(&self) -> f64 {
        self.buses.iter().map(|b| b.p_load).sum()
    }
}

/// Algebraic quantities of one derivative evaluation.
#[derive(Debug, Clone, Copy, Default)]
struct Aux {
    d_p: [f64; MAX_SLOTS],
    d_b: [f64; MAX_SLOTS],
    /// Current injected into the bus by PV and battery converters.
    inj_pv: [f64; MAX_SLOTS],
    inj_b: [f64; MAX_SLOTS],
    i_load: [f64; MAX_SLOTS],
    i_g: f64,
}

fn pi_duty(v_src: f64, u: f64, v: f64, lo: f64, hi: f64) -> (f64, bool) {
    let raw = (v_src - u) / v;
    if raw < lo {
        (lo, true)
    } else if raw > hi {
        (hi, true)
    } else {
        (raw, false)
    }
}

fn derivatives(p: &Params, y: &[f64; N], inputs: &StepInputs, cmd: &ConverterCommand) -> ([f64; N], Aux) {
    let mut dy = [0.0; N];
    let mut aux = Aux::default();
    // a collapsed bus leaves the duty ratios undefined; keep them finite
    let v = y[V].max(1.0);
    let mut i_dev = 0.0;
    for k in 0..p.n {
        let slot = &p.slots[k];
        if !cmd.breaker_closed[k] {
            continue;
        }
        if slot.pv_rating > 0.0 {
            let i_ref = (inputs.pv[k] * cmd.curtailment[k]).max(0.0) / p.v_pv;
            let err = i_ref - y[ip(k)];
            let u = p.kp_p * err + p.ki_p * y[xp(k)];
            let (d, sat) = pi_duty(p.v_pv, u, v, 0.0, 1.0);
            dy[ip(k)] = (p.v_pv - d * y[V]) / p.l_pv;
            dy[xp(k)] = if sat { 0.0 } else { err };
            aux.d_p[k] = d;
            aux.inj_pv[k] = d * y[ip(k)];
        }
        if let Some(b) = &slot.bess {
            let mut setpoint = cmd.bess_setpoint[k].clamp(-b.p_conv_max, b.p_conv_max);
            let e = y[en(k)];
            if (setpoint > 0.0 && e <= 0.0) || (setpoint < 0.0 && e >= b.capacity) {
                setpoint = 0.0;
            }
            let err = setpoint / p.v_b - y[ib(k)];
            let u = b.kp * err + b.ki * y[xb(k)];
            let (d, sat) = pi_duty(p.v_b, u, v, -1.0, 1.0);
            dy[ib(k)] = (p.v_b - d * y[V]) / b.l;
            dy[xb(k)] = if sat { 0.0 } else { err };
            dy[en(k)] = -b.eta * p.v_b * y[ib(k)] / 3600.0;
            aux.d_b[k] = d;
            aux.inj_b[k] = d * y[ib(k)];
        }
        aux.i_load[k] = inputs.load[k].max(0.0) / (p.v_nom * p.v_nom) * y[V];
        i_dev += aux.inj_pv[k] + aux.inj_b[k] - aux.i_load[k];
    }
    let err_v = p.v_nom - y[V];
    let raw = -i_dev + p.kp_v * err_v + p.ki_v * y[XG];
    let i_max = p.grid_limit / v;
    let i_g = raw.clamp(-i_max, i_max);
    dy[XG] = if i_g != raw { 0.0 } else { err_v };
    dy[V] = (i_dev + i_g) / p.c_dc;
    aux.i_g = i_g;
    (dy, aux)
}

fn axpy(y: &[f64; N], h: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += h * k[i];
    }
    out
}

/// Advances `state` by one RK4 step with inputs and command held constant.
pub fn step_plant(
    spec: &PlantModel,
    state: &PlantState,
    inputs: &StepInputs,
    cmd: &ConverterCommand,
) -> Result<PlantState, PlantError> {
    let p = &spec.params;
    let h = state.dt;
    let y = &state.y;
    let (k1, _) = derivatives(p, y, inputs, cmd);
    let (k2, _) = derivatives(p, &axpy(y, 0.5 * h, &k1), inputs, cmd);
    let (k3, _) = derivatives(p, &axpy(y, 0.5 * h, &k2), inputs, cmd);
    let (k4, _) = derivatives(p, &axpy(y, h, &k3), inputs, cmd);
    let mut next = *y;
    for i in 0..N {
        next[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    for k in 0..p.n {
        if !cmd.breaker_closed[k] {
            next[ip(k)] = 0.0;
            next[ib(k)] = 0.0;
        }
        if let Some(b) = &p.slots[k].bess {
            next[en(k)] = next[en(k)].clamp(0.0, b.capacity);
        }
    }
    let out = PlantState { steps: state.steps + 1, dt: h, y: next };
    spec.check_finite(&out)?;
    Ok(out)
}

/// Static part of the plant: parameters and exogenous profiles.
#[derive(Debug, Clone)]
pub struct PlantModel {
    params: Params,
    pv: [Option<ProfileTable>; MAX_SLOTS],
    load: [Option<ProfileTable>; MAX_SLOTS],
}

impl PlantModel {
    pub fn new(config: &ScenarioConfig) -> Result<Self, PlantError> {
        let violations = validate_scenario(config);
        if !violations.is_empty() {
            return Err(ModelError::Invalid(violations).into());
        }
        let params = Params::from_spec(&config.spec);
        let mut pv: [Option<ProfileTable>; MAX_SLOTS] = Default::default();
        let mut load: [Option<ProfileTable>; MAX_SLOTS] = Default::default();
        for (k, bus) in config.spec.buses.iter().enumerate() {
            if bus.pv_rating > 0.0 {
                pv[k] = config.profile(ProfileKind::Pv, Some(bus.bus_id)).map(|p| p.table());
            }
            load[k] = config.profile(ProfileKind::Load, Some(bus.bus_id)).map(|p| p.table());
        }
        Ok(Self { params, pv, load })
    }

    pub fn slots(&self) -> usize {
        self.params.n
    }

    pub fn bus_ids(&self) -> Vec<u8> {
        (0..self.params.n).map(|k| self.params.slots[k].bus_id).collect()
    }

    pub fn slot_of(&self, bus_id: u8) -> Option<usize> {
        (0..self.params.n).find(|&k| self.params.slots[k].bus_id == bus_id)
    }

    pub fn has_battery(&self, slot: usize) -> bool {
        self.params.slots[slot].bess.is_some()
    }

    pub fn has_pv(&self, slot: usize) -> bool {
        self.params.slots[slot].pv_rating > 0.0
    }

    pub fn v_nominal(&self) -> f64 {
        self.params.v_nom
    }

    pub fn capacity(&self, slot: usize) -> Option<f64> {
        self.params.slots[slot].bess.map(|b| b.capacity)
    }

    /// Profile values at `t`, using and updating per-profile search hints.
    fn inputs_at(&self, t: f64, hints: &mut [[usize; 2]; MAX_SLOTS]) -> StepInputs {
        let mut inputs = StepInputs::default();
        for k in 0..self.params.n {
            if let Some(table) = &self.pv[k] {
                inputs.pv[k] = table.value_at_hint(t, &mut hints[k][0]);
            }
            if let Some(table) = &self.load[k] {
                inputs.load[k] = table.value_at_hint(t, &mut hints[k][1]);
            }
        }
        inputs
    }

    /// Initial state: nominal bus voltage, zero currents and integrators,
    /// stored energy from the configured initial SoC.
    pub fn init_state(&self, config: &ScenarioConfig) -> PlantState {
        let mut y = [0.0; N];
        y[V] = self.params.v_nom;
        for k in 0..self.params.n {
            if let Some(b) = &self.params.slots[k].bess {
                let soc = config.initial_soc_for(self.params.slots[k].bus_id).unwrap_or(0.5);
                y[en(k)] = soc * b.capacity;
            }
        }
        PlantState { steps: 0, dt: config.sim.dt_sim_s, y }
    }

    fn check_finite(&self, state: &PlantState) -> Result<(), PlantError> {
        if state.y.iter().all(|x| x.is_finite()) {
            return Ok(());
        }
        let t_sim = state.t_sim();
        let bad = state.y.iter().position(|x| !x.is_finite()).unwrap_or(0);
        let variable = match bad {
            V => "v_dc".to_string(),
            XG => "grid integrator".to_string(),
            i => {
                let k = (i - 2) / 5;
                let bus = self.params.slots[k].bus_id;
                let name = ["i_p", "pv integrator", "i_b", "battery integrator", "e"][(i - 2) % 5];
                format!("{name} of bus {bus}")
            }
        };
        Err(PlantError::NonFinite { variable, t_sim })
    }

    /// Snapshot of `state` evaluated with the inputs of the step that
    /// produced it.
    pub fn snapshot(&self, state: &PlantState, inputs: &StepInputs, cmd: &ConverterCommand) -> MeasurementSnapshot {
        let p = &self.params;
        let (_, aux) = derivatives(p, &state.y, inputs, cmd);
        let v = state.y[V];
        let buses = (0..p.n)
            .map(|k| {
                let slot = &p.slots[k];
                let closed = cmd.breaker_closed[k];
                let branch = aux.i_load[k] - aux.inj_pv[k] - aux.inj_b[k];
                BusMeasurement {
                    bus_id: slot.bus_id,
                    v_bus: if closed { v - slot.r_feeder * branch } else { 0.0 },
                    p_pv: aux.inj_pv[k] * v,
                    p_load: aux.i_load[k] * v,
                    p_bess: aux.inj_b[k] * v,
                    soc: slot.bess.map(|b| state.y[en(k)] / b.capacity),
                    e: slot.bess.map(|_| state.y[en(k)]),
                    breaker_closed: closed,
                }
            })
            .collect();
        MeasurementSnapshot { t_sim: state.t_sim(), seq: state.steps, v_dc: v, p_pcc: v * aux.i_g, buses }
    }

    /// Duty ratios `(d_p, d_b)` at `state`.
    pub fn duties(&self, state: &PlantState, inputs: &StepInputs, cmd: &ConverterCommand) -> ([f64; MAX_SLOTS], [f64; MAX_SLOTS]) {
        let (_, aux) = derivatives(&self.params, &state.y, inputs, cmd);
        (aux.d_p, aux.d_b)
    }
}

/// A plant driven by its own profiles: owns state, command and inputs.
#[derive(Debug, Clone)]
pub struct Plant {
    model: PlantModel,
    state: PlantState,
    command: ConverterCommand,
    inputs: StepInputs,
    hints: [[usize; 2]; MAX_SLOTS],
    /// Slots whose last dispatch command was forced to idle.
    saturated: [bool; MAX_SLOTS],
}

impl Plant {
    pub fn new(config: &ScenarioConfig) -> Result<Self, PlantError> {
        let model = PlantModel::new(config)?;
        let state = model.init_state(config);
        let mut hints = [[0; 2]; MAX_SLOTS];
        let inputs = model.inputs_at(0.0, &mut hints);
        Ok(Self {
            model,
            state,
            command: ConverterCommand::default(),
            inputs,
            hints,
            saturated: [false; MAX_SLOTS],
        })
    }

    pub fn model(&self) -> &PlantModel {
        &self.model
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn command(&self) -> &ConverterCommand {
        &self.command
    }

    pub fn command_mut(&mut self) -> &mut ConverterCommand {
        &mut self.command
    }

    pub fn inputs(&self) -> &StepInputs {
        &self.inputs
    }

    pub fn t_sim(&self) -> f64 {
        self.state.t_sim()
    }

    pub fn saturated(&self, slot: usize) -> bool {
        self.saturated[slot]
    }

    /// One step with profile inputs sampled at the step start.
    pub fn step(&mut self) -> Result<(), PlantError> {
        let t = self.state.t_sim();
        self.inputs = self.model.inputs_at(t, &mut self.hints);
        self.state = step_plant(&self.model, &self.state, &self.inputs, &self.command)?;
        Ok(())
    }

    /// Steps until the step counter reaches `steps`.
    pub fn advance_to_step(&mut self, steps: u64) -> Result<(), PlantError> {
        while self.state.steps < steps {
            self.step()?;
        }
        Ok(())
    }

    /// Steps with explicit inputs instead of the profiles.
    pub fn step_with(&mut self, inputs: StepInputs) -> Result<(), PlantError> {
        self.inputs = inputs;
        self.state = step_plant(&self.model, &self.state, &self.inputs, &self.command)?;
        Ok(())
    }

    pub fn snapshot(&self) -> MeasurementSnapshot {
        self.model.snapshot(&self.state, &self.inputs, &self.command)
    }

    pub fn duties(&self) -> ([f64; MAX_SLOTS], [f64; MAX_SLOTS]) {
        self.model.duties(&self.state, &self.inputs, &self.command)
    }

    /// Turns integer dispatch commands into battery setpoints. A command
    /// that would leave the SoC band within `lease_s` sim seconds is
    /// replaced by idle and flagged.
    pub fn apply_commands(&mut self, raw: &[(u8, i32)], lease_s: f64) -> Result<Vec<CommandOutcome>, PlantError> {
        let mut resolved = Vec::with_capacity(raw.len());
        for &(bus, value) in raw {
            let slot = self.model.slot_of(bus).ok_or(PlantError::UnknownBus(bus))?;
            let bess = self.model.params.slots[slot].bess.ok_or(PlantError::NoBattery(bus))?;
            if !(-1..=1).contains(&value) {
                return Err(PlantError::InvalidCommand { bus, value });
            }
            resolved.push((slot, bess, value));
        }
        let mut outcomes = Vec::with_capacity(resolved.len());
        for (slot, bess, value) in resolved {
            let bus_id = self.model.params.slots[slot].bus_id;
            let e = self.state.y[en(slot)];
            let e_next = e - f64::from(value) * bess.eta * bess.p_dispatch * lease_s / 3600.0;
            let margin = 1e-6 * bess.capacity;
            let feasible = value == 0 || (e_next >= bess.e_min + margin && e_next <= bess.e_max - margin);
            let d = if feasible { value } else { 0 };
            self.command.bess_setpoint[slot] = f64::from(d) * bess.p_dispatch;
            self.saturated[slot] = !feasible;
            outcomes.push(CommandOutcome { bus_id, requested: value, applied: d, setpoint_w: self.command.bess_setpoint[slot] });
        }
        Ok(outcomes)
    }

    /// Active dispatch command of a battery slot, recovered from its setpoint.
    pub fn active_dispatch(&self, slot: usize) -> i32 {
        match self.model.params.slots[slot].bess {
            Some(b) if b.p_dispatch > 0.0 => (self.command.bess_setpoint[slot] / b.p_dispatch).round() as i32,
            _ => 0,
        }
    }

    pub fn set_breaker(&mut self, bus: u8, closed: bool) -> Result<(), PlantError> {
        let slot = self.model.slot_of(bus).ok_or(PlantError::UnknownBus(bus))?;
        self.command.breaker_closed[slot] = closed;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
