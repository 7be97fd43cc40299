//! C interface to the `dcgrid` co-simulation.
//!
//! Every function returns a [`DcgStatus`]; on failure a description of the
//! last error on the calling thread is available from
//! [`dcg_last_error_message`]. Scenarios and plants are opaque handles
//! created by `*_new`/`*_load` functions and released with the matching
//! `*_free`. Panics never cross the boundary; they surface as
//! [`DcgStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dcgrid::ems::{dp_dispatch, BatteryState, HorizonProblem};
use dcgrid::model::{BatterySpec, ScenarioConfig, TrafficClass};
use dcgrid::modbus::{decode_frame, encode_frame, ModbusFrame, Pdu};
use dcgrid::orchestrator::run_virtual;
use dcgrid::plant::Plant;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidScenario = 3,
    Io = 4,
    Simulation = 5,
    Optimization = 6,
    BufferTooSmall = 7,
    Protocol = 8,
    Panic = 9,
}

/// Opaque scenario configuration.
pub struct DcgScenario {
    config: ScenarioConfig,
}

/// Opaque plant instance stepping on its own clock.
pub struct DcgPlant {
    plant: Plant,
}

/// Summary of one virtual-time run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DcgRunSummary {
    pub total_cost: f64,
    pub samples: u64,
    pub soc_violations: u64,
    pub voltage_violations: u64,
    pub balance_violations: u64,
    pub ticks: u64,
    pub stale_ticks: u64,
    pub v_dc_min: f64,
    pub v_dc_max: f64,
    pub pcc_import_kwh: f64,
    pub pcc_export_kwh: f64,
    /// Mean one-way message delay, ms; NaN when no message was delayed.
    pub delay_mean_ms: f64,
}

/// Measurement of one prosumer bus. `soc` is NaN without a battery.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DcgBusReading {
    pub bus_id: u8,
    pub v_bus: f64,
    pub p_pv: f64,
    pub p_load: f64,
    pub p_bess: f64,
    pub soc: f64,
}

/// Battery of a dispatch problem. `e0` is the stored energy in Wh.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DcgBattery {
    pub capacity_wh: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub eta: f64,
    pub p_dispatch_w: f64,
    pub e0_wh: f64,
}

/// Decoded Modbus-TCP header and function code.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DcgFrameHeader {
    pub transaction_id: u16,
    pub unit_id: u8,
    pub function: u8,
    /// Bytes consumed from the input buffer.
    pub frame_len: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: DcgStatus, message: impl ToString) -> DcgStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.to_string());
    status
}

fn guard(f: impl FnOnce() -> DcgStatus) -> DcgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(DcgStatus::Panic, msg)
        }
    }
}

unsafe fn c_str<'a>(s: *const c_char) -> Result<&'a str, DcgStatus> {
    if s.is_null() {
        return Err(fail(DcgStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(s).to_str().map_err(|e| fail(DcgStatus::InvalidArgument, e))
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(DcgStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dcg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dcg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            std::ptr::copy_nonoverlapping(e.as_ptr(), buf.cast(), n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Creates the bundled four-bus scenario.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn dcg_scenario_default(seed: u64, out: *mut *mut DcgScenario) -> DcgStatus {
    non_null!(out);
    guard(|| {
        *out = Box::into_raw(Box::new(DcgScenario { config: ScenarioConfig::table1(seed) }));
        DcgStatus::Ok
    })
}

/// Loads a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcg_scenario_load(path: *const c_char, out: *mut *mut DcgScenario) -> DcgStatus {
    non_null!(out);
    guard(|| {
        let path = match c_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ScenarioConfig::load(Path::new(path)) {
            Ok(config) => {
                *out = Box::into_raw(Box::new(DcgScenario { config }));
                DcgStatus::Ok
            }
            Err(e) => fail(DcgStatus::InvalidScenario, e),
        }
    })
}

/// Writes the scenario to a file.
///
/// # Safety
/// `scenario` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dcg_scenario_save(scenario: *const DcgScenario, path: *const c_char) -> DcgStatus {
    non_null!(scenario);
    guard(|| {
        let path = match c_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match (*scenario).config.save(Path::new(path)) {
            Ok(()) => DcgStatus::Ok,
            Err(e) => fail(DcgStatus::Io, e),
        }
    })
}

/// Sets the traffic class ("DS0", "DS1", "DS3", "E1", "E3") and congestion.
///
/// # Safety
/// `scenario` must be a live handle and `class` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dcg_scenario_set_network(
    scenario: *mut DcgScenario,
    class: *const c_char,
    congestion: f64,
) -> DcgStatus {
    non_null!(scenario);
    guard(|| {
        let class: TrafficClass = match c_str(class).map(str::parse) {
            Ok(Ok(c)) => c,
            Ok(Err(e)) => return fail(DcgStatus::InvalidArgument, e),
            Err(s) => return s,
        };
        if !(0.0..1.0).contains(&congestion) {
            return fail(DcgStatus::InvalidArgument, format!("congestion {congestion} must be in [0, 1)"));
        }
        let c = &mut (*scenario).config;
        c.traffic_class = class;
        c.congestion = congestion;
        DcgStatus::Ok
    })
}

/// Sets the simulated duration in seconds.
///
/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcg_scenario_set_duration(scenario: *mut DcgScenario, seconds: f64) -> DcgStatus {
    non_null!(scenario);
    if !(seconds > 0.0 && seconds.is_finite()) {
        return fail(DcgStatus::InvalidArgument, format!("duration {seconds} must be positive"));
    }
    (*scenario).config.sim.duration_s = seconds;
    DcgStatus::Ok
}

/// # Safety
/// `scenario` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dcg_scenario_free(scenario: *mut DcgScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the scenario on the deterministic virtual clock.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcg_run_virtual(scenario: *const DcgScenario, out: *mut DcgRunSummary) -> DcgStatus {
    non_null!(scenario, out);
    guard(|| {
        let config = &(*scenario).config;
        let problems = dcgrid::model::validate_scenario(config);
        if !problems.is_empty() {
            let text: Vec<String> = problems.iter().map(ToString::to_string).collect();
            return fail(DcgStatus::InvalidScenario, text.join("; "));
        }
        match run_virtual(config) {
            Ok(run) => {
                let m = run.metrics;
                *out = DcgRunSummary {
                    total_cost: m.total_cost,
                    samples: m.samples as u64,
                    soc_violations: m.soc_violations,
                    voltage_violations: m.voltage_violations,
                    balance_violations: m.balance_violations,
                    ticks: m.ticks,
                    stale_ticks: m.stale_ticks,
                    v_dc_min: m.v_dc_min,
                    v_dc_max: m.v_dc_max,
                    pcc_import_kwh: m.pcc_energy_import_kwh,
                    pcc_export_kwh: m.pcc_energy_export_kwh,
                    delay_mean_ms: m.delay.map_or(f64::NAN, |d| d.mean_ms),
                };
                DcgStatus::Ok
            }
            Err(e) => fail(DcgStatus::Simulation, e),
        }
    })
}

/// Builds a plant at its initial state from a scenario.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcg_plant_new(scenario: *const DcgScenario, out: *mut *mut DcgPlant) -> DcgStatus {
    non_null!(scenario, out);
    guard(|| match Plant::new(&(*scenario).config) {
        Ok(plant) => {
            *out = Box::into_raw(Box::new(DcgPlant { plant }));
            DcgStatus::Ok
        }
        Err(e) => fail(DcgStatus::InvalidScenario, e),
    })
}

/// # Safety
/// `plant` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dcg_plant_free(plant: *mut DcgPlant) {
    if !plant.is_null() {
        drop(Box::from_raw(plant));
    }
}

/// Applies a dispatch command (-1 charge, 0 idle, +1 discharge) to the
/// battery on `bus_id`. A command that would leave the SoC band within one
/// hour is replaced by idle; `applied` receives the command in force.
///
/// # Safety
/// `plant` must be a live handle; `applied` may be null.
#[no_mangle]
pub unsafe extern "C" fn dcg_plant_dispatch(plant: *mut DcgPlant, bus_id: u8, command: i32, applied: *mut i32) -> DcgStatus {
    non_null!(plant);
    guard(|| match (*plant).plant.apply_commands(&[(bus_id, command)], 3600.0) {
        Ok(outcomes) => {
            if !applied.is_null() {
                *applied = outcomes[0].applied;
            }
            DcgStatus::Ok
        }
        Err(e) => fail(DcgStatus::InvalidArgument, e),
    })
}

/// Advances the plant by `seconds` of simulated time.
///
/// # Safety
/// `plant` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcg_plant_advance(plant: *mut DcgPlant, seconds: f64) -> DcgStatus {
    non_null!(plant);
    if !(seconds >= 0.0 && seconds.is_finite()) {
        return fail(DcgStatus::InvalidArgument, format!("cannot advance by {seconds} s"));
    }
    guard(|| {
        let p = &mut (*plant).plant;
        let dt = p.state().dt;
        let target = p.state().steps + (seconds / dt).round() as u64;
        match p.advance_to_step(target) {
            Ok(()) => DcgStatus::Ok,
            Err(e) => fail(DcgStatus::Simulation, e),
        }
    })
}

/// Reads the plant: simulated time, bus voltage, grid exchange (import
/// positive) and up to `capacity` bus readings. `count` receives the number
/// of buses; `BufferTooSmall` is returned if it exceeds `capacity`.
///
/// # Safety
/// `plant` must be a live handle; the scalar outputs valid pointers;
/// `buses` must point to `capacity` writable readings (or be null with
/// `capacity` 0).
#[no_mangle]
pub unsafe extern "C" fn dcg_plant_measure(
    plant: *const DcgPlant,
    t_sim: *mut f64,
    v_dc: *mut f64,
    p_pcc: *mut f64,
    buses: *mut DcgBusReading,
    capacity: usize,
    count: *mut usize,
) -> DcgStatus {
    non_null!(plant, t_sim, v_dc, p_pcc, count);
    guard(|| {
        let s = (*plant).plant.snapshot();
        *t_sim = s.t_sim;
        *v_dc = s.v_dc;
        *p_pcc = s.p_pcc;
        *count = s.buses.len();
        if s.buses.len() > capacity || (buses.is_null() && !s.buses.is_empty()) {
            return fail(DcgStatus::BufferTooSmall, format!("{} buses, room for {capacity}", s.buses.len()));
        }
        for (i, b) in s.buses.iter().enumerate() {
            *buses.add(i) = DcgBusReading {
                bus_id: b.bus_id,
                v_bus: b.v_bus,
                p_pv: b.p_pv,
                p_load: b.p_load,
                p_bess: b.p_bess,
                soc: b.soc.unwrap_or(f64::NAN),
            };
        }
        DcgStatus::Ok
    })
}

/// Optimal hourly dispatch of `n` batteries over `horizon` hours.
///
/// `c_grid`, `c_bess` and `net_load` (total load minus PV, W) hold one value
/// per hour. `plan` receives `horizon * n` commands, hour-major, and `cost`
/// the objective value.
///
/// # Safety
/// Array arguments must point to the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn dcg_dispatch(
    batteries: *const DcgBattery,
    n: usize,
    c_grid: *const f64,
    c_bess: *const f64,
    net_load: *const f64,
    horizon: usize,
    plan: *mut i32,
    cost: *mut f64,
) -> DcgStatus {
    non_null!(c_grid, c_bess, net_load, cost);
    if n > 0 && (batteries.is_null() || plan.is_null()) {
        return fail(DcgStatus::NullPointer, "batteries or plan is null");
    }
    guard(|| {
        let slice = |p: *const f64| std::slice::from_raw_parts(p, horizon).to_vec();
        let bats = if n == 0 { &[][..] } else { std::slice::from_raw_parts(batteries, n) };
        let problem = HorizonProblem {
            dt: 1.0,
            load: slice(net_load).into_iter().map(|x| vec![x]).collect(),
            pv: vec![vec![0.0]; horizon],
            c_grid: slice(c_grid),
            c_bess: slice(c_bess),
            batteries: bats
                .iter()
                .enumerate()
                .map(|(i, b)| BatteryState {
                    bus_id: i as u8,
                    spec: BatterySpec {
                        soc_min: b.soc_min,
                        soc_max: b.soc_max,
                        eta: b.eta,
                        p_dispatch: b.p_dispatch_w,
                        ..BatterySpec::with_capacity(b.capacity_wh)
                    },
                    e0: b.e0_wh,
                })
                .collect(),
        };
        match dp_dispatch(&problem) {
            Ok(p) => {
                for (t, row) in p.d.iter().enumerate() {
                    for (i, &d) in row.iter().enumerate() {
                        *plan.add(t * n + i) = d;
                    }
                }
                *cost = p.cost;
                DcgStatus::Ok
            }
            Err(e) => fail(DcgStatus::Optimization, e),
        }
    })
}

/// Encodes a read-holding-registers (0x03) request into `buf`.
///
/// # Safety
/// `buf` must point to `capacity` writable bytes and `written` be valid.
#[no_mangle]
pub unsafe extern "C" fn dcg_modbus_read_request(
    transaction_id: u16,
    unit_id: u8,
    address: u16,
    count: u16,
    buf: *mut u8,
    capacity: usize,
    written: *mut usize,
) -> DcgStatus {
    non_null!(buf, written);
    if !(1..=125).contains(&count) {
        return fail(DcgStatus::InvalidArgument, format!("register count {count} outside 1..=125"));
    }
    let bytes = encode_frame(&ModbusFrame::from_pdu(transaction_id, unit_id, &Pdu::ReadRequest { address, count }));
    *written = bytes.len();
    if bytes.len() > capacity {
        return fail(DcgStatus::BufferTooSmall, format!("frame needs {} bytes", bytes.len()));
    }
    std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
    DcgStatus::Ok
}

/// Decodes the header of the first Modbus-TCP frame in `buf`.
///
/// # Safety
/// `buf` must point to `len` readable bytes and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn dcg_modbus_decode(buf: *const u8, len: usize, out: *mut DcgFrameHeader) -> DcgStatus {
    non_null!(buf, out);
    guard(|| match decode_frame(std::slice::from_raw_parts(buf, len)) {
        Ok((f, used)) => {
            *out = DcgFrameHeader { transaction_id: f.transaction_id, unit_id: f.unit_id, function: f.function, frame_len: used };
            DcgStatus::Ok
        }
        Err(e) => fail(DcgStatus::Protocol, e),
    })
}
