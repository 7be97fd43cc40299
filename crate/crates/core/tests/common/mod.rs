#![allow(dead_code)]

use std::io::Write;
use std::net::{Shutdown, TcpStream};
use std::sync::mpsc::{channel, RecvTimeoutError};
use std::time::{Duration, Instant};

use dcgrid::ems::{BatteryState, HorizonProblem};
use dcgrid::modbus::{
    read_adu, reg, serve_slave, MasterConfig, MasterEvent, MasterSession, RegisterImage, RegisterView, SlaveConfig,
};
use dcgrid::model::{BatterySpec, ProfileKind, ScenarioConfig, TimeSeriesProfile, TrafficClass};
use dcgrid::netem::{forward_with_delay, TrafficClassModel};
use dcgrid::plant::{solve_equilibrium, EquilibriumInputs, MeasurementSnapshot, Plant, PlantModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random dispatch instance. Prices come from a small set often enough to
/// produce exact ties.
pub fn random_problem(seed: u64, max_horizon: usize, max_batteries: usize) -> HorizonProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_len = rng.random_range(2..=max_horizon);
    let n = rng.random_range(1..=max_batteries);
    let tied = rng.random_bool(0.4);
    let price = |rng: &mut ChaCha8Rng| {
        if tied {
            [0.1, 0.2, 0.3][rng.random_range(0..3)]
        } else {
            rng.random_range(0.02..0.4)
        }
    };
    let c_grid: Vec<f64> = (0..t_len).map(|_| price(&mut rng)).collect();
    let c_bess: Vec<f64> = if rng.random_bool(0.5) { vec![0.0; t_len] } else { (0..t_len).map(|_| rng.random_range(0.0..0.05)).collect() };
    let batteries: Vec<BatteryState> = (0..n)
        .map(|i| {
            let capacity = rng.random_range(200.0..2000.0);
            let spec = BatterySpec {
                p_dispatch: capacity * rng.random_range(0.1..0.6),
                eta: rng.random_range(0.85..=1.0),
                ..BatterySpec::with_capacity(capacity)
            };
            let e0 = rng.random_range(spec.e_min()..=spec.e_max());
            BatteryState { bus_id: 2 + i as u8, spec, e0 }
        })
        .collect();
    HorizonProblem {
        dt: 1.0,
        load: (0..t_len).map(|_| (0..n).map(|_| rng.random_range(100.0..1000.0)).collect()).collect(),
        pv: (0..t_len).map(|_| (0..n).map(|_| rng.random_range(0.0..1500.0)).collect()).collect(),
        c_grid,
        c_bess,
        batteries,
    }
}

/// The bundled scenario with constant per-bus PV and load profiles.
pub fn constant_config(pv: [f64; 4], load: [f64; 4], dt: f64) -> ScenarioConfig {
    let mut config = ScenarioConfig::table1(1);
    config.sim.dt_sim_s = dt;
    config.profiles.retain(|p| !matches!(p.kind, ProfileKind::Pv | ProfileKind::Load));
    for (k, bus) in config.spec.buses.clone().iter().enumerate() {
        if bus.pv_rating > 0.0 {
            config.profiles.push(TimeSeriesProfile::constant(ProfileKind::Pv, Some(bus.bus_id), pv[k]));
        }
        config.profiles.push(TimeSeriesProfile::constant(ProfileKind::Load, Some(bus.bus_id), load[k]));
    }
    config
}

/// Largest deviation of `got` from `want` over every snapshot field, each
/// relative to 1 % of the field's magnitude with a floor of 1 % of the
/// field scale (nominal voltage, total load, capacity).
pub fn worst_field_error(got: &MeasurementSnapshot, want: &MeasurementSnapshot, v_nom: f64) -> (f64, String) {
    let p_scale = want.total_load().max(100.0);
    let mut worst = (0.0, String::new());
    let mut check = |name: String, g: f64, w: f64, scale: f64| {
        let tol = 0.01 * w.abs().max(scale);
        let e = (g - w).abs() / tol;
        if !(e <= worst.0) {
            worst = (e, format!("{name}: got {g}, want {w}"));
        }
    };
    check("v_dc".into(), got.v_dc, want.v_dc, v_nom);
    check("p_pcc".into(), got.p_pcc, want.p_pcc, p_scale);
    for (g, w) in got.buses.iter().zip(&want.buses) {
        let b = w.bus_id;
        check(format!("v_bus_{b}"), g.v_bus, w.v_bus, v_nom);
        check(format!("p_pv_{b}"), g.p_pv, w.p_pv, p_scale);
        check(format!("p_load_{b}"), g.p_load, w.p_load, p_scale);
        check(format!("p_bess_{b}"), g.p_bess, w.p_bess, p_scale);
        if let (Some(gs), Some(ws)) = (g.soc, w.soc) {
            check(format!("soc_{b}"), gs, ws, 1.0);
        }
    }
    worst
}

/// One random constant operating point: the plant is run for `settle_s`
/// from its initial state and its snapshot compared with the equilibrium.
/// Returns `None` when the drawn point has no equilibrium (grid limit).
pub fn settle_case(seed: u64, dt: f64, settle_s: f64) -> Option<(f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = ScenarioConfig::table1(1);
    let mut pv = [0.0; 4];
    let mut load = [0.0; 4];
    for (k, b) in base.spec.buses.iter().enumerate() {
        pv[k] = if b.pv_rating > 0.0 { rng.random_range(0.0..=b.pv_rating) } else { 0.0 };
        load[k] = rng.random_range(b.load_min..=b.load_max * 3.0);
    }
    let mut config = constant_config(pv, load, dt);
    for s in &mut config.initial_soc {
        s.soc = rng.random_range(0.3..0.7);
    }
    let commands: Vec<(u8, i32)> = config.spec.batteries().map(|(b, _)| (b, rng.random_range(-1..=1))).collect();
    let mut plant = Plant::new(&config).ok()?;
    plant.apply_commands(&commands, 1.0).ok()?;
    let steps = (settle_s / dt).round() as u64;
    plant.advance_to_step(steps).ok()?;
    let snap = plant.snapshot();
    let model = PlantModel::new(&config).ok()?;
    let mut eq = EquilibriumInputs { pv, load, ..Default::default() };
    for k in 0..model.slots() {
        eq.bess[k] = plant.command().bess_setpoint[k];
        eq.e[k] = plant.state().energy(k);
    }
    let want = solve_equilibrium(&model, &eq).ok()?;
    Some(worst_field_error(&snap, &want, config.spec.v_nominal))
}

fn tag(unit: u16, version: u16, i: u16) -> u16 {
    unit.wrapping_mul(40503).wrapping_add(version.wrapping_mul(7919)).wrapping_add(i.wrapping_mul(131))
}

/// Register image whose unit rows carry `(unit, version)` in registers 0
/// and 1 and a checksum-like tag in the rest, so a reading that mixes two
/// images or belongs to another unit is detectable.
pub fn tagged_image(version: u16, units: &[u8]) -> RegisterImage {
    let units = units
        .iter()
        .map(|&u| {
            let mut r = [0u16; reg::COUNT as usize];
            r[0] = u16::from(u);
            r[1] = version;
            for i in 2..reg::MEASUREMENT_COUNT {
                r[i as usize] = tag(u16::from(u), version, i);
            }
            (u, r)
        })
        .collect();
    RegisterImage { t_sim: f64::from(version), units, saturations: 0 }
}

/// True iff `regs` is exactly the row of `unit` in one tagged image.
pub fn consistent(unit: u8, regs: &[u16]) -> bool {
    regs.len() == reg::MEASUREMENT_COUNT as usize
        && regs[0] == u16::from(unit)
        && (2..regs.len()).all(|i| regs[i] == tag(regs[0], regs[1], i as u16))
}

/// Outcome of polling a changing slave through a delaying proxy with a
/// timeout short enough to provoke retries and late answers.
#[derive(Debug, Default)]
pub struct ProxyPollReport {
    pub readings: usize,
    pub corrupted: usize,
    pub timeouts: usize,
    pub unmatched: usize,
}

pub fn poll_through_proxy(class: TrafficClass, congestion: f64, timeout_ms: f64, run_for: Duration, seed: u64) -> ProxyPollReport {
    let units = [2u8, 3, 4, 5];
    let view = RegisterView::new(tagged_image(0, &units));
    let (tx, _rx) = channel();
    let slave = serve_slave(view.clone(), SlaveConfig { battery_units: units.to_vec() }, "127.0.0.1:0", tx).unwrap();
    let model = TrafficClassModel::new(class, congestion, seed);
    let proxy = forward_with_delay("127.0.0.1:0", slave.local_addr(), model, 0).unwrap();
    let mut stream = TcpStream::connect(proxy.local_addr()).unwrap();
    stream.set_nodelay(true).unwrap();
    let mut reader = stream.try_clone().unwrap();
    let (adu_tx, adu_rx) = channel();
    let reader_thread = std::thread::spawn(move || {
        while let Ok(Some(adu)) = read_adu(&mut reader) {
            if adu_tx.send(adu).is_err() {
                break;
            }
        }
    });
    let mut config = MasterConfig::new(units.to_vec());
    config.timeout_ms = timeout_ms;
    config.retries = 1;
    let mut master = MasterSession::new(config);
    let epoch = Instant::now();
    let now = || epoch.elapsed().as_secs_f64() * 1e3;
    let mut report = ProxyPollReport::default();
    let mut version = 0u16;
    let mut next_publish = 0.0;
    while epoch.elapsed() < run_for {
        let t = now();
        if t >= next_publish {
            version = version.wrapping_add(1);
            view.publish(tagged_image(version, &units));
            next_publish = t + 0.5;
        }
        if master.idle() {
            master.start_cycle();
        }
        if let Some(bytes) = master.poll_transmit(t) {
            stream.write_all(&bytes).unwrap();
        }
        match adu_rx.recv_timeout(Duration::from_micros(200)) {
            Ok(adu) => master.handle_response(now(), &adu),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
        master.handle_timeout(now());
        for r in master.take_completed() {
            report.readings += 1;
            if !consistent(r.unit, &r.regs) {
                report.corrupted += 1;
            }
        }
        for e in master.take_events() {
            match e {
                MasterEvent::Timeout { .. } => report.timeouts += 1,
                MasterEvent::Unmatched { .. } => report.unmatched += 1,
                _ => {}
            }
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
    proxy.shutdown();
    slave.shutdown();
    let _ = reader_thread.join();
    report
}
