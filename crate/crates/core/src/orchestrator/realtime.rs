//! Real-time mode: plant, proxy and EMS as separate processes.
//!
//! Each component is a `dcgrid` subcommand. It prints `ready [addr]` on
//! stdout once its sockets are bound, starts its clock on a `go` line from
//! stdin, prints `heartbeat <t_sim>` about once per wall second and `done`
//! when finished. Closing its stdin stops it early. The plant and EMS scale
//! sim time by `time_scale`; the proxy delays messages in wall time.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, RunMetrics, TraceSet};
use super::trace::{PlanLogBuilder, PlantTraceBuilder, TraceTable, DELAYS, PLANT_TRACE, PLAN_LOG, SCENARIO};
use super::{create_dir, label_metrics, OrchestratorError};
use crate::ems::{Measurement, RecedingHorizon};
use crate::modbus::{
    poll_master, reg, reg_decode, reg_encode, serve_slave, MasterConfig, MasterEvent, RegKind, RegisterImage,
    RegisterView, SlaveConfig,
};
use crate::model::{ProfileKind, ScenarioConfig};
use crate::netem::{forward_with_delay, read_records_csv, TrafficClassModel};
use crate::plant::{Plant, PlantRunner};

pub const EMS_STATS: &str = "ems_stats.toml";
const READY_TIMEOUT: Duration = Duration::from_secs(20);
const SILENCE_LIMIT: Duration = Duration::from_secs(10);

/// Instructions a component receives on stdin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Go,
    Stop,
}

/// Reads control lines from stdin on a background thread. End of input is
/// reported as [`Control::Stop`].
pub fn stdin_control() -> Receiver<Control> {
    let (tx, rx) = channel();
    std::thread::spawn(move || {
        for line in std::io::stdin().lock().lines() {
            match line {
                Ok(l) if l.trim() == "go" => {
                    let _ = tx.send(Control::Go);
                }
                Ok(l) if l.trim() == "stop" => break,
                Ok(_) => {}
                Err(_) => break,
            }
        }
        let _ = tx.send(Control::Stop);
    });
    rx
}

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

/// Blocks until `go`; false if the supervisor went away first.
fn wait_for_go(control: &Receiver<Control>) -> bool {
    matches!(control.recv(), Ok(Control::Go))
}

fn stopped(control: &Receiver<Control>) -> bool {
    matches!(control.try_recv(), Ok(Control::Stop) | Err(std::sync::mpsc::TryRecvError::Disconnected))
}

/// Plant process: steps the model against the scaled wall clock, serves
/// its registers over Modbus-TCP and writes the plant trace.
pub fn plant_component(
    config: &ScenarioConfig,
    listen: &str,
    out_dir: &Path,
    control: Receiver<Control>,
) -> Result<(), OrchestratorError> {
    create_dir(out_dir)?;
    let mut runner = PlantRunner::new(Plant::new(config)?, config.reopt_period * 60.0);
    let active = |runner: &PlantRunner| -> Vec<(u8, i32)> {
        let plant = runner.plant();
        let model = plant.model();
        (0..model.slots()).filter(|&k| model.has_battery(k)).map(|k| (model.bus_ids()[k], plant.active_dispatch(k))).collect()
    };
    let view = RegisterView::new(RegisterImage::from_snapshot(&runner.snapshot(), &[]));
    let batteries = config.spec.batteries().map(|(b, _)| b).collect();
    let (tx, rx) = channel();
    let slave = serve_slave(view.clone(), SlaveConfig { battery_units: batteries }, listen, tx)
        .map_err(|e| OrchestratorError::io(Path::new(listen), e))?;
    say(&format!("ready {}", slave.local_addr()));
    if !wait_for_go(&control) {
        return Ok(());
    }
    let c_grid = config
        .profile(ProfileKind::PriceGrid, None)
        .ok_or_else(|| OrchestratorError::Config("scenario has no grid price profile".into()))?
        .table();
    let mut trace = PlantTraceBuilder::new(&config.spec, c_grid, config.profile(ProfileKind::PriceBess, None).map(|p| p.table()));
    let dt = config.sim.dt_sim_s;
    let duration = config.sim.duration_s;
    let steps_at = |t: f64| (t / dt).round() as u64;
    let epoch = Instant::now();
    let mut next_log = 0u64;
    let mut last_beat = epoch;
    loop {
        if stopped(&control) {
            log::warn!("plant stopped early at t_sim = {}", runner.plant().t_sim());
            break;
        }
        let target = (epoch.elapsed().as_secs_f64() * config.time_scale).min(duration);
        runner.drain(&rx);
        loop {
            let t_log = next_log as f64 * config.sim.log_period_s;
            if t_log > target || t_log >= duration {
                break;
            }
            runner.advance_to_step(steps_at(t_log))?;
            let commands = active(&runner);
            trace.record(&runner.snapshot(), &commands);
            next_log += 1;
        }
        runner.advance_to_step((target / dt).floor() as u64)?;
        view.publish(RegisterImage::from_snapshot(&runner.snapshot(), &active(&runner)));
        if last_beat.elapsed() >= Duration::from_secs(1) {
            say(&format!("heartbeat {}", runner.plant().t_sim()));
            last_beat = Instant::now();
        }
        if target >= duration {
            break;
        }
        std::thread::sleep(Duration::from_millis(1));
    }
    slave.shutdown();
    trace.finish().write_csv(&out_dir.join(PLANT_TRACE))?;
    say("done");
    Ok(())
}

/// Proxy process: forwards to `target` with class delays until stdin
/// closes, then writes the delay records.
pub fn proxy_component(
    model: TrafficClassModel,
    listen: &str,
    target: SocketAddr,
    min_bytes: usize,
    records_path: &Path,
    control: Receiver<Control>,
) -> Result<(), OrchestratorError> {
    let proxy = forward_with_delay(listen, target, model, min_bytes)?;
    say(&format!("ready {}", proxy.local_addr()));
    let mut last_beat = Instant::now();
    loop {
        match control.recv_timeout(Duration::from_millis(200)) {
            Ok(Control::Stop) | Err(RecvTimeoutError::Disconnected) => break,
            _ => {}
        }
        if last_beat.elapsed() >= Duration::from_secs(1) {
            say(&format!("heartbeat {}", proxy.records().len()));
            last_beat = Instant::now();
        }
    }
    proxy.write_csv(records_path)?;
    proxy.shutdown();
    say("done");
    Ok(())
}

/// Counters the EMS process leaves for the supervisor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmsStats {
    pub timeouts: u64,
    pub cycles_skipped: u64,
    pub exceptions: u64,
}

fn tally(events: Vec<MasterEvent>, stats: &mut EmsStats) {
    for e in events {
        match e {
            MasterEvent::Timeout { .. } => stats.timeouts += 1,
            MasterEvent::CycleSkipped => stats.cycles_skipped += 1,
            MasterEvent::Exception { .. } => stats.exceptions += 1,
            _ => {}
        }
    }
}

/// EMS process: polls `target` and re-optimizes every reopt period of
/// scaled time, writing commands back over Modbus.
pub fn ems_component(
    config: &ScenarioConfig,
    target: SocketAddr,
    out_dir: &Path,
    control: Receiver<Control>,
) -> Result<(), OrchestratorError> {
    create_dir(out_dir)?;
    let mut ems = RecedingHorizon::new(config)?;
    let batteries = ems.battery_buses();
    let mut plan_log = PlanLogBuilder::new(batteries.clone());
    let mut master = MasterConfig::new(config.spec.buses.iter().map(|b| b.bus_id).collect());
    master.timeout_ms = config.network.timeout_ms;
    master.retries = config.network.retries;
    say("ready");
    if !wait_for_go(&control) {
        return Ok(());
    }
    let epoch = Instant::now();
    let poller = poll_master(target, master, config.poll_period, epoch);
    let mut stats = EmsStats::default();
    let reopt_s = config.reopt_period * 60.0;
    let mut k = 1u64;
    let mut last_beat = epoch;
    let mut early = false;
    while (k as f64) * reopt_s < config.sim.duration_s {
        let t_sim = k as f64 * reopt_s;
        let due = Duration::from_secs_f64(t_sim / config.time_scale);
        while epoch.elapsed() < due {
            if stopped(&control) {
                early = true;
                break;
            }
            if last_beat.elapsed() >= Duration::from_secs(1) {
                say(&format!("heartbeat {}", epoch.elapsed().as_secs_f64() * config.time_scale));
                last_beat = Instant::now();
            }
            std::thread::sleep((due - epoch.elapsed().min(due)).min(Duration::from_millis(20)));
        }
        if early {
            break;
        }
        let now_ms = poller.now_ms();
        let latest = poller.latest();
        let measurements: Vec<Measurement> = batteries
            .iter()
            .filter_map(|b| {
                let r = latest.get(b)?;
                Some(Measurement { bus_id: *b, soc: reg_decode(r.regs[reg::SOC as usize], RegKind::Soc), age_ms: now_ms - r.sent_ms })
            })
            .collect();
        let tick = ems.tick(t_sim, &measurements)?;
        for &(bus, d) in &tick.commands {
            poller.write(bus, reg::COMMAND, vec![reg_encode(f64::from(d), RegKind::Command).0]);
        }
        plan_log.record(t_sim, &tick);
        tally(poller.take_events(), &mut stats);
        k += 1;
    }
    if !early {
        let end = Duration::from_secs_f64(config.sim.duration_s / config.time_scale);
        while epoch.elapsed() < end && !stopped(&control) {
            std::thread::sleep(Duration::from_millis(20));
        }
    }
    tally(poller.take_events(), &mut stats);
    poller.stop();
    plan_log.finish().write_csv(&out_dir.join(PLAN_LOG))?;
    let text = toml::to_string(&stats).map_err(|e| OrchestratorError::Trace(e.to_string()))?;
    std::fs::write(out_dir.join(EMS_STATS), text).map_err(|e| OrchestratorError::io(&out_dir.join(EMS_STATS), e))?;
    say("done");
    Ok(())
}

#[derive(Debug)]
enum Line {
    Text(String),
    Closed,
}

struct Supervised {
    name: &'static str,
    child: Child,
    stdin: Option<ChildStdin>,
    log_path: PathBuf,
    done: bool,
    last_seen: Instant,
}

/// Children of one run; whatever is still running when this is dropped is
/// killed.
struct Fleet {
    members: Vec<Supervised>,
    lines: Receiver<(usize, Line)>,
    tx: Sender<(usize, Line)>,
}

impl Fleet {
    fn new() -> Self {
        let (tx, lines) = channel();
        Self { members: Vec::new(), lines, tx }
    }

    fn spawn(&mut self, name: &'static str, exe: &Path, args: &[String], out_dir: &Path) -> Result<usize, OrchestratorError> {
        let log_path = out_dir.join(format!("{name}.log"));
        let log = File::create(&log_path).map_err(|e| OrchestratorError::io(&log_path, e))?;
        let mut child = Command::new(exe)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::from(log))
            .spawn()
            .map_err(|e| OrchestratorError::Component { component: name.into(), detail: format!("spawn {}: {e}", exe.display()) })?;
        let index = self.members.len();
        let stdout = child.stdout.take().expect("piped");
        let tx = self.tx.clone();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send((index, Line::Text(line))).is_err() {
                    return;
                }
            }
            let _ = tx.send((index, Line::Closed));
        });
        let stdin = child.stdin.take();
        self.members.push(Supervised { name, child, stdin, log_path, done: false, last_seen: Instant::now() });
        Ok(index)
    }

    fn failure(&mut self, index: usize, what: &str) -> OrchestratorError {
        let m = &mut self.members[index];
        let status = m.child.try_wait().ok().flatten().map_or("still running".to_string(), |s| s.to_string());
        let log = std::fs::read_to_string(&m.log_path).unwrap_or_default();
        let excerpt: Vec<&str> = log.lines().rev().take(20).collect::<Vec<_>>().into_iter().rev().collect();
        OrchestratorError::Component {
            component: m.name.into(),
            detail: format!("{what} ({status}); log tail:\n{}", excerpt.join("\n")),
        }
    }

    /// Waits for `ready` from `index` and returns whatever followed it.
    fn await_ready(&mut self, index: usize) -> Result<String, OrchestratorError> {
        let deadline = Instant::now() + READY_TIMEOUT;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(left) {
                Ok((i, Line::Text(t))) if i == index => {
                    if let Some(rest) = t.strip_prefix("ready") {
                        return Ok(rest.trim().to_string());
                    }
                }
                Ok((i, Line::Closed)) if i == index => return Err(self.failure(index, "exited before ready")),
                Ok(_) => {}
                Err(_) => return Err(self.failure(index, "no ready line")),
            }
        }
    }

    fn send(&mut self, index: usize, line: &str) {
        if let Some(stdin) = self.members[index].stdin.as_mut() {
            let _ = writeln!(stdin, "{line}");
            let _ = stdin.flush();
        }
    }

    /// Watches heartbeats until every member in `until_done` reports done.
    fn supervise(&mut self, until_done: &[usize]) -> Result<(), OrchestratorError> {
        while until_done.iter().any(|&i| !self.members[i].done) {
            match self.lines.recv_timeout(Duration::from_millis(500)) {
                Ok((i, Line::Text(t))) => {
                    self.members[i].last_seen = Instant::now();
                    if t == "done" {
                        self.members[i].done = true;
                    }
                }
                Ok((i, Line::Closed)) => {
                    if !self.members[i].done {
                        return Err(self.failure(i, "exited unexpectedly"));
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => unreachable!("fleet holds a sender"),
            }
            if let Some(i) = (0..self.members.len()).find(|&i| !self.members[i].done && self.members[i].last_seen.elapsed() > SILENCE_LIMIT) {
                return Err(self.failure(i, "no heartbeat"));
            }
        }
        Ok(())
    }

    /// Closes stdin of `index` and waits for it to finish.
    fn stop(&mut self, index: usize) -> Result<(), OrchestratorError> {
        self.members[index].stdin = None;
        self.supervise(&[index])?;
        let status = self.members[index].child.wait().map_err(|e| OrchestratorError::Config(e.to_string()))?;
        if !status.success() {
            return Err(self.failure(index, "nonzero exit"));
        }
        Ok(())
    }
}

impl Drop for Fleet {
    fn drop(&mut self) {
        for m in &mut self.members {
            if !matches!(m.child.try_wait(), Ok(Some(_))) {
                let _ = m.child.kill();
            }
            let _ = m.child.wait();
        }
    }
}

/// Runs a scenario as three child processes of `exe` and computes its
/// metrics from the files they leave in `out_dir`.
pub fn supervise(config: &ScenarioConfig, out_dir: &Path, exe: &Path) -> Result<RunMetrics, OrchestratorError> {
    create_dir(out_dir)?;
    let scenario = out_dir.join(SCENARIO);
    config.save(&scenario)?;
    let path = |p: &Path| p.display().to_string();
    let started = Instant::now();
    let mut fleet = Fleet::new();

    let plant = fleet.spawn(
        "plant",
        exe,
        &["plant".into(), path(&scenario), "--listen".into(), "127.0.0.1:0".into(), "--out".into(), path(out_dir)],
        out_dir,
    )?;
    let plant_addr = fleet.await_ready(plant)?;
    let proxy = fleet.spawn(
        "proxy",
        exe,
        &[
            "proxy".into(),
            "--scenario".into(),
            path(&scenario),
            "--listen".into(),
            "127.0.0.1:0".into(),
            "--target".into(),
            plant_addr,
            "--records".into(),
            path(&out_dir.join(DELAYS)),
        ],
        out_dir,
    )?;
    let proxy_addr = fleet.await_ready(proxy)?;
    let ems = fleet.spawn(
        "ems",
        exe,
        &["ems".into(), path(&scenario), "--target".into(), proxy_addr, "--out".into(), path(out_dir)],
        out_dir,
    )?;
    fleet.await_ready(ems)?;
    fleet.send(plant, "go");
    fleet.send(ems, "go");
    fleet.supervise(&[plant, ems])?;
    fleet.stop(proxy)?;
    for i in [plant, ems] {
        let status = fleet.members[i].child.wait().map_err(|e| OrchestratorError::Config(e.to_string()))?;
        if !status.success() {
            return Err(fleet.failure(i, "nonzero exit"));
        }
    }
    drop(fleet);

    let traces = TraceSet {
        plant: TraceTable::read_csv(&out_dir.join(PLANT_TRACE))?,
        plan: Some(TraceTable::read_csv(&out_dir.join(PLAN_LOG))?),
        delays: read_records_csv(&out_dir.join(DELAYS))?,
        duration_s: config.sim.duration_s,
    };
    let mut metrics = compute_metrics(&traces, &config.spec)?;
    let stats_path = out_dir.join(EMS_STATS);
    let stats: EmsStats = std::fs::read_to_string(&stats_path)
        .ok()
        .and_then(|t| toml::from_str(&t).ok())
        .unwrap_or_default();
    metrics.timeouts = stats.timeouts;
    metrics.cycles_skipped = stats.cycles_skipped;
    metrics.wall_time_s = started.elapsed().as_secs_f64();
    label_metrics(&mut metrics, config, "realtime");
    Ok(metrics)
}
