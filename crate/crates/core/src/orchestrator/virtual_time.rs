//! Deterministic co-simulation on one virtual clock.
//!
//! The plant, the Modbus slave, both link directions and the EMS master all
//! live in this process and are driven by a single event queue keyed by
//! integer simulated nanoseconds. Polling, timeouts and network delays are
//! specified in wall milliseconds and mapped onto the sim clock through the
//! scenario's time scale, so a run at 600x sees exactly the message timing
//! a real-time run would, without any dependence on the host.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::metrics::{compute_metrics, RunMetrics, TraceSet};
use super::trace::{PlanLogBuilder, PlantTraceBuilder};
use super::OrchestratorError;
use crate::ems::{Measurement, RecedingHorizon};
use crate::modbus::{
    decode_frame, encode_frame, handle_request, reg, reg_decode, reg_encode, MasterConfig, MasterEvent,
    MasterSession, RegKind, RegisterImage, RegisterView, SlaveConfig,
};
use crate::model::{ProfileKind, ScenarioConfig};
use crate::netem::{DelayRecord, Direction, LinkQueue, TrafficClassModel};
use crate::plant::{Plant, PlantRunner};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Log,
    Poll,
    Reopt,
    ToSlave(Vec<u8>),
    ToMaster(Vec<u8>),
    Timeout,
}

/// Output of a virtual-time run.
#[derive(Debug, Clone)]
pub struct VirtualOutcome {
    pub metrics: RunMetrics,
    pub traces: TraceSet,
}

struct Coordinator<'a> {
    config: &'a ScenarioConfig,
    queue: BinaryHeap<Reverse<(u64, u64, Event)>>,
    seq: u64,
    now_ns: u64,
    dt_ns: u64,
    runner: PlantRunner,
    view: RegisterView,
    slave: SlaveConfig,
    master: MasterSession,
    links: [LinkQueue; 2],
    msg_index: [u64; 2],
    delays: Vec<DelayRecord>,
    ems: RecedingHorizon,
    plant_trace: PlantTraceBuilder,
    plan_log: PlanLogBuilder,
    timeouts: u64,
    cycles_skipped: u64,
}

fn seconds_to_ns(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

impl<'a> Coordinator<'a> {
    fn new(config: &'a ScenarioConfig) -> Result<Self, OrchestratorError> {
        let plant = Plant::new(config)?;
        let lease_s = config.reopt_period * 60.0;
        let runner = PlantRunner::new(plant, lease_s);
        let view = RegisterView::new(RegisterImage::from_snapshot(&runner.snapshot(), &[]));
        let ems = RecedingHorizon::new(config)?;
        let batteries = ems.battery_buses();
        let mut master_config = MasterConfig::new(config.spec.buses.iter().map(|b| b.bus_id).collect());
        master_config.timeout_ms = config.network.timeout_ms;
        master_config.retries = config.network.retries;
        let link = |dir: u64| LinkQueue::new(TrafficClassModel::from_scenario(config, config.rng_seed.wrapping_mul(2).wrapping_add(dir)));
        let table = |kind| config.profile(kind, None).map(|p| p.table());
        let c_grid = table(ProfileKind::PriceGrid)
            .ok_or_else(|| OrchestratorError::Config("scenario has no grid price profile".into()))?;
        Ok(Self {
            config,
            queue: BinaryHeap::new(),
            seq: 0,
            now_ns: 0,
            dt_ns: seconds_to_ns(config.sim.dt_sim_s),
            runner,
            view,
            slave: SlaveConfig { battery_units: batteries.clone() },
            master: MasterSession::new(master_config),
            links: [link(0)?, link(1)?],
            msg_index: [0; 2],
            delays: Vec::new(),
            plant_trace: PlantTraceBuilder::new(&config.spec, c_grid, table(ProfileKind::PriceBess)),
            plan_log: PlanLogBuilder::new(batteries),
            ems,
            timeouts: 0,
            cycles_skipped: 0,
        })
    }

    fn schedule(&mut self, at_ns: u64, event: Event) {
        self.queue.push(Reverse((at_ns, self.seq, event)));
        self.seq += 1;
    }

    fn wall_ms(&self, sim_ns: u64) -> f64 {
        sim_ns as f64 / 1e6 / self.config.time_scale
    }

    fn sim_ns(&self, wall_ms: f64) -> u64 {
        (wall_ms * 1e6 * self.config.time_scale).round() as u64
    }

    fn advance_plant(&mut self) -> Result<(), OrchestratorError> {
        self.runner.advance_to_step(self.now_ns / self.dt_ns)?;
        Ok(())
    }

    fn active_commands(&self) -> Vec<(u8, i32)> {
        let plant = self.runner.plant();
        let model = plant.model();
        (0..model.slots()).filter(|&k| model.has_battery(k)).map(|k| (model.bus_ids()[k], plant.active_dispatch(k))).collect()
    }

    /// Hands the master's next request, if any, to the request link.
    fn pump(&mut self) {
        let now_ms = self.wall_ms(self.now_ns);
        if let Some(bytes) = self.master.poll_transmit(now_ms) {
            let release_ms = self.transmit(Direction::Request, now_ms, &bytes);
            self.schedule(self.sim_ns(release_ms), Event::ToSlave(bytes));
            if let Some(deadline) = self.master.next_deadline() {
                self.schedule(self.sim_ns(deadline), Event::Timeout);
            }
        }
    }

    fn transmit(&mut self, direction: Direction, arrival_ms: f64, bytes: &[u8]) -> f64 {
        let i = direction as usize;
        let size = bytes.len().max(self.config.network.min_message_bytes as usize);
        let release_ms = self.links[i].offer(arrival_ms, size);
        self.delays.push(DelayRecord {
            direction,
            msg_index: self.msg_index[i],
            bytes: bytes.len(),
            arrival_us: arrival_ms * 1e3,
            release_us: release_ms * 1e3,
            delay_us: (release_ms - arrival_ms) * 1e3,
        });
        self.msg_index[i] += 1;
        release_ms
    }

    fn count_events(&mut self) {
        for e in self.master.take_events() {
            match e {
                MasterEvent::Timeout { .. } => self.timeouts += 1,
                MasterEvent::CycleSkipped => self.cycles_skipped += 1,
                MasterEvent::Exception { unit, function, code } => {
                    log::warn!("unit {unit} answered function {function:#04x} with exception {code}")
                }
                MasterEvent::Malformed { reason } => log::warn!("malformed response: {reason}"),
                _ => {}
            }
        }
        self.master.take_completed();
    }

    fn handle(&mut self, event: Event) -> Result<(), OrchestratorError> {
        match event {
            Event::Log => {
                self.advance_plant()?;
                let commands = self.active_commands();
                self.plant_trace.record(&self.runner.snapshot(), &commands);
                let next = self.now_ns + seconds_to_ns(self.config.sim.log_period_s);
                self.schedule(next, Event::Log);
            }
            Event::Poll => {
                self.master.start_cycle();
                self.pump();
                let next = self.now_ns + self.sim_ns(self.config.poll_period);
                self.schedule(next, Event::Poll);
            }
            Event::Reopt => {
                let now_ms = self.wall_ms(self.now_ns);
                let t_sim = self.now_ns as f64 / 1e9;
                let measurements: Vec<Measurement> = self
                    .ems
                    .battery_buses()
                    .into_iter()
                    .filter_map(|bus| {
                        let r = self.master.latest(bus)?;
                        Some(Measurement {
                            bus_id: bus,
                            soc: reg_decode(r.regs[reg::SOC as usize], RegKind::Soc),
                            age_ms: now_ms - r.sent_ms,
                        })
                    })
                    .collect();
                let tick = self.ems.tick(t_sim, &measurements)?;
                for &(bus, d) in &tick.commands {
                    self.master.queue_write(bus, reg::COMMAND, vec![reg_encode(f64::from(d), RegKind::Command).0]);
                }
                self.plan_log.record(t_sim, &tick);
                self.pump();
                let next = self.now_ns + seconds_to_ns(self.config.reopt_period * 60.0);
                self.schedule(next, Event::Reopt);
            }
            Event::ToSlave(bytes) => {
                self.advance_plant()?;
                let image = RegisterImage::from_snapshot(&self.runner.snapshot(), &self.active_commands());
                self.view.publish(image);
                let (frame, _) = decode_frame(&bytes).map_err(|e| OrchestratorError::Component {
                    component: "modbus-slave".into(),
                    detail: e.to_string(),
                })?;
                let reply = handle_request(&self.view, &self.slave, &frame);
                for cmd in reply.commands {
                    if let Err(e) = self.runner.handle(cmd) {
                        log::warn!("plant rejected {cmd:?}: {e}");
                    }
                }
                let response = encode_frame(&reply.response);
                let release_ms = self.transmit(Direction::Response, self.wall_ms(self.now_ns), &response);
                self.schedule(self.sim_ns(release_ms), Event::ToMaster(response));
            }
            Event::ToMaster(bytes) => {
                self.master.handle_response(self.wall_ms(self.now_ns), &bytes);
                self.count_events();
                self.pump();
            }
            Event::Timeout => {
                self.master.handle_timeout(self.wall_ms(self.now_ns));
                self.count_events();
                self.pump();
            }
        }
        Ok(())
    }

    fn run(mut self) -> Result<VirtualOutcome, OrchestratorError> {
        let end_ns = seconds_to_ns(self.config.sim.duration_s);
        self.schedule(0, Event::Log);
        self.schedule(0, Event::Poll);
        self.schedule(seconds_to_ns(self.config.reopt_period * 60.0), Event::Reopt);
        while let Some(Reverse((t, _, event))) = self.queue.pop() {
            if t >= end_ns {
                break;
            }
            self.now_ns = t;
            self.handle(event)?;
        }
        self.count_events();
        let saturated = self.runner.take_outcomes().iter().filter(|o| o.saturated()).count() as u64;
        let traces = TraceSet {
            plant: self.plant_trace.finish(),
            plan: Some(self.plan_log.finish()),
            delays: self.delays,
            duration_s: self.config.sim.duration_s,
        };
        let mut metrics = compute_metrics(&traces, &self.config.spec)?;
        metrics.timeouts = self.timeouts;
        metrics.cycles_skipped = self.cycles_skipped;
        metrics.saturated_commands = saturated;
        metrics.wall_time_s = self.config.sim.duration_s / self.config.time_scale;
        Ok(VirtualOutcome { metrics, traces })
    }
}

/// Runs a scenario on the virtual clock. The result depends only on the
/// configuration.
pub fn run_virtual(config: &ScenarioConfig) -> Result<VirtualOutcome, OrchestratorError> {
    let mut outcome = Coordinator::new(config)?.run()?;
    super::label_metrics(&mut outcome.metrics, config, "virtual");
    Ok(outcome)
}
