use std::sync::mpsc::Receiver;

use serde::{Deserialize, Serialize};

use super::{MeasurementSnapshot, Plant, PlantError, MAX_SLOTS};

/// Command arriving from the Modbus slave or the coordinator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlantCommand {
    Dispatch { bus: u8, d: i32 },
    Breaker { bus: u8, closed: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandOutcome {
    pub bus_id: u8,
    pub requested: i32,
    pub applied: i32,
    pub setpoint_w: f64,
}

impl CommandOutcome {
    pub fn saturated(&self) -> bool {
        self.requested != self.applied
    }
}

/// Applies queued commands at step boundaries and keeps every dispatch
/// command on a lease: once `lease_s` sim seconds have passed since it was
/// last checked, it is re-validated against the SoC band. A controller that
/// stops talking can therefore never drive a battery out of bounds.
#[derive(Debug)]
pub struct PlantRunner {
    plant: Plant,
    lease_s: f64,
    requested: [i32; MAX_SLOTS],
    lease_until: [f64; MAX_SLOTS],
    outcomes: Vec<CommandOutcome>,
}

impl PlantRunner {
    pub fn new(plant: Plant, lease_s: f64) -> Self {
        Self { plant, lease_s, requested: [0; MAX_SLOTS], lease_until: [f64::INFINITY; MAX_SLOTS], outcomes: Vec::new() }
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn plant_mut(&mut self) -> &mut Plant {
        &mut self.plant
    }

    pub fn snapshot(&self) -> MeasurementSnapshot {
        self.plant.snapshot()
    }

    /// Outcomes of every dispatch command and renewal so far; drained.
    pub fn take_outcomes(&mut self) -> Vec<CommandOutcome> {
        std::mem::take(&mut self.outcomes)
    }

    pub fn handle(&mut self, cmd: PlantCommand) -> Result<(), PlantError> {
        match cmd {
            PlantCommand::Dispatch { bus, d } => {
                let outcome = self.plant.apply_commands(&[(bus, d)], self.lease_s)?[0];
                let slot = self.plant.model().slot_of(bus).expect("validated by apply_commands");
                self.requested[slot] = d;
                self.lease_until[slot] = self.plant.t_sim() + self.lease_s;
                self.outcomes.push(outcome);
            }
            PlantCommand::Breaker { bus, closed } => self.plant.set_breaker(bus, closed)?,
        }
        Ok(())
    }

    /// Applies everything waiting in `rx`; invalid commands are logged and
    /// dropped.
    pub fn drain(&mut self, rx: &Receiver<PlantCommand>) {
        while let Ok(cmd) = rx.try_recv() {
            if let Err(e) = self.handle(cmd) {
                log::warn!("dropping command {cmd:?}: {e}");
            }
        }
    }

    fn renew_leases(&mut self) {
        let t = self.plant.t_sim();
        let model = self.plant.model();
        let due: Vec<(u8, usize)> = (0..model.slots())
            .filter(|&k| t >= self.lease_until[k])
            .map(|k| (model.bus_ids()[k], k))
            .collect();
        for (bus, k) in due {
            let outcome = self.plant.apply_commands(&[(bus, self.requested[k])], self.lease_s);
            if let Ok(o) = outcome {
                self.outcomes.push(o[0]);
            }
            self.lease_until[k] = t + self.lease_s;
        }
    }

    pub fn advance_to_step(&mut self, steps: u64) -> Result<(), PlantError> {
        while self.plant.state().steps < steps {
            if self.lease_until.iter().any(|&l| self.plant.t_sim() >= l) {
                self.renew_leases();
            }
            self.plant.step()?;
        }
        Ok(())
    }
}
