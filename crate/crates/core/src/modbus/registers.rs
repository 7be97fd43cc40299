use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use crate::plant::MeasurementSnapshot;

/// Register addresses of a prosumer unit (unit id = bus id).
pub mod reg {
    pub const V_BUS: u16 = 0;
    pub const P_PV: u16 = 1;
    pub const P_LOAD: u16 = 2;
    pub const P_BESS: u16 = 3;
    pub const SOC: u16 = 4;
    pub const E_STORED: u16 = 5;
    /// Plant step counter, low and high word.
    pub const SEQ_LO: u16 = 6;
    pub const SEQ_HI: u16 = 7;
    pub const COMMAND: u16 = 10;
    pub const BREAKER: u16 = 11;
    /// Registers per unit; 8 and 9 are reserved and read as zero.
    pub const COUNT: u16 = 12;
    /// Measurement block polled by the controller.
    pub const MEASUREMENT_COUNT: u16 = 6;
}

/// Unit id of the point of common coupling; reg 0 carries v_dc and reg 3
/// the grid exchange.
pub const PCC_UNIT: u8 = 1;

/// Fixed-point register kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegKind {
    /// 0.1 V, unsigned.
    Voltage,
    /// W, unsigned.
    Power,
    /// W, signed.
    SignedPower,
    /// 0.01 %, 0..=10000.
    Soc,
    /// Wh, unsigned.
    Energy,
    /// Dispatch command -1/0/+1, signed.
    Command,
    /// 0 open, 1 closed.
    Breaker,
}

impl RegKind {
    fn scale(self) -> f64 {
        match self {
            RegKind::Voltage => 10.0,
            RegKind::Soc => 10_000.0,
            _ => 1.0,
        }
    }

    fn range(self) -> (i32, i32) {
        match self {
            RegKind::Voltage | RegKind::Power | RegKind::Energy => (0, 65_535),
            RegKind::SignedPower => (-32_768, 32_767),
            RegKind::Soc => (0, 10_000),
            RegKind::Command => (-1, 1),
            RegKind::Breaker => (0, 1),
        }
    }

    fn signed(self) -> bool {
        matches!(self, RegKind::SignedPower | RegKind::Command)
    }
}

/// Encodes a physical value; returns the register and whether the value had
/// to be saturated to fit.
pub fn reg_encode(value: f64, kind: RegKind) -> (u16, bool) {
    let (lo, hi) = kind.range();
    let scaled = (value * kind.scale()).round();
    let (clamped, saturated) = if scaled.is_nan() {
        (0, true)
    } else if scaled < f64::from(lo) {
        (lo, true)
    } else if scaled > f64::from(hi) {
        (hi, true)
    } else {
        (scaled as i32, false)
    };
    let raw = if kind.signed() { clamped as i16 as u16 } else { clamped as u16 };
    (raw, saturated)
}

pub fn reg_decode(raw: u16, kind: RegKind) -> f64 {
    let n = if kind.signed() { f64::from(raw as i16) } else { f64::from(raw) };
    n / kind.scale()
}

/// Register contents of every unit at one plant instant.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisterImage {
    pub t_sim: f64,
    pub units: Vec<(u8, [u16; reg::COUNT as usize])>,
    pub saturations: u32,
}

impl RegisterImage {
    pub fn from_snapshot(snapshot: &MeasurementSnapshot, commands: &[(u8, i32)]) -> Self {
        let mut saturations = 0;
        let mut enc = |v, kind| {
            let (raw, sat) = reg_encode(v, kind);
            saturations += u32::from(sat);
            raw
        };
        let seq = snapshot.seq as u32;
        let mut units = Vec::with_capacity(snapshot.buses.len() + 1);
        let mut pcc = [0u16; reg::COUNT as usize];
        pcc[reg::V_BUS as usize] = enc(snapshot.v_dc, RegKind::Voltage);
        pcc[reg::P_BESS as usize] = enc(snapshot.p_pcc, RegKind::SignedPower);
        pcc[reg::SEQ_LO as usize] = seq as u16;
        pcc[reg::SEQ_HI as usize] = (seq >> 16) as u16;
        units.push((PCC_UNIT, pcc));
        for b in &snapshot.buses {
            let mut r = [0u16; reg::COUNT as usize];
            r[reg::V_BUS as usize] = enc(b.v_bus, RegKind::Voltage);
            r[reg::P_PV as usize] = enc(b.p_pv, RegKind::Power);
            r[reg::P_LOAD as usize] = enc(b.p_load, RegKind::Power);
            r[reg::P_BESS as usize] = enc(b.p_bess, RegKind::SignedPower);
            r[reg::SOC as usize] = enc(b.soc.unwrap_or(0.0), RegKind::Soc);
            r[reg::E_STORED as usize] = enc(b.e.unwrap_or(0.0), RegKind::Energy);
            r[reg::SEQ_LO as usize] = seq as u16;
            r[reg::SEQ_HI as usize] = (seq >> 16) as u16;
            let d = commands.iter().find(|c| c.0 == b.bus_id).map_or(0, |c| c.1);
            r[reg::COMMAND as usize] = enc(f64::from(d), RegKind::Command);
            r[reg::BREAKER as usize] = u16::from(b.breaker_closed);
            units.push((b.bus_id, r));
        }
        Self { t_sim: snapshot.t_sim, units, saturations }
    }

    pub fn unit(&self, unit_id: u8) -> Option<&[u16; reg::COUNT as usize]> {
        self.units.iter().find(|u| u.0 == unit_id).map(|u| &u.1)
    }
}

/// Latest register image, replaced atomically by the plant loop. Readers
/// take a reference-counted image, so one read sees one plant instant.
#[derive(Debug, Clone)]
pub struct RegisterView {
    image: Arc<RwLock<Arc<RegisterImage>>>,
    saturations: Arc<AtomicU64>,
}

impl RegisterView {
    pub fn new(image: RegisterImage) -> Self {
        let saturations = Arc::new(AtomicU64::new(u64::from(image.saturations)));
        Self { image: Arc::new(RwLock::new(Arc::new(image))), saturations }
    }

    pub fn publish(&self, image: RegisterImage) {
        self.saturations.fetch_add(u64::from(image.saturations), Ordering::Relaxed);
        *self.image.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(image);
    }

    pub fn current(&self) -> Arc<RegisterImage> {
        self.image.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Encodings that had to be saturated since creation.
    pub fn saturation_count(&self) -> u64 {
        self.saturations.load(Ordering::Relaxed)
    }
}

/// Measurements decoded from a polled block starting at register 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitMeasurement {
    pub v_bus: f64,
    pub p_pv: f64,
    pub p_load: f64,
    pub p_bess: f64,
    pub soc: f64,
    pub e: f64,
}

impl UnitMeasurement {
    pub fn decode(regs: &[u16]) -> Option<Self> {
        (regs.len() >= reg::MEASUREMENT_COUNT as usize).then(|| Self {
            v_bus: reg_decode(regs[0], RegKind::Voltage),
            p_pv: reg_decode(regs[1], RegKind::Power),
            p_load: reg_decode(regs[2], RegKind::Power),
            p_bess: reg_decode(regs[3], RegKind::SignedPower),
            soc: reg_decode(regs[4], RegKind::Soc),
            e: reg_decode(regs[5], RegKind::Energy),
        })
    }
}
