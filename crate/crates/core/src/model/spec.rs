use serde::{Deserialize, Serialize};

/// Static description of the microgrid: four prosumer buses hanging off a
/// common DC bus through resistive-inductive feeders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridSpec {
    /// Nominal DC bus voltage, volts.
    pub v_nominal: f64,
    /// DC bus capacitance, farads.
    pub c_dc: f64,
    pub buses: Vec<BusSpec>,
    pub feeders: Vec<FeederSpec>,
    #[serde(default)]
    pub converters: ConverterParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusSpec {
    pub bus_id: u8,
    /// PV rating in watts, 0 when the bus has no PV unit.
    #[serde(default)]
    pub pv_rating: f64,
    pub load_max: f64,
    pub load_min: f64,
    pub feeder_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bess: Option<BatterySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    /// Energy capacity, watt-hours.
    pub capacity: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    /// Efficiency applied to every stored-energy change, both directions.
    pub eta: f64,
    /// Converter power limit, watts.
    pub p_conv_max: f64,
    /// Power moved by one hourly dispatch command, watts.
    pub p_dispatch: f64,
    /// Converter inductance, henries.
    pub l_conv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederSpec {
    /// Series resistance, ohms.
    pub r: f64,
    /// Series inductance, henries. Bus voltages use the resistive drop only.
    pub l: f64,
}

/// Converter and control-loop parameters shared by all buses.
///
/// PI gains are derived from the bandwidths: a current loop with inductance
/// `L` gets `kp = 2 w L`, `ki = w^2 L` (critically damped at `w`); the bus
/// voltage loop uses the same form with the bus capacitance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConverterParams {
    /// PV panel voltage seen by the boost converter, volts.
    pub v_pv: f64,
    /// PV boost inductance, henries.
    pub l_pv: f64,
    /// Battery terminal voltage, volts (SoC independent).
    pub v_battery: f64,
    /// Converter current-loop bandwidth, rad/s.
    pub current_bandwidth: f64,
    /// Grid slack voltage-loop bandwidth, rad/s.
    pub voltage_bandwidth: f64,
    /// Grid interface power limit, watts.
    pub grid_limit_w: f64,
}

impl Default for ConverterParams {
    fn default() -> Self {
        Self {
            v_pv: 200.0,
            l_pv: 5e-3,
            v_battery: 200.0,
            current_bandwidth: 300.0,
            voltage_bandwidth: 200.0,
            grid_limit_w: 20_000.0,
        }
    }
}

impl BatterySpec {
    /// Defaults used for the bundled scenario: SoC window 15-95 %,
    /// efficiency 0.95, converter limit 1.5C, dispatch quantum 0.4C.
    pub fn with_capacity(capacity_wh: f64) -> Self {
        Self {
            capacity: capacity_wh,
            soc_min: 0.15,
            soc_max: 0.95,
            eta: 0.95,
            p_conv_max: 1.5 * capacity_wh,
            p_dispatch: 0.4 * capacity_wh,
            l_conv: 5e-3,
        }
    }

    pub fn e_min(&self) -> f64 {
        self.soc_min * self.capacity
    }

    pub fn e_max(&self) -> f64 {
        self.soc_max * self.capacity
    }
}

impl MicrogridSpec {
    /// The four-bus laboratory microgrid: PV at buses 2 and 4, a battery and
    /// a variable load on every bus, feeders f1-f4.
    pub fn table1() -> Self {
        let bus = |bus_id: u8, pv_rating: f64, capacity: f64, load_min: f64, load_max: f64| BusSpec {
            bus_id,
            pv_rating,
            load_max,
            load_min,
            feeder_index: usize::from(bus_id - 2),
            bess: Some(BatterySpec::with_capacity(capacity)),
        };
        Self {
            v_nominal: 400.0,
            c_dc: 10e-3,
            buses: vec![
                bus(2, 1450.0, 1000.0, 130.0, 160.0),
                bus(3, 0.0, 2000.0, 240.0, 720.0),
                bus(4, 450.0, 1000.0, 110.0, 700.0),
                bus(5, 0.0, 2000.0, 210.0, 1100.0),
            ],
            feeders: vec![
                FeederSpec { r: 1.257, l: 0.031 },
                FeederSpec { r: 1.150, l: 0.030 },
                FeederSpec { r: 0.868, l: 0.028 },
                FeederSpec { r: 0.469, l: 0.035 },
            ],
            converters: ConverterParams::default(),
        }
    }

    pub fn bus(&self, bus_id: u8) -> Option<&BusSpec> {
        self.buses.iter().find(|b| b.bus_id == bus_id)
    }

    pub fn bus_index(&self, bus_id: u8) -> Option<usize> {
        self.buses.iter().position(|b| b.bus_id == bus_id)
    }

    /// Buses carrying a battery, in bus order.
    pub fn batteries(&self) -> impl Iterator<Item = (u8, &BatterySpec)> {
        self.buses
            .iter()
            .filter_map(|b| b.bess.as_ref().map(|s| (b.bus_id, s)))
    }

    /// Same plant with every battery removed.
    pub fn without_batteries(&self) -> Self {
        let mut spec = self.clone();
        for bus in &mut spec.buses {
            bus.bess = None;
        }
        spec
    }
}
