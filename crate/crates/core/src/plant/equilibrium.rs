use super::{BusMeasurement, MeasurementSnapshot, PlantError, PlantModel, MAX_SLOTS};

/// Constant operating point for [`solve_equilibrium`], indexed by bus slot.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EquilibriumInputs {
    pub pv: [f64; MAX_SLOTS],
    pub load: [f64; MAX_SLOTS],
    pub bess: [f64; MAX_SLOTS],
    /// Stored energy, Wh; only used for the reported SoC.
    pub e: [f64; MAX_SLOTS],
}

/// Steady state of the closed loop with every breaker closed.
///
/// With all derivatives zero the integrating loops remove their errors: the
/// bus sits at nominal voltage, every converter delivers its reference power
/// and the grid branch supplies the remainder. The result is checked against
/// the duty-ratio and grid limits, which the dynamic model would otherwise
/// hit instead of settling.
pub fn solve_equilibrium(model: &PlantModel, inputs: &EquilibriumInputs) -> Result<MeasurementSnapshot, PlantError> {
    let p = &model.params;
    let v = p.v_nom;
    let mut buses = Vec::with_capacity(p.n);
    let mut net = 0.0;
    for k in 0..p.n {
        let slot = &p.slots[k];
        let p_pv = if slot.pv_rating > 0.0 { inputs.pv[k].max(0.0) } else { 0.0 };
        let p_load = inputs.load[k].max(0.0);
        let (p_bess, soc, e) = match &slot.bess {
            Some(b) => {
                let sp = inputs.bess[k];
                if sp.abs() > b.p_conv_max {
                    return Err(PlantError::NoSolution(format!(
                        "bus {} setpoint {sp} W exceeds converter limit {} W",
                        slot.bus_id, b.p_conv_max
                    )));
                }
                (sp, Some(inputs.e[k] / b.capacity), Some(inputs.e[k]))
            }
            None => (0.0, None, None),
        };
        // a boost stage needs its source below the bus voltage
        if p_pv > 0.0 && p.v_pv >= v {
            return Err(PlantError::NoSolution(format!("bus {}: pv voltage above bus voltage", slot.bus_id)));
        }
        net += p_load - p_pv - p_bess;
        let branch = (p_load - p_pv - p_bess) / v;
        buses.push(BusMeasurement {
            bus_id: slot.bus_id,
            v_bus: v - slot.r_feeder * branch,
            p_pv,
            p_load,
            p_bess,
            soc,
            e,
            breaker_closed: true,
        });
    }
    if net.abs() > p.grid_limit {
        return Err(PlantError::NoSolution(format!(
            "grid exchange {net} W exceeds slack limit {} W",
            p.grid_limit
        )));
    }
    Ok(MeasurementSnapshot { t_sim: 0.0, seq: 0, v_dc: v, p_pcc: net, buses })
}
