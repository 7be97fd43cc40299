//! Software co-simulation of a grid-connected 400 V DC microgrid.
//!
//! Three cooperating components are wired together over Modbus-TCP:
//!
//! - [`plant`]: an averaged converter-level model of the microgrid (PV boost
//!   converters, bidirectional battery converters, conductance loads and a
//!   grid slack branch on a common DC bus) integrated with fixed-step RK4.
//! - [`ems`]: a receding-horizon energy management controller that picks
//!   hourly charge / idle / discharge commands per battery by exact dynamic
//!   programming.
//! - [`netem`]: a traffic-class delay model (serialization, M/D/1 queueing
//!   and propagation) applied per Modbus message, either inside the
//!   deterministic virtual-time coordinator or as a real TCP proxy.
//!
//! [`orchestrator`] runs whole scenarios, computes run metrics and reproduces
//! the delay calibration sweep. [`model`] holds the shared domain types,
//! scenario files and time-series profiles.

pub mod ems;
pub mod modbus;
pub mod model;
pub mod netem;
pub mod orchestrator;
pub mod plant;

/// Seconds in one simulated day; all profiles wrap with this period.
pub const DAY_S: f64 = 86_400.0;
