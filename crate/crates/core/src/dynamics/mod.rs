//! Physical layer: droop primary control, cascaded voltage/current loops,
//! averaged inverter plant, quasi-static network and the fixed-step integrator.

mod control;
mod integrator;
mod network;
mod params;
mod plant;
mod power;
mod system;

pub use control::{
    compute_droop_coeffs, current_loop, droop_setpoints, voltage_loop, CurrentLoopOutput, VoltageLoopOutput,
};
pub use integrator::{rk4_step, Rk4Workspace};
pub use network::{network_solve, Line, Load, NetworkModel};
pub use params::{ControlGains, DgParams, DgState};
pub use plant::plant_derivatives;
pub use power::{instantaneous_power, measure_power, DEFAULT_FILTER_CUTOFF};
pub use system::{dg_omega, integrate_step, Microgrid, PlantConfig, StepWorkspace, SystemState};
