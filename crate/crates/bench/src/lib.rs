//! Shared fixtures for the benchmarks.

use mgrid_core::dynamics::{Microgrid, PlantConfig};
use mgrid_core::game::{EnvConfig, Environment};
use mgrid_core::threat::AttackSchedule;

/// Four-DG grid after `seconds` of primary control only.
pub fn warm_grid(seconds: f64) -> Microgrid {
    let mut g = Microgrid::new(PlantConfig::four_dg_default()).expect("default plant is valid");
    g.run_for(seconds).expect("default plant is stable");
    g
}

pub fn benign_environment() -> Environment {
    Environment::new(EnvConfig::default(), AttackSchedule::default()).expect("default environment is valid")
}
