//! Zero-sum attacker/defender game over the simulated microgrid.

mod env;
mod utility;

pub use env::{Detector, EnvConfig, EnvSnapshot, Environment, OperatingReference, GameState, StepOutcome, settled_state, TrajectoryRow};

pub use utility::{
    attacker_utility, breakdown, count_oscillations, count_oscillations_with_floor, defender_utility, link_counts,
    max_links, relative_error, ChannelMetrics, GameConfig, UtilityBreakdown, UtilityInputs, MONITORED_CHANNELS,
};
