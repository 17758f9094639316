//! Defenders: the static threshold baseline and the deep Q-learning agent.

mod dqn;
mod oracle;
mod static_detector;

pub use dqn::{
    argmax, encode_state, exploration_threshold, maybe_retrain, select_action, sync_target, td_target, train_step,
    AgentConfig, DqnAgent, Experience, ReplayMemory,
};
pub use oracle::{value_iteration, SurrogateGame, SurrogateReport};
pub use static_detector::{channel_residuals, static_detect, StaticDetectorConfig, DEFAULT_STATIC_THRESHOLD};
