//! Deterministic co-simulation of an inverter-based AC microgrid whose
//! secondary-control communication graph is defended against staged
//! false-data injection by a deep Q-learning agent.

pub mod config;
pub mod consensus;
pub mod defense;
pub mod dynamics;
pub mod error;
pub mod game;
pub mod neuralnet;
pub mod scenario;
pub mod threat;

pub use error::{Error, Result};
