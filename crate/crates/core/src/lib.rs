//! Confident Monte Carlo planners (LSPI and Politex) for linear-feature MDPs
//! accessed through a local-access simulator.

pub mod config;
pub mod coreset;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod mdp;
pub mod numerics;
pub mod oracle;
pub mod planner;
pub mod rollout;
pub mod simulator;
pub mod verify;

pub use error::{Error, Result};
