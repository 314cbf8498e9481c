//! Modular reinforcement learning framework.
//!
//! Experiments are declared in JSON spec files (agent / env / body / meta /
//! search) and run through a Session / Trial / Experiment hierarchy with
//! deterministic seeding, built-in environments, and automated result
//! analysis. Algorithms are composed from three well-separated layers:
//! [`netcore`] (function approximators), [`memory`] (experience storage) and
//! [`distributions`] (action distributions).

pub mod algorithms;
pub mod analysis;
pub mod distributions;
pub mod envs;
pub mod error;
pub mod executor;
pub mod memory;
pub mod netcore;
pub mod selftest;
pub mod specfile;

pub use error::{Error, Result};

/// Build identifier recorded in run manifests and checkpoints.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
