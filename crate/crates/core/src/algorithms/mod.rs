//! The algorithm family: return/advantage computations, per-algorithm
//! losses, action selection, and training schedules, composed from the
//! net, memory, and distribution layers.

mod agent;
mod losses;
mod qlearn;
mod returns;
mod sac;
mod spec;

pub use agent::{ActOutput, Agent, AgentMemory, AgentNets, Mode, Network, TrainMetrics, UpdateMode};
pub use losses::{
    a2c_loss, categorical_grad_seed, ddqn_target, dqn_target, ppo_policy_grad, ppo_policy_loss,
    reinforce_loss, sac_discrete_policy_grad, sac_gaussian_policy_grad, tanh_gaussian_grad_seed,
};
pub use returns::{calc_gae, calc_mc_returns, calc_nstep_returns, standardize_advantages};
pub use spec::{AlgorithmName, AlgorithmSpec, ExploreSpec};

use serde::{Deserialize, Serialize};

use crate::memory::MemorySpec;
use crate::netcore::NetSpec;

/// One agent entry of a spec file: algorithm, memory, and net sub-specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub algorithm: AlgorithmSpec,
    pub memory: MemorySpec,
    pub net: NetSpec,
}
