//! Algorithm section of a spec file.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    Reinforce,
    A2cNstep,
    A2cGae,
    Ppo,
    Dqn,
    DdqnPer,
    Sac,
}

impl AlgorithmName {
    pub fn as_str(&self) -> &'static str {
        match self {
            AlgorithmName::Reinforce => "reinforce",
            AlgorithmName::A2cNstep => "a2c_nstep",
            AlgorithmName::A2cGae => "a2c_gae",
            AlgorithmName::Ppo => "ppo",
            AlgorithmName::Dqn => "dqn",
            AlgorithmName::DdqnPer => "ddqn_per",
            AlgorithmName::Sac => "sac",
        }
    }

    /// On-policy algorithms train on freshly collected data.
    pub fn is_on_policy(&self) -> bool {
        matches!(
            self,
            AlgorithmName::Reinforce
                | AlgorithmName::A2cNstep
                | AlgorithmName::A2cGae
                | AlgorithmName::Ppo
        )
    }
}

/// Exploration strategy for the Q-learning family. Rates decay linearly
/// over the stated frame budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExploreSpec {
    EpsilonGreedy {
        epsilon_start: f64,
        epsilon_end: f64,
        epsilon_decay_frames: u64,
    },
    Boltzmann {
        temperature_start: f64,
        temperature_end: f64,
        temperature_decay_frames: u64,
    },
}

impl Default for ExploreSpec {
    fn default() -> Self {
        ExploreSpec::EpsilonGreedy {
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_frames: 10_000,
        }
    }
}

impl ExploreSpec {
    /// Linearly decayed rate at the given frame.
    pub fn rate_at(&self, frame: u64) -> f64 {
        let (start, end, horizon) = match self {
            ExploreSpec::EpsilonGreedy {
                epsilon_start,
                epsilon_end,
                epsilon_decay_frames,
            } => (*epsilon_start, *epsilon_end, *epsilon_decay_frames),
            ExploreSpec::Boltzmann {
                temperature_start,
                temperature_end,
                temperature_decay_frames,
            } => (*temperature_start, *temperature_end, *temperature_decay_frames),
        };
        if horizon == 0 {
            return end;
        }
        let t = (frame as f64 / horizon as f64).min(1.0);
        start + (end - start) * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub name: AlgorithmName,
    /// Discount factor, in [0, 1].
    pub gamma: f64,
    #[serde(default)]
    pub entropy_coef: f64,
    #[serde(default = "default_val_loss_coef")]
    pub val_loss_coef: f64,
    /// GAE lambda.
    #[serde(default = "default_lam")]
    pub lam: f64,
    #[serde(default = "default_one")]
    pub num_step_returns: usize,
    /// PPO clip range.
    #[serde(default = "default_clip_eps")]
    pub clip_eps: f64,
    #[serde(default = "default_one")]
    pub ppo_epochs: usize,
    #[serde(default = "default_one")]
    pub ppo_minibatches: usize,
    /// Frames between training calls.
    pub training_frequency: u64,
    /// Frames collected before the first training call.
    #[serde(default)]
    pub training_start: u64,
    #[serde(default)]
    pub explore_spec: ExploreSpec,
    /// SAC entropy temperature (fixed; no auto-tuning).
    #[serde(default = "default_sac_alpha")]
    pub sac_alpha: f64,
    /// Gumbel-Softmax relaxation temperature for discrete SAC. Distinct
    /// from the Polyak coefficient, which lives in the net spec.
    #[serde(default = "default_gumbel_tau")]
    pub gumbel_tau: f64,
    /// Standardize advantages (policy-gradient family).
    #[serde(default = "default_true")]
    pub standardize_adv: bool,
}

fn default_val_loss_coef() -> f64 {
    0.5
}
fn default_lam() -> f64 {
    0.95
}
fn default_one() -> usize {
    1
}
fn default_clip_eps() -> f64 {
    0.2
}
fn default_sac_alpha() -> f64 {
    0.2
}
fn default_gumbel_tau() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
