//! Built-in deterministic-dynamics environments, state/reward
//! preprocessing, and synchronous vector-environment batching.
//!
//! Every public operation returns fresh copies of state, never references
//! into environment internals; mutating a returned array can never alter
//! subsequent dynamics.

mod classic;
mod simple;
mod vector;

pub use classic::{CartPole, Pendulum};
pub use simple::{Bandit2, ChainMdp, SynthFast};
pub use vector::{LaneStep, VectorEnv};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::Action;

/// Discrete action count or continuous action dimension (box [-1,1]^d).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous(usize),
}

impl ActionSpace {
    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }
}

/// Episode totals reported when a lane finishes.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeInfo {
    /// Sum of raw (unclipped) per-step rewards.
    pub episode_return: f64,
    pub episode_length: u64,
}

/// Result of one environment step. `state` is a fresh copy.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: Option<EpisodeInfo>,
}

/// A single environment instance owning its rng.
pub trait Env: Send {
    fn obs_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    /// Start a new episode and return the initial observation.
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> Result<StepResult>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardClip {
    pub lo: f64,
    pub hi: f64,
}

/// Environment section of a spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub name: String,
    /// Total environment frames in a Session.
    pub max_frame: u64,
    #[serde(default = "default_max_episode_steps")]
    pub max_episode_steps: u64,
    #[serde(default = "default_num_envs")]
    pub num_envs: usize,
    #[serde(default)]
    pub reward_clip: Option<RewardClip>,
    #[serde(default)]
    pub normalize_state: bool,
}

fn default_max_episode_steps() -> u64 {
    500
}
fn default_num_envs() -> usize {
    1
}

/// Environment registry keyed by the name string used in spec files.
pub fn make_env(name: &str, max_episode_steps: u64, seed: u64) -> Result<Box<dyn Env>> {
    match name {
        "cartpole" => Ok(Box::new(CartPole::new(max_episode_steps, seed))),
        "pendulum" => Ok(Box::new(Pendulum::new(max_episode_steps, seed))),
        "chain5" => Ok(Box::new(ChainMdp::new(max_episode_steps, seed))),
        "bandit2" => Ok(Box::new(Bandit2::new(seed))),
        "synth" => Ok(Box::new(SynthFast::new(max_episode_steps, seed))),
        other => Err(Error::Env(format!("unknown environment '{other}'"))),
    }
}

pub fn known_env(name: &str) -> bool {
    env_info(name).is_some()
}

/// Static (obs_dim, action_space) for a registered environment name.
pub fn env_info(name: &str) -> Option<(usize, ActionSpace)> {
    match name {
        "cartpole" => Some((4, ActionSpace::Discrete(2))),
        "pendulum" => Some((3, ActionSpace::Continuous(1))),
        "chain5" => Some((simple::CHAIN_STATES, ActionSpace::Discrete(2))),
        "bandit2" => Some((1, ActionSpace::Discrete(2))),
        "synth" => Some((4, ActionSpace::Discrete(2))),
        _ => None,
    }
}

/// Welford running mean/std accumulator for state normalization.
#[derive(Debug, Clone)]
pub struct RunningStats {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        RunningStats {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    pub fn std(&self, i: usize) -> f64 {
        if self.count < 2 {
            return 1.0;
        }
        (self.m2[i] / self.count as f64).sqrt().max(1e-8)
    }

    /// (x - mean) / max(std, 1e-8), without updating the accumulator.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        if self.count == 0 {
            return x.to_vec();
        }
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i]) / self.std(i))
            .collect()
    }
}

/// Apply the spec's preprocessing: optional reward clip and optional
/// running state normalization (the accumulator is updated first). The
/// caller keeps the raw reward for metrics.
pub fn preprocess(
    state: &[f64],
    reward: f64,
    env_spec: &EnvSpec,
    stats: &mut RunningStats,
) -> (Vec<f64>, f64) {
    let state_out = if env_spec.normalize_state {
        stats.update(state);
        stats.normalize(state)
    } else {
        state.to_vec()
    };
    let reward_out = match &env_spec.reward_clip {
        Some(c) => reward.clamp(c.lo, c.hi),
        None => reward,
    };
    (state_out, reward_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn env_spec(name: &str) -> EnvSpec {
        EnvSpec {
            name: name.into(),
            max_frame: 1000,
            max_episode_steps: 500,
            num_envs: 1,
            reward_clip: None,
            normalize_state: false,
        }
    }

    #[test]
    fn preprocess_clips_reward() {
        let mut spec = env_spec("cartpole");
        spec.reward_clip = Some(RewardClip { lo: -1.0, hi: 1.0 });
        let mut stats = RunningStats::new(1);
        let (_, r) = preprocess(&[0.0], 5.0, &spec, &mut stats);
        assert_eq!(r, 1.0);
    }

    #[test]
    fn preprocess_passthrough_when_disabled() {
        let spec = env_spec("cartpole");
        let mut stats = RunningStats::new(3);
        let state = [0.25, -1.5, 3.0];
        let (s, r) = preprocess(&state, 2.0, &spec, &mut stats);
        assert_eq!(s, state.to_vec());
        assert_eq!(r, 2.0);
    }

    #[test]
    fn normalization_converges_on_gaussian_stream() {
        let mut spec = env_spec("cartpole");
        spec.normalize_state = true;
        let mut stats = RunningStats::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut normalized = Vec::new();
        for _ in 0..10_000 {
            let x = 3.0 + 2.0 * crate::distributions::standard_normal(&mut rng);
            let (s, _) = preprocess(&[x], 0.0, &spec, &mut stats);
            normalized.push(s[0]);
        }
        let tail = &normalized[5000..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let var = tail.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / tail.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((0.95..1.05).contains(&var.sqrt()), "std {}", var.sqrt());
    }

    #[test]
    fn same_seed_gives_bit_identical_trajectories() {
        for name in ["cartpole", "pendulum", "chain5", "synth"] {
            let mut a = make_env(name, 200, 42).unwrap();
            let mut b = make_env(name, 200, 42).unwrap();
            let sa = a.reset();
            let sb = b.reset();
            assert_eq!(sa, sb, "{name} reset");
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..50 {
                let act = match a.action_space() {
                    ActionSpace::Discrete(n) => Action::Discrete(rng.random_range(0..n)),
                    ActionSpace::Continuous(d) => Action::Continuous(
                        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    ),
                };
                let ra = a.step(&act).unwrap();
                let rb = b.step(&act).unwrap();
                assert_eq!(ra.state, rb.state, "{name} state");
                assert_eq!(ra.reward, rb.reward, "{name} reward");
                assert_eq!(ra.done, rb.done, "{name} done");
                if ra.done {
                    assert_eq!(a.reset(), b.reset(), "{name} reset after done");
                }
            }
        }
    }

    #[test]
    fn episode_return_equals_sum_of_raw_rewards() {
        let mut env = make_env("cartpole", 500, 7).unwrap();
        env.reset();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut total = 0.0;
        let mut steps = 0u64;
        loop {
            let a = Action::Discrete(rng.random_range(0..2));
            let r = env.step(&a).unwrap();
            total += r.reward;
            steps += 1;
            if r.done {
                let info = r.info.unwrap();
                assert_eq!(info.episode_return, total);
                assert_eq!(info.episode_length, steps);
                break;
            }
        }
    }
}
