//! Small oracle-checkable environments: a deterministic chain MDP, a
//! two-armed bandit, and a synthetic fast env for throughput measurement.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::classic::EpisodeTracker;
use super::{ActionSpace, Env, StepResult};
use crate::error::{Error, Result};
use crate::memory::Action;

pub const CHAIN_STATES: usize = 5;

/// Deterministic 5-state chain: start at 0, `right` advances, `left`
/// retreats (floored at 0). Reaching state 4 pays 1 and terminates.
/// Observations are one-hot.
pub struct ChainMdp {
    pos: usize,
    tracker: EpisodeTracker,
    max_episode_steps: u64,
}

impl ChainMdp {
    pub fn new(max_episode_steps: u64, _seed: u64) -> Self {
        ChainMdp {
            pos: 0,
            tracker: EpisodeTracker::new(),
            max_episode_steps,
        }
    }

    fn obs(&self) -> Vec<f64> {
        let mut s = vec![0.0; CHAIN_STATES];
        s[self.pos] = 1.0;
        s
    }

    /// Exact Q* over non-terminal states, by value iteration.
    pub fn optimal_q(gamma: f64) -> Vec<[f64; 2]> {
        let mut q = vec![[0.0f64; 2]; CHAIN_STATES - 1];
        for _ in 0..10_000 {
            let mut next = q.clone();
            for s in 0..CHAIN_STATES - 1 {
                // action 0: left
                let s_left = s.saturating_sub(1);
                next[s][0] = gamma * q[s_left].iter().cloned().fold(f64::MIN, f64::max);
                // action 1: right
                if s + 1 == CHAIN_STATES - 1 + 1 {
                    unreachable!();
                }
                next[s][1] = if s + 1 == CHAIN_STATES - 1 {
                    1.0 // transition into the terminal goal state
                } else {
                    gamma * q[s + 1].iter().cloned().fold(f64::MIN, f64::max)
                };
            }
            let delta: f64 = q
                .iter()
                .zip(&next)
                .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
                .fold(0.0, f64::max);
            q = next;
            if delta < 1e-14 {
                break;
            }
        }
        q
    }
}

impl Env for ChainMdp {
    fn obs_dim(&self) -> usize {
        CHAIN_STATES
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(2)
    }

    fn reset(&mut self) -> Vec<f64> {
        self.pos = 0;
        self.tracker.reset();
        self.obs()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        let a = match action {
            Action::Discrete(a) if *a < 2 => *a,
            _ => return Err(Error::Env("chain5 expects action in {0, 1}".into())),
        };
        if a == 0 {
            self.pos = self.pos.saturating_sub(1);
        } else {
            self.pos += 1;
        }
        let reached_goal = self.pos == CHAIN_STATES - 1;
        let reward = if reached_goal { 1.0 } else { 0.0 };
        self.tracker.record(reward);
        let done = reached_goal || self.tracker.steps() >= self.max_episode_steps;
        Ok(StepResult {
            state: self.obs(),
            reward,
            done,
            info: done.then(|| self.tracker.info()),
        })
    }
}

/// One-step two-armed bandit: arm 1 pays 1, arm 0 pays 0.
pub struct Bandit2 {
    _rng: ChaCha8Rng,
}

impl Bandit2 {
    pub fn new(seed: u64) -> Self {
        Bandit2 {
            _rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Env for Bandit2 {
    fn obs_dim(&self) -> usize {
        1
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(2)
    }

    fn reset(&mut self) -> Vec<f64> {
        vec![0.0]
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        let a = match action {
            Action::Discrete(a) if *a < 2 => *a,
            _ => return Err(Error::Env("bandit2 expects action in {0, 1}".into())),
        };
        let reward = if a == 1 { 1.0 } else { 0.0 };
        Ok(StepResult {
            state: vec![0.0],
            reward,
            done: true,
            info: Some(super::EpisodeInfo {
                episode_return: reward,
                episode_length: 1,
            }),
        })
    }
}

/// Cheap synthetic environment for frames-per-second measurements: a
/// 4-dimensional noisy observation, reward from a noisy linear readout,
/// discrete actions, fixed-length episodes.
pub struct SynthFast {
    t: u64,
    state: [f64; 4],
    tracker: EpisodeTracker,
    max_episode_steps: u64,
    rng: ChaCha8Rng,
}

impl SynthFast {
    pub fn new(max_episode_steps: u64, seed: u64) -> Self {
        SynthFast {
            t: 0,
            state: [0.0; 4],
            tracker: EpisodeTracker::new(),
            max_episode_steps,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn roll(&mut self) {
        self.t = self.t.wrapping_add(1);
        let noise: f64 = self.rng.random_range(-1.0..1.0);
        for (i, v) in self.state.iter_mut().enumerate() {
            *v = 0.9 * *v + 0.1 * noise + 0.01 * i as f64;
        }
    }
}

impl Env for SynthFast {
    fn obs_dim(&self) -> usize {
        4
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(2)
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = [0.0; 4];
        self.tracker.reset();
        self.roll();
        self.state.to_vec()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        let a = match action {
            Action::Discrete(a) if *a < 2 => *a as f64,
            _ => return Err(Error::Env("synth expects action in {0, 1}".into())),
        };
        self.roll();
        let reward = self.state[0] - 0.5 * a;
        self.tracker.record(reward);
        let done = self.tracker.steps() >= self.max_episode_steps;
        Ok(StepResult {
            state: self.state.to_vec(),
            reward,
            done,
            info: done.then(|| self.tracker.info()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_boundary_and_goal() {
        let mut env = ChainMdp::new(100, 0);
        env.reset();
        let r = env.step(&Action::Discrete(0)).unwrap();
        assert_eq!(r.state[0], 1.0); // left at state 0 stays at 0
        assert!(!r.done);
        // optimal policy reaches the goal in 4 steps with return 1
        env.reset();
        let mut total = 0.0;
        for k in 0..4 {
            let r = env.step(&Action::Discrete(1)).unwrap();
            total += r.reward;
            assert_eq!(r.done, k == 3);
        }
        assert_eq!(total, 1.0);
    }

    #[test]
    fn chain_value_iteration_oracle() {
        let gamma = 0.9;
        let q = ChainMdp::optimal_q(gamma);
        assert!((q[0][1] - gamma.powi(3)).abs() < 1e-12);
        assert!((q[3][1] - 1.0).abs() < 1e-12);
        // moving left costs one extra gamma factor vs. best-from-there
        assert!((q[0][0] - gamma * gamma.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn bandit_pays_only_arm_one() {
        let mut env = Bandit2::new(0);
        env.reset();
        assert_eq!(env.step(&Action::Discrete(1)).unwrap().reward, 1.0);
        env.reset();
        assert_eq!(env.step(&Action::Discrete(0)).unwrap().reward, 0.0);
    }
}
