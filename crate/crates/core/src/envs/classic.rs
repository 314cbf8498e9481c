//! Cart-pole balancing and pendulum swing-up with the classic-control
//! constants, so published solved thresholds stay meaningful.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

use super::{ActionSpace, Env, EpisodeInfo, StepResult};
use crate::error::{Error, Result};
use crate::memory::Action;

pub(crate) struct EpisodeTracker {
    ret: f64,
    len: u64,
}

impl EpisodeTracker {
    pub fn new() -> Self {
        EpisodeTracker { ret: 0.0, len: 0 }
    }

    pub fn reset(&mut self) {
        self.ret = 0.0;
        self.len = 0;
    }

    pub fn record(&mut self, reward: f64) {
        self.ret += reward;
        self.len += 1;
    }

    pub fn steps(&self) -> u64 {
        self.len
    }

    pub fn info(&self) -> EpisodeInfo {
        EpisodeInfo {
            episode_return: self.ret,
            episode_length: self.len,
        }
    }
}

const CP_GRAVITY: f64 = 9.8;
const CP_MASS_CART: f64 = 1.0;
const CP_MASS_POLE: f64 = 0.1;
const CP_TOTAL_MASS: f64 = CP_MASS_CART + CP_MASS_POLE;
const CP_HALF_LENGTH: f64 = 0.5;
const CP_POLE_MASS_LENGTH: f64 = CP_MASS_POLE * CP_HALF_LENGTH;
const CP_FORCE_MAG: f64 = 10.0;
const CP_DT: f64 = 0.02;
const CP_X_LIMIT: f64 = 2.4;
const CP_THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;

/// Cart-pole: Euler integration, +1 reward per step, terminates when the
/// cart or pole leaves bounds or the step cap is hit.
pub struct CartPole {
    state: [f64; 4], // x, x_dot, theta, theta_dot
    tracker: EpisodeTracker,
    max_episode_steps: u64,
    rng: ChaCha8Rng,
}

impl CartPole {
    pub fn new(max_episode_steps: u64, seed: u64) -> Self {
        CartPole {
            state: [0.0; 4],
            tracker: EpisodeTracker::new(),
            max_episode_steps,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// One Euler step of the stated ODE; exposed for the dynamics oracle.
    pub fn integrate(state: &[f64; 4], force: f64) -> [f64; 4] {
        let [x, x_dot, theta, theta_dot] = *state;
        let cos = theta.cos();
        let sin = theta.sin();
        let temp = (force + CP_POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / CP_TOTAL_MASS;
        let theta_acc = (CP_GRAVITY * sin - cos * temp)
            / (CP_HALF_LENGTH * (4.0 / 3.0 - CP_MASS_POLE * cos * cos / CP_TOTAL_MASS));
        let x_acc = temp - CP_POLE_MASS_LENGTH * theta_acc * cos / CP_TOTAL_MASS;
        [
            x + CP_DT * x_dot,
            x_dot + CP_DT * x_acc,
            theta + CP_DT * theta_dot,
            theta_dot + CP_DT * theta_acc,
        ]
    }
}

impl Env for CartPole {
    fn obs_dim(&self) -> usize {
        4
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(2)
    }

    fn reset(&mut self) -> Vec<f64> {
        for v in &mut self.state {
            *v = self.rng.random_range(-0.05..0.05);
        }
        self.tracker.reset();
        self.state.to_vec()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        let a = match action {
            Action::Discrete(a) if *a < 2 => *a,
            Action::Discrete(a) => return Err(Error::Env(format!("invalid cartpole action {a}"))),
            Action::Continuous(_) => return Err(Error::Env("cartpole expects a discrete action".into())),
        };
        let force = if a == 1 { CP_FORCE_MAG } else { -CP_FORCE_MAG };
        self.state = Self::integrate(&self.state, force);
        let reward = 1.0;
        self.tracker.record(reward);
        let fell = self.state[0].abs() > CP_X_LIMIT || self.state[2].abs() > CP_THETA_LIMIT;
        let done = fell || self.tracker.steps() >= self.max_episode_steps;
        Ok(StepResult {
            state: self.state.to_vec(),
            reward,
            done,
            info: done.then(|| self.tracker.info()),
        })
    }
}

const PD_DT: f64 = 0.05;
const PD_GRAVITY: f64 = 10.0;
const PD_MASS: f64 = 1.0;
const PD_LENGTH: f64 = 1.0;
const PD_TORQUE_SCALE: f64 = 2.0;
const PD_MAX_SPEED: f64 = 8.0;

fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = (theta + std::f64::consts::PI) % two_pi;
    if t < 0.0 {
        t += two_pi;
    }
    t - std::f64::consts::PI
}

/// Torque-limited pendulum swing-up. Observation (cos, sin, theta_dot);
/// action in [-1, 1] scaled to torque; cost is never positive.
pub struct Pendulum {
    theta: f64,
    theta_dot: f64,
    tracker: EpisodeTracker,
    max_episode_steps: u64,
    rng: ChaCha8Rng,
}

impl Pendulum {
    pub fn new(max_episode_steps: u64, seed: u64) -> Self {
        Pendulum {
            theta: 0.0,
            theta_dot: 0.0,
            tracker: EpisodeTracker::new(),
            max_episode_steps,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Env for Pendulum {
    fn obs_dim(&self) -> usize {
        3
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous(1)
    }

    fn reset(&mut self) -> Vec<f64> {
        self.theta = self.rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        self.theta_dot = self.rng.random_range(-1.0..1.0);
        self.tracker.reset();
        self.obs()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        let a = match action {
            Action::Continuous(a) if a.len() == 1 => a[0].clamp(-1.0, 1.0),
            Action::Continuous(a) => {
                return Err(Error::Env(format!(
                    "pendulum expects a 1-d action, got {}",
                    a.len()
                )))
            }
            Action::Discrete(_) => return Err(Error::Env("pendulum expects a continuous action".into())),
        };
        let torque = PD_TORQUE_SCALE * a;
        let th = wrap_angle(self.theta);
        let cost = th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * torque * torque;
        self.theta_dot += (3.0 * PD_GRAVITY / (2.0 * PD_LENGTH) * self.theta.sin()
            + 3.0 * torque / (PD_MASS * PD_LENGTH * PD_LENGTH))
            * PD_DT;
        self.theta_dot = self.theta_dot.clamp(-PD_MAX_SPEED, PD_MAX_SPEED);
        self.theta += self.theta_dot * PD_DT;
        let reward = -cost;
        self.tracker.record(reward);
        let done = self.tracker.steps() >= self.max_episode_steps;
        Ok(StepResult {
            state: self.obs(),
            reward,
            done,
            info: done.then(|| self.tracker.info()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn cartpole_reset_within_bounds() {
        let mut env = CartPole::new(500, 3);
        for _ in 0..100 {
            let s = env.reset();
            assert!(s.iter().all(|v| v.abs() <= 0.05));
        }
    }

    #[test]
    fn cartpole_first_step_matches_dynamics_oracle() {
        let mut env = CartPole::new(500, 0);
        env.reset();
        env.state = [0.0; 4];
        let r = env.step(&Action::Discrete(1)).unwrap();
        // from the zero state with force +10:
        let temp = CP_FORCE_MAG / CP_TOTAL_MASS;
        let theta_acc = -temp / (CP_HALF_LENGTH * (4.0 / 3.0 - CP_MASS_POLE / CP_TOTAL_MASS));
        let x_acc = temp - CP_POLE_MASS_LENGTH * theta_acc / CP_TOTAL_MASS;
        assert_eq!(r.state[0], 0.0); // x lags one Euler step
        assert!((r.state[1] - CP_DT * x_acc).abs() < 1e-15);
        assert_eq!(r.state[2], 0.0);
        assert!((r.state[3] - CP_DT * theta_acc).abs() < 1e-15);
    }

    #[test]
    fn cartpole_random_policy_baseline_is_weak() {
        let mut env = CartPole::new(500, 11);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let mut total = 0.0;
        for _ in 0..100 {
            env.reset();
            loop {
                let r = env
                    .step(&Action::Discrete(rng.random_range(0..2)))
                    .unwrap();
                if r.done {
                    total += r.info.unwrap().episode_return;
                    break;
                }
            }
        }
        let mean = total / 100.0;
        assert!(mean < 40.0, "random cartpole mean {mean}");
    }

    #[test]
    fn pendulum_upright_rest_zero_torque_costs_nothing() {
        let mut env = Pendulum::new(200, 0);
        env.reset();
        env.theta = 0.0;
        env.theta_dot = 0.0;
        let r = env.step(&Action::Continuous(vec![0.0])).unwrap();
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn pendulum_reward_never_positive() {
        let mut env = Pendulum::new(200, 5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        env.reset();
        for _ in 0..1000 {
            let r = env
                .step(&Action::Continuous(vec![rng.random_range(-1.0..1.0)]))
                .unwrap();
            assert!(r.reward <= 0.0);
            if r.done {
                env.reset();
            }
        }
    }

    #[test]
    fn pendulum_random_policy_baseline_range() {
        let mut env = Pendulum::new(200, 21);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
        let mut total = 0.0;
        for _ in 0..100 {
            env.reset();
            loop {
                let r = env
                    .step(&Action::Continuous(vec![rng.random_range(-1.0..1.0)]))
                    .unwrap();
                if r.done {
                    total += r.info.unwrap().episode_return;
                    break;
                }
            }
        }
        let mean = total / 100.0;
        assert!(
            (-1700.0..-1000.0).contains(&mean),
            "random pendulum mean {mean}"
        );
    }
}
