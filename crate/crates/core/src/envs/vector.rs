//! Synchronous vector environment: lanes stepped in lockstep in one
//! thread, with auto-reset on terminal lanes.

use super::{ActionSpace, Env, EpisodeInfo};
use crate::error::{Error, Result};
use crate::memory::Action;
use crate::netcore::Tensor;

/// Per-lane outcome of a vector step. When `done`, `state` is already the
/// fresh reset state and `terminal_state` holds the pre-reset observation
/// for callers that need correct bootstrapping.
#[derive(Debug, Clone)]
pub struct LaneStep {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub terminal_state: Option<Vec<f64>>,
    pub episode: Option<EpisodeInfo>,
}

pub struct VectorEnv {
    lanes: Vec<Box<dyn Env>>,
    obs_dim: usize,
    action_space: ActionSpace,
}

impl VectorEnv {
    pub fn new(lanes: Vec<Box<dyn Env>>) -> Self {
        assert!(!lanes.is_empty());
        let obs_dim = lanes[0].obs_dim();
        let action_space = lanes[0].action_space();
        VectorEnv {
            lanes,
            obs_dim,
            action_space,
        }
    }

    pub fn num_envs(&self) -> usize {
        self.lanes.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_space(&self) -> ActionSpace {
        self.action_space
    }

    /// Reset every lane; rows are freshly allocated copies.
    pub fn reset(&mut self) -> Tensor {
        let rows: Vec<Vec<f64>> = self.lanes.iter_mut().map(|e| e.reset()).collect();
        Tensor::from_rows(&rows)
    }

    /// Step all lanes with one action per lane. Finished lanes auto-reset.
    pub fn step(&mut self, actions: &[Action]) -> Result<Vec<LaneStep>> {
        if actions.len() != self.lanes.len() {
            return Err(Error::length(
                "vector_step actions",
                actions.len(),
                self.lanes.len(),
            ));
        }
        let mut out = Vec::with_capacity(self.lanes.len());
        for (env, action) in self.lanes.iter_mut().zip(actions) {
            let r = env.step(action)?;
            if r.done {
                let fresh = env.reset();
                out.push(LaneStep {
                    state: fresh,
                    reward: r.reward,
                    done: true,
                    terminal_state: Some(r.state),
                    episode: r.info,
                });
            } else {
                out.push(LaneStep {
                    state: r.state,
                    reward: r.reward,
                    done: false,
                    terminal_state: None,
                    episode: None,
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_env;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_lane_matches_scalar_env_trace() {
        let mut scalar = make_env("cartpole", 500, 77).unwrap();
        let mut venv = VectorEnv::new(vec![make_env("cartpole", 500, 77).unwrap()]);
        let s0 = scalar.reset();
        let v0 = venv.reset();
        assert_eq!(s0.as_slice(), v0.row(0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let a = Action::Discrete(rng.random_range(0..2));
            let rs = scalar.step(&a).unwrap();
            let rv = venv.step(&[a.clone()]).unwrap().remove(0);
            assert_eq!(rs.reward, rv.reward);
            assert_eq!(rs.done, rv.done);
            if rs.done {
                // vector lane auto-resets; bring the scalar env along
                assert_eq!(rs.state, rv.terminal_state.unwrap());
                let fresh = scalar.reset();
                assert_eq!(fresh, rv.state);
            } else {
                assert_eq!(rs.state, rv.state);
            }
        }
    }

    #[test]
    fn lanes_are_independent_and_seed_permutable() {
        let seeds = [3u64, 4, 5];
        let build = |order: &[u64]| {
            VectorEnv::new(
                order
                    .iter()
                    .map(|&s| make_env("cartpole", 500, s).unwrap())
                    .collect(),
            )
        };
        let mut a = build(&seeds);
        let mut b = build(&[5, 3, 4]);
        let ra = a.reset();
        let rb = b.reset();
        assert_eq!(ra.row(0), rb.row(1));
        assert_eq!(ra.row(1), rb.row(2));
        assert_eq!(ra.row(2), rb.row(0));
        // fixed identical action per lane keeps traces permuted lane-wise
        for _ in 0..50 {
            let acts = vec![Action::Discrete(1); 3];
            let sa = a.step(&acts).unwrap();
            let sb = b.step(&acts).unwrap();
            assert_eq!(sa[0].state, sb[1].state);
            assert_eq!(sa[1].state, sb[2].state);
            assert_eq!(sa[2].state, sb[0].state);
        }
    }

    #[test]
    fn returned_batches_are_copies() {
        let mut venv = VectorEnv::new(vec![make_env("cartpole", 500, 9).unwrap()]);
        let mut first = venv.reset();
        let probe = {
            let mut v2 = VectorEnv::new(vec![make_env("cartpole", 500, 9).unwrap()]);
            v2.reset();
            v2.step(&[Action::Discrete(0)]).unwrap().remove(0).state
        };
        // trash the returned buffer, then step: trajectory unaffected
        for v in first.data_mut() {
            *v = 1e9;
        }
        let got = venv.step(&[Action::Discrete(0)]).unwrap().remove(0).state;
        assert_eq!(got, probe);
    }
}
