//! DQN / double-DQN training step, with optional prioritized replay.

use super::agent::{mean, Agent, AgentMemory, AgentNets, TrainMetrics};
use super::losses::{ddqn_target, dqn_target};
use super::AlgorithmName;
use crate::error::Result;
use crate::memory::Transition;
use crate::netcore::{backward_from_cache, forward_cached, loss_and_grad, Tensor};

impl Agent {
    pub(super) fn train_q_learner(&mut self) -> Result<TrainMetrics> {
        let beta = self.per_beta();
        let (batch, per_handles, is_weights) = match &mut self.memory {
            AgentMemory::Replay(m) => {
                let b = {
                    let rng = &mut self.train_rng;
                    m.sample(rng)?
                };
                (b, None, None)
            }
            AgentMemory::Per(m) => {
                let (b, idx, w) = {
                    let rng = &mut self.train_rng;
                    m.sample(beta, rng)?
                };
                (b, Some(idx), Some(w))
            }
            AgentMemory::OnPolicy(_) => unreachable!("q-learning uses replay memory"),
        };

        let gamma = self.spec.algorithm.gamma;
        let double_q = self.spec.algorithm.name == AlgorithmName::DdqnPer;
        let states = Tensor::from_rows(&batch.iter().map(|t| t.state.clone()).collect::<Vec<_>>());
        let next_states =
            Tensor::from_rows(&batch.iter().map(|t| t.next_state.clone()).collect::<Vec<_>>());
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.action.discrete()).collect();

        let net = match &self.nets {
            AgentNets::QLearner(n) => n,
            _ => unreachable!(),
        };
        // Targets come from forward passes outside any gradient recording.
        let q_next_target = net.forward_target(&next_states)?.remove(0);
        let y = if double_q {
            let q_next_online = net.forward(&next_states)?.remove(0);
            ddqn_target(&rewards, &dones, &q_next_online, &q_next_target, gamma)?
        } else {
            dqn_target(&rewards, &dones, &q_next_target, gamma)?
        };

        let cache = forward_cached(&net.params, &net.spec, &states)?;
        let q_out = &cache.head_out[0];
        let q_pred: Vec<f64> = (0..batch.len()).map(|b| q_out.at(b, actions[b])).collect();
        let (loss, dq) = loss_and_grad(
            net.spec.loss,
            net.spec.huber_delta,
            &q_pred,
            &y,
            is_weights.as_deref(),
        );
        let mut seed = Tensor::zeros(q_out.shape().to_vec());
        for b in 0..batch.len() {
            seed.row_mut(b)[actions[b]] = dq[b];
        }
        let (mut grads, _) =
            backward_from_cache(&net.params, &net.spec, &states, &cache, &[seed])?;
        self.step_net(0, &mut grads);
        self.maybe_update_targets()?;

        if let (AgentMemory::Per(m), Some(handles)) = (&mut self.memory, per_handles) {
            let td_errors: Vec<f64> = q_pred.iter().zip(&y).map(|(p, t)| p - t).collect();
            m.update_priorities(&handles, &td_errors);
        }

        Ok(TrainMetrics {
            frame: self.frame(),
            loss,
            loss_policy: 0.0,
            loss_value: loss,
            entropy: 0.0,
            mean_value: mean(&q_pred),
            explore_rate: self.explore_rate(),
        })
    }

    /// Read out Q values for a batch of observations (online net).
    pub fn q_values(&self, states: &Tensor) -> Result<Tensor> {
        match &self.nets {
            AgentNets::QLearner(n) => Ok(n.forward(states)?.remove(0)),
            AgentNets::Sac { q1, .. } => Ok(q1.forward(states)?.remove(0)),
            _ => unreachable!("no Q net for this algorithm"),
        }
    }

    /// Recompute what the stored PER priorities should be for a batch that
    /// was just trained on; test support for the write-back contract.
    pub fn expected_priorities(&self, batch: &[Transition], y: &[f64]) -> Result<Vec<f64>> {
        let m = &self.spec.memory;
        let states = Tensor::from_rows(&batch.iter().map(|t| t.state.clone()).collect::<Vec<_>>());
        let q = self.q_values(&states)?;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(b, t)| {
                let delta = q.at(b, t.action.discrete()) - y[b];
                (delta.abs() + m.per_epsilon).powf(m.per_alpha)
            })
            .collect())
    }
}
