//! Soft actor-critic with twin Q networks and a fixed entropy temperature:
//! the continuous variant uses a reparameterized tanh-Gaussian policy, the
//! discrete variant samples through a Gumbel-Softmax distribution.

use super::agent::{mean, Agent, AgentMemory, AgentNets, Network, TrainMetrics};
use super::losses::{sac_discrete_policy_grad, sac_gaussian_policy_grad};
use crate::distributions::{argmax, CategoricalParams, GumbelSoftmaxParams, TanhGaussianParams};
use crate::error::Result;
use crate::memory::Transition;
use crate::netcore::{backward_from_cache, forward_cached, loss_and_grad, Tensor};

fn concat_state_action(states: &Tensor, actions: &Tensor) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..states.rows())
        .map(|r| {
            let mut row = states.row(r).to_vec();
            row.extend_from_slice(actions.row(r));
            row
        })
        .collect();
    Tensor::from_rows(&rows)
}

/// One mse update on a scalar-head Q net; returns the loss.
fn q_update(
    agent: &mut Agent,
    which: usize,
    input: &Tensor,
    targets: &[f64],
) -> Result<f64> {
    let (loss, mut grads) = {
        let net: &Network = match (&agent.nets, which) {
            (AgentNets::Sac { q1, .. }, 1) => q1,
            (AgentNets::Sac { q2, .. }, 2) => q2,
            _ => unreachable!(),
        };
        let cache = forward_cached(&net.params, &net.spec, input)?;
        let pred: Vec<f64> = (0..input.rows()).map(|r| cache.head_out[0].at(r, 0)).collect();
        let (loss, dq) = loss_and_grad(
            crate::netcore::LossKind::Mse,
            1.0,
            &pred,
            targets,
            None,
        );
        let mut seed = Tensor::zeros(vec![input.rows(), 1]);
        for r in 0..input.rows() {
            seed.row_mut(r)[0] = dq[r];
        }
        let (grads, _) = backward_from_cache(&net.params, &net.spec, input, &cache, &[seed])?;
        (loss, grads)
    };
    agent.step_net(which, &mut grads);
    Ok(loss)
}

/// Per-action-slot mse update on an n-action-head Q net; returns the loss.
fn q_update_discrete(
    agent: &mut Agent,
    which: usize,
    states: &Tensor,
    actions: &[usize],
    targets: &[f64],
) -> Result<f64> {
    let (loss, mut grads) = {
        let net: &Network = match (&agent.nets, which) {
            (AgentNets::Sac { q1, .. }, 1) => q1,
            (AgentNets::Sac { q2, .. }, 2) => q2,
            _ => unreachable!(),
        };
        let cache = forward_cached(&net.params, &net.spec, states)?;
        let pred: Vec<f64> = actions
            .iter()
            .enumerate()
            .map(|(r, &a)| cache.head_out[0].at(r, a))
            .collect();
        let (loss, dq) = loss_and_grad(
            crate::netcore::LossKind::Mse,
            1.0,
            &pred,
            targets,
            None,
        );
        let mut seed = Tensor::zeros(cache.head_out[0].shape().to_vec());
        for (r, &a) in actions.iter().enumerate() {
            seed.row_mut(r)[a] = dq[r];
        }
        let (grads, _) = backward_from_cache(&net.params, &net.spec, states, &cache, &[seed])?;
        (loss, grads)
    };
    agent.step_net(which, &mut grads);
    Ok(loss)
}

impl Agent {
    fn sac_batch(&mut self) -> Result<Vec<Transition>> {
        match &mut self.memory {
            AgentMemory::Replay(m) => m.sample(&mut self.train_rng),
            _ => unreachable!("sac uses uniform replay"),
        }
    }

    pub(super) fn train_sac_continuous(&mut self) -> Result<TrainMetrics> {
        let alpha = self.spec.algorithm.sac_alpha;
        let gamma = self.spec.algorithm.gamma;
        let batch = self.sac_batch()?;
        let states = Tensor::from_rows(&batch.iter().map(|t| t.state.clone()).collect::<Vec<_>>());
        let next_states =
            Tensor::from_rows(&batch.iter().map(|t| t.next_state.clone()).collect::<Vec<_>>());
        let actions =
            Tensor::from_rows(&batch.iter().map(|t| t.action.continuous().to_vec()).collect::<Vec<_>>());
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();

        // target: y = r + gamma (1-done)(min(Q1', Q2')(s', a') - alpha log pi(a'|s'))
        // with a' freshly sampled from the current policy
        let (next_mean, next_raw_ls) = {
            let policy = match &self.nets {
                AgentNets::Sac { policy, .. } => policy,
                _ => unreachable!(),
            };
            let mut outs = policy.forward(&next_states)?;
            let ls = outs.pop().unwrap();
            (outs.pop().unwrap(), ls)
        };
        let next_dist = TanhGaussianParams::new(next_mean, next_raw_ls);
        let (next_a, next_u) = next_dist.sample(&mut self.train_rng);
        let next_logp = next_dist.log_prob(&next_u)?;
        let y: Vec<f64> = {
            let (q1, q2) = match &self.nets {
                AgentNets::Sac { q1, q2, .. } => (q1, q2),
                _ => unreachable!(),
            };
            let next_in = concat_state_action(&next_states, &next_a);
            let q1t = q1.forward_target(&next_in)?.remove(0);
            let q2t = q2.forward_target(&next_in)?.remove(0);
            (0..batch.len())
                .map(|b| {
                    let minq = q1t.at(b, 0).min(q2t.at(b, 0));
                    let boot = if dones[b] {
                        0.0
                    } else {
                        gamma * (minq - alpha * next_logp[b])
                    };
                    rewards[b] + boot
                })
                .collect()
        };

        let q_in = concat_state_action(&states, &actions);
        let q1_loss = q_update(self, 1, &q_in, &y)?;
        let q2_loss = q_update(self, 2, &q_in, &y)?;

        // policy: loss = mean(alpha log pi(a|s) - min Q(s, a)), a reparameterized
        let (pol_mean, pol_raw_ls) = {
            let policy = match &self.nets {
                AgentNets::Sac { policy, .. } => policy,
                _ => unreachable!(),
            };
            let mut outs = policy.forward(&states)?;
            let ls = outs.pop().unwrap();
            (outs.pop().unwrap(), ls)
        };
        let dist = TanhGaussianParams::new(pol_mean.clone(), pol_raw_ls.clone());
        let (a_new, u_new) = dist.sample(&mut self.train_rng);
        let logp_new = dist.log_prob(&u_new)?;
        let act_dim = a_new.cols();
        let obs_dim = states.cols();
        let (policy_loss, q_action_grad, min_q_vals) = {
            let (q1, q2) = match &self.nets {
                AgentNets::Sac { q1, q2, .. } => (q1, q2),
                _ => unreachable!(),
            };
            let new_in = concat_state_action(&states, &a_new);
            let q1_cache = forward_cached(&q1.params, &q1.spec, &new_in)?;
            let q2_cache = forward_cached(&q2.params, &q2.spec, &new_in)?;
            let q1v: Vec<f64> = (0..batch.len()).map(|b| q1_cache.head_out[0].at(b, 0)).collect();
            let q2v: Vec<f64> = (0..batch.len()).map(|b| q2_cache.head_out[0].at(b, 0)).collect();
            // d minQ / d action via the argmin branch's input gradient;
            // only the input gradient is kept, Q parameters stay untouched
            let mut seed1 = Tensor::zeros(vec![batch.len(), 1]);
            let mut seed2 = Tensor::zeros(vec![batch.len(), 1]);
            for b in 0..batch.len() {
                if q1v[b] <= q2v[b] {
                    seed1.row_mut(b)[0] = 1.0;
                } else {
                    seed2.row_mut(b)[0] = 1.0;
                }
            }
            let (_, din1) =
                backward_from_cache(&q1.params, &q1.spec, &new_in, &q1_cache, &[seed1])?;
            let (_, din2) =
                backward_from_cache(&q2.params, &q2.spec, &new_in, &q2_cache, &[seed2])?;
            let mut qgrad = Tensor::zeros(vec![batch.len(), act_dim]);
            for b in 0..batch.len() {
                for d in 0..act_dim {
                    qgrad.row_mut(b)[d] = din1.at(b, obs_dim + d) + din2.at(b, obs_dim + d);
                }
            }
            let minq: Vec<f64> = q1v.iter().zip(&q2v).map(|(a, b)| a.min(*b)).collect();
            let loss = (0..batch.len())
                .map(|b| alpha * logp_new[b] - minq[b])
                .sum::<f64>()
                / batch.len() as f64;
            (loss, qgrad, minq)
        };
        let (d_mean, d_log_std) =
            sac_gaussian_policy_grad(&pol_mean, &pol_raw_ls, &u_new, &q_action_grad, alpha);
        let mut pol_grads = {
            let policy = match &self.nets {
                AgentNets::Sac { policy, .. } => policy,
                _ => unreachable!(),
            };
            let cache = forward_cached(&policy.params, &policy.spec, &states)?;
            let (g, _) = backward_from_cache(
                &policy.params,
                &policy.spec,
                &states,
                &cache,
                &[d_mean, d_log_std],
            )?;
            g
        };
        self.step_net(0, &mut pol_grads);
        self.maybe_update_targets()?;

        Ok(TrainMetrics {
            frame: self.frame(),
            loss: q1_loss + q2_loss + policy_loss,
            loss_policy: policy_loss,
            loss_value: q1_loss + q2_loss,
            entropy: -mean(&logp_new),
            mean_value: mean(&min_q_vals),
            explore_rate: alpha,
        })
    }

    pub(super) fn train_sac_discrete(&mut self) -> Result<TrainMetrics> {
        let alpha = self.spec.algorithm.sac_alpha;
        let gamma = self.spec.algorithm.gamma;
        let tau = self.spec.algorithm.gumbel_tau;
        let batch = self.sac_batch()?;
        let states = Tensor::from_rows(&batch.iter().map(|t| t.state.clone()).collect::<Vec<_>>());
        let next_states =
            Tensor::from_rows(&batch.iter().map(|t| t.next_state.clone()).collect::<Vec<_>>());
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.action.discrete()).collect();

        // next-action term: fresh Gumbel-Softmax hard sample and its
        // categorical log-prob under the current policy
        let next_logits = {
            let policy = match &self.nets {
                AgentNets::Sac { policy, .. } => policy,
                _ => unreachable!(),
            };
            policy.forward(&next_states)?.remove(0)
        };
        let gumbel = GumbelSoftmaxParams::new(next_logits.clone(), tau);
        let hard = gumbel.sample(&mut self.train_rng, true);
        let next_actions: Vec<usize> = (0..batch.len()).map(|b| argmax(hard.row(b))).collect();
        let next_dist = CategoricalParams::new(next_logits);
        let next_logp = next_dist.log_prob(&next_actions)?;
        let y: Vec<f64> = {
            let (q1, q2) = match &self.nets {
                AgentNets::Sac { q1, q2, .. } => (q1, q2),
                _ => unreachable!(),
            };
            let q1t = q1.forward_target(&next_states)?.remove(0);
            let q2t = q2.forward_target(&next_states)?.remove(0);
            (0..batch.len())
                .map(|b| {
                    let a = next_actions[b];
                    let minq = q1t.at(b, a).min(q2t.at(b, a));
                    let boot = if dones[b] {
                        0.0
                    } else {
                        gamma * (minq - alpha * next_logp[b])
                    };
                    rewards[b] + boot
                })
                .collect()
        };

        let q1_loss = q_update_discrete(self, 1, &states, &actions, &y)?;
        let q2_loss = q_update_discrete(self, 2, &states, &actions, &y)?;

        // policy: relaxed sample dotted with the per-action minimum of the
        // twin Q rows; Q values are constants on this path
        let (logits, q_min_rows) = {
            let (policy, q1, q2) = match &self.nets {
                AgentNets::Sac { policy, q1, q2 } => (policy, q1, q2),
                _ => unreachable!(),
            };
            let logits = policy.forward(&states)?.remove(0);
            let q1v = q1.forward(&states)?.remove(0);
            let q2v = q2.forward(&states)?.remove(0);
            let mut qmin = Tensor::zeros(q1v.shape().to_vec());
            for b in 0..q1v.rows() {
                for a in 0..q1v.cols() {
                    qmin.row_mut(b)[a] = q1v.at(b, a).min(q2v.at(b, a));
                }
            }
            (logits, qmin)
        };
        let gumbel = GumbelSoftmaxParams::new(logits.clone(), tau);
        let relaxed = gumbel.sample(&mut self.train_rng, false);
        let dist = CategoricalParams::new(logits.clone());
        let entropy = dist.entropy();
        // loss value for metrics: mean_b sum_a y[a] (alpha log p[a] - qmin[a])
        let policy_loss = {
            let mut acc = 0.0;
            for b in 0..states.rows() {
                let c = CategoricalParams::new(Tensor::from_row(logits.row(b)));
                for a in 0..logits.cols() {
                    let lp = c.log_prob(&[a])?[0];
                    acc += relaxed.at(b, a) * (alpha * lp - q_min_rows.at(b, a));
                }
            }
            acc / states.rows() as f64
        };
        let dlogits = sac_discrete_policy_grad(&logits, &relaxed, &q_min_rows, alpha, tau);
        let mut pol_grads = {
            let policy = match &self.nets {
                AgentNets::Sac { policy, .. } => policy,
                _ => unreachable!(),
            };
            let cache = forward_cached(&policy.params, &policy.spec, &states)?;
            let (g, _) =
                backward_from_cache(&policy.params, &policy.spec, &states, &cache, &[dlogits])?;
            g
        };
        self.step_net(0, &mut pol_grads);
        self.maybe_update_targets()?;

        Ok(TrainMetrics {
            frame: self.frame(),
            loss: q1_loss + q2_loss + policy_loss,
            loss_policy: policy_loss,
            loss_value: q1_loss + q2_loss,
            entropy: mean(&entropy),
            mean_value: 0.0,
            explore_rate: alpha,
        })
    }

    /// Policy action probabilities for a batch of states (policy-gradient
    /// and SAC-discrete agents).
    pub fn policy_probs(&self, states: &Tensor) -> Result<Tensor> {
        let logits = match &self.nets {
            AgentNets::Policy(n) | AgentNets::ActorCritic(n) => n.forward(states)?.remove(0),
            AgentNets::Sac { policy, .. } => policy.forward(states)?.remove(0),
            AgentNets::QLearner(_) => unreachable!("q-learner has no policy distribution"),
        };
        Ok(CategoricalParams::new(logits).probs())
    }
}
