//! Agent construction, action selection, and the on-policy trainers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::losses::{categorical_grad_seed, ppo_policy_grad, tanh_gaussian_grad_seed};
use super::returns::{calc_gae, calc_mc_returns, calc_nstep_returns, standardize_advantages};
use super::{AgentSpec, AlgorithmName, ExploreSpec};
use crate::distributions::{
    argmax, boltzmann, epsilon_greedy, CategoricalParams, GumbelSoftmaxParams, TanhGaussianParams,
};
use crate::envs::ActionSpace;
use crate::error::{Error, Result};
use crate::memory::{
    Action, Extras, MemoryKind, OnPolicyMemory, PerMemory, ReplayMemory, Transition,
};
use crate::netcore::{
    backward_from_cache, clip_grad_norm, forward, forward_cached, init_params, optimizer_step,
    update_target, HeadSpec, NetSpec, OptState, Params, Tensor,
};
use crate::specfile::derive_stream;

/// Acting mode: exploration during training, greedy/deterministic at eval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How gradients are consumed after a training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// Clip and apply the optimizer locally.
    Local,
    /// Clip and accumulate; the executor pushes them to a central store.
    Accumulate,
}

/// One network: resolved spec, online parameters, optimizer state, and an
/// optional target copy.
#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetSpec,
    pub params: Params,
    pub opt: OptState,
    pub target: Option<Params>,
}

impl Network {
    fn new(spec: NetSpec, in_dim: usize, rng: &mut ChaCha8Rng, with_target: bool) -> Self {
        let params = init_params(&spec, in_dim, rng);
        let opt = OptState::new(params.flat_len());
        let target = with_target.then(|| params.clone());
        Network {
            spec,
            params,
            opt,
            target,
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        forward(&self.params, &self.spec, input)
    }

    /// Forward through the target copy; a plain evaluation outside any
    /// gradient path, so targets are detached by construction.
    pub fn forward_target(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        forward(
            self.target.as_ref().expect("net has no target copy"),
            &self.spec,
            input,
        )
    }
}

/// Latest training metrics: loss components, policy entropy, mean Q/V
/// output, and the current exploration rate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainMetrics {
    pub frame: u64,
    pub loss: f64,
    pub loss_policy: f64,
    pub loss_value: f64,
    pub entropy: f64,
    pub mean_value: f64,
    pub explore_rate: f64,
    /// PPO: mean probability ratio of the first minibatch of the first
    /// epoch (1.0 at an on-policy start).
    pub mean_ratio: f64,
}

/// Action plus the collection-time extras stored with the transition.
#[derive(Debug, Clone)]
pub struct ActOutput {
    pub action: Action,
    pub extras: Extras,
}

pub enum AgentNets {
    /// REINFORCE: policy net only.
    Policy(Network),
    /// Shared-body actor-critic: policy head(s) plus a value head.
    ActorCritic(Network),
    /// DQN family: Q net with target copy.
    QLearner(Network),
    /// SAC: policy plus twin Q nets with target copies.
    Sac {
        policy: Network,
        q1: Network,
        q2: Network,
    },
}

pub enum AgentMemory {
    OnPolicy(OnPolicyMemory),
    Replay(ReplayMemory),
    Per(PerMemory),
}

pub struct Agent {
    pub spec: AgentSpec,
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub nets: AgentNets,
    pub memory: AgentMemory,
    pub update_mode: UpdateMode,
    grad_accum: Vec<f64>,
    /// Frames observed so far (one per stored transition).
    frame: u64,
    frames_since_train: u64,
    train_steps: u64,
    /// Session frame budget, used by linear schedules (PER beta).
    max_frame: u64,
    act_rng: ChaCha8Rng,
    pub(super) train_rng: ChaCha8Rng,
    last_metrics: Option<TrainMetrics>,
}

impl Agent {
    /// Build nets and memory for the spec against the environment's
    /// observation/action dimensions (shapes are checked here).
    pub fn build(
        spec: &AgentSpec,
        obs_dim: usize,
        action_space: ActionSpace,
        num_lanes: usize,
        max_frame: u64,
        seed: u64,
    ) -> Result<Agent> {
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_stream(seed, 0x11));
        let act_rng = ChaCha8Rng::seed_from_u64(derive_stream(seed, 0x22));
        let train_rng = ChaCha8Rng::seed_from_u64(derive_stream(seed, 0x33));
        let name = spec.algorithm.name;

        if let Some(heads) = &spec.net.out_heads {
            let expect = expected_policy_heads(name, action_space);
            let got: Vec<usize> = heads.iter().map(|h| h.width).collect();
            if got != expect {
                return Err(Error::shape("net out_heads", &expect, &got));
            }
        }

        let nets = match name {
            AlgorithmName::Reinforce => {
                let heads = policy_heads(action_space);
                AgentNets::Policy(Network::new(
                    spec.net.with_heads(heads),
                    obs_dim,
                    &mut init_rng,
                    false,
                ))
            }
            AlgorithmName::A2cNstep | AlgorithmName::A2cGae | AlgorithmName::Ppo => {
                let mut heads = policy_heads(action_space);
                heads.push(HeadSpec::identity(1)); // value head
                AgentNets::ActorCritic(Network::new(
                    spec.net.with_heads(heads),
                    obs_dim,
                    &mut init_rng,
                    false,
                ))
            }
            AlgorithmName::Dqn | AlgorithmName::DdqnPer => {
                let n = discrete_actions(action_space)?;
                AgentNets::QLearner(Network::new(
                    spec.net.with_heads(vec![HeadSpec::identity(n)]),
                    obs_dim,
                    &mut init_rng,
                    true,
                ))
            }
            AlgorithmName::Sac => match action_space {
                ActionSpace::Discrete(n) => {
                    let policy = Network::new(
                        spec.net.with_heads(vec![HeadSpec::identity(n)]),
                        obs_dim,
                        &mut init_rng,
                        false,
                    );
                    let q_spec = spec.net.with_heads(vec![HeadSpec::identity(n)]);
                    let q1 = Network::new(q_spec.clone(), obs_dim, &mut init_rng, true);
                    let q2 = Network::new(q_spec, obs_dim, &mut init_rng, true);
                    AgentNets::Sac { policy, q1, q2 }
                }
                ActionSpace::Continuous(d) => {
                    let policy = Network::new(
                        spec.net
                            .with_heads(vec![HeadSpec::identity(d), HeadSpec::identity(d)]),
                        obs_dim,
                        &mut init_rng,
                        false,
                    );
                    let q_spec = spec.net.with_heads(vec![HeadSpec::identity(1)]);
                    let q1 = Network::new(q_spec.clone(), obs_dim + d, &mut init_rng, true);
                    let q2 = Network::new(q_spec, obs_dim + d, &mut init_rng, true);
                    AgentNets::Sac { policy, q1, q2 }
                }
            },
        };

        let memory = match spec.memory.name {
            MemoryKind::Onpolicy => AgentMemory::OnPolicy(OnPolicyMemory::new(num_lanes)),
            MemoryKind::Replay => AgentMemory::Replay(ReplayMemory::new(&spec.memory)),
            MemoryKind::PrioritizedReplay => AgentMemory::Per(PerMemory::new(&spec.memory)),
        };

        Ok(Agent {
            spec: spec.clone(),
            obs_dim,
            action_space,
            nets,
            memory,
            update_mode: UpdateMode::Local,
            grad_accum: Vec::new(),
            frame: 0,
            frames_since_train: 0,
            train_steps: 0,
            max_frame,
            act_rng,
            train_rng,
            last_metrics: None,
        })
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn last_metrics(&self) -> Option<TrainMetrics> {
        self.last_metrics
    }

    /// Current exploration rate (epsilon or Boltzmann temperature).
    pub fn explore_rate(&self) -> f64 {
        self.spec.algorithm.explore_spec.rate_at(self.frame)
    }

    fn beta(&self) -> f64 {
        let m = &self.spec.memory;
        let t = if self.max_frame == 0 {
            1.0
        } else {
            (self.frame as f64 / self.max_frame as f64).min(1.0)
        };
        m.per_beta_start + (m.per_beta_end - m.per_beta_start) * t
    }

    /// Select actions for a batch of states (one row per vector-env lane).
    pub fn act_batch(&mut self, states: &Tensor, mode: Mode) -> Result<Vec<ActOutput>> {
        if states.cols() != self.obs_dim {
            return Err(Error::shape(
                "act input",
                &[states.rows(), self.obs_dim],
                states.shape(),
            ));
        }
        match &self.nets {
            AgentNets::Policy(net) | AgentNets::ActorCritic(net) => {
                let outs = net.forward(states)?;
                let values: Option<&Tensor> = match &self.nets {
                    AgentNets::ActorCritic(_) => Some(outs.last().unwrap()),
                    _ => None,
                };
                match self.action_space {
                    ActionSpace::Discrete(_) => {
                        let dist = CategoricalParams::new(outs[0].clone());
                        let actions = match mode {
                            Mode::Train => dist.sample(&mut self.act_rng),
                            Mode::Eval => (0..states.rows()).map(|r| dist.argmax_row(r)).collect(),
                        };
                        let log_probs = dist.log_prob(&actions)?;
                        Ok((0..states.rows())
                            .map(|r| ActOutput {
                                action: Action::Discrete(actions[r]),
                                extras: Extras {
                                    log_prob: log_probs[r],
                                    value: values.map_or(0.0, |v| v.at(r, 0)),
                                    pre_squash: None,
                                },
                            })
                            .collect())
                    }
                    ActionSpace::Continuous(_) => {
                        let dist = TanhGaussianParams::new(outs[0].clone(), outs[1].clone());
                        let (a, u) = match mode {
                            Mode::Train => dist.sample(&mut self.act_rng),
                            Mode::Eval => (dist.mean_action(), dist.mean.clone()),
                        };
                        let log_probs = dist.log_prob(&u)?;
                        Ok((0..states.rows())
                            .map(|r| ActOutput {
                                action: Action::Continuous(a.row(r).to_vec()),
                                extras: Extras {
                                    log_prob: log_probs[r],
                                    value: values.map_or(0.0, |v| v.at(r, 0)),
                                    pre_squash: Some(u.row(r).to_vec()),
                                },
                            })
                            .collect())
                    }
                }
            }
            AgentNets::QLearner(net) => {
                let q = net.forward(states)?.remove(0);
                let mut res = Vec::with_capacity(states.rows());
                for r in 0..states.rows() {
                    let a = match mode {
                        Mode::Eval => argmax(q.row(r)),
                        Mode::Train => match self.spec.algorithm.explore_spec {
                            ExploreSpec::EpsilonGreedy { .. } => {
                                epsilon_greedy(q.row(r), self.explore_rate(), &mut self.act_rng)
                            }
                            ExploreSpec::Boltzmann { .. } => {
                                boltzmann(q.row(r), self.explore_rate(), &mut self.act_rng)
                            }
                        },
                    };
                    res.push(ActOutput {
                        action: Action::Discrete(a),
                        extras: Extras {
                            log_prob: 0.0,
                            value: q.at(r, a),
                            pre_squash: None,
                        },
                    });
                }
                Ok(res)
            }
            AgentNets::Sac { policy, .. } => match self.action_space {
                ActionSpace::Discrete(_) => {
                    let logits = policy.forward(states)?.remove(0);
                    let actions: Vec<usize> = match mode {
                        Mode::Eval => (0..states.rows()).map(|r| argmax(logits.row(r))).collect(),
                        Mode::Train => {
                            // hard (straight-through) sample when acting
                            let dist = GumbelSoftmaxParams::new(
                                logits,
                                self.spec.algorithm.gumbel_tau,
                            );
                            let one_hot = dist.sample(&mut self.act_rng, true);
                            (0..states.rows()).map(|r| argmax(one_hot.row(r))).collect()
                        }
                    };
                    Ok(actions
                        .into_iter()
                        .map(|a| ActOutput {
                            action: Action::Discrete(a),
                            extras: Extras::default(),
                        })
                        .collect())
                }
                ActionSpace::Continuous(_) => {
                    let outs = policy.forward(states)?;
                    let dist = TanhGaussianParams::new(outs[0].clone(), outs[1].clone());
                    let (a, u) = match mode {
                        Mode::Train => dist.sample(&mut self.act_rng),
                        Mode::Eval => (dist.mean_action(), dist.mean.clone()),
                    };
                    Ok((0..states.rows())
                        .map(|r| ActOutput {
                            action: Action::Continuous(a.row(r).to_vec()),
                            extras: Extras {
                                log_prob: 0.0,
                                value: 0.0,
                                pre_squash: Some(u.row(r).to_vec()),
                            },
                        })
                        .collect())
                }
            },
        }
    }

    pub fn act_one(&mut self, state: &[f64], mode: Mode) -> Result<ActOutput> {
        Ok(self.act_batch(&Tensor::from_row(state), mode)?.remove(0))
    }

    /// Store a transition and advance the frame counter.
    pub fn observe(&mut self, lane: usize, transition: Transition) {
        self.frame += 1;
        self.frames_since_train += 1;
        match &mut self.memory {
            AgentMemory::OnPolicy(m) => m.add(lane, transition),
            AgentMemory::Replay(m) => m.add(transition),
            AgentMemory::Per(m) => m.add(transition),
        }
    }

    /// Whether the training schedule makes a step due right now.
    pub fn train_due(&self) -> bool {
        let alg = &self.spec.algorithm;
        if alg.name.is_on_policy() {
            let freq_met = self.frames_since_train >= alg.training_frequency;
            if alg.name == AlgorithmName::Reinforce {
                // full-episode horizons: drain only at an episode boundary
                freq_met && self.on_policy_lanes_ended()
            } else {
                freq_met && self.memory_len() > 0
            }
        } else {
            self.frame >= alg.training_start
                && self.frames_since_train >= alg.training_frequency
                && self.memory_len() >= self.spec.memory.batch_size
        }
    }

    /// Run a training step if the schedule says one is due.
    pub fn train_if_due(&mut self) -> Result<Option<TrainMetrics>> {
        if !self.train_due() {
            return Ok(None);
        }
        self.frames_since_train = 0;
        let metrics = self.train()?;
        if !metrics.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                frame: self.frame,
                detail: format!(
                    "policy {:.6e} value {:.6e}",
                    metrics.loss_policy, metrics.loss_value
                ),
            });
        }
        self.last_metrics = Some(metrics);
        Ok(Some(metrics))
    }

    fn memory_len(&self) -> usize {
        match &self.memory {
            AgentMemory::OnPolicy(m) => m.len(),
            AgentMemory::Replay(m) => m.len(),
            AgentMemory::Per(m) => m.len(),
        }
    }

    fn on_policy_lanes_ended(&self) -> bool {
        match &self.memory {
            AgentMemory::OnPolicy(m) => {
                !m.is_empty()
                    && m.lanes()
                        .iter()
                        .all(|l| l.last().map(|t| t.done).unwrap_or(false))
            }
            _ => false,
        }
    }

    fn train(&mut self) -> Result<TrainMetrics> {
        self.train_steps += 1;
        match self.spec.algorithm.name {
            AlgorithmName::Reinforce => self.train_reinforce(),
            AlgorithmName::A2cNstep | AlgorithmName::A2cGae => self.train_actor_critic(),
            AlgorithmName::Ppo => self.train_ppo(),
            AlgorithmName::Dqn | AlgorithmName::DdqnPer => self.train_q_learner(),
            AlgorithmName::Sac => match self.action_space {
                ActionSpace::Continuous(_) => self.train_sac_continuous(),
                ActionSpace::Discrete(_) => self.train_sac_discrete(),
            },
        }
    }

    // ---- parameter exchange seams used by the executor ----

    fn trainable_nets(&self) -> Vec<&Network> {
        match &self.nets {
            AgentNets::Policy(n) | AgentNets::ActorCritic(n) | AgentNets::QLearner(n) => vec![n],
            AgentNets::Sac { policy, q1, q2 } => vec![policy, q1, q2],
        }
    }

    fn trainable_nets_mut(&mut self) -> Vec<&mut Network> {
        match &mut self.nets {
            AgentNets::Policy(n) | AgentNets::ActorCritic(n) | AgentNets::QLearner(n) => vec![n],
            AgentNets::Sac { policy, q1, q2 } => vec![policy, q1, q2],
        }
    }

    /// All trainable (online) parameters, flattened in net order.
    pub fn export_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for n in self.trainable_nets() {
            out.extend(n.params.to_flat());
        }
        out
    }

    pub fn import_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        for n in self.trainable_nets_mut() {
            let len = n.params.flat_len();
            n.params.load_flat(&flat[off..off + len]);
            off += len;
        }
        debug_assert_eq!(off, flat.len());
    }

    /// Accumulated clipped gradients since the last take, flattened in the
    /// same order as [`export_params`]. Only filled in Accumulate mode.
    pub fn take_accumulated_grads(&mut self) -> Vec<f64> {
        let len = self.export_params().len();
        let mut out = std::mem::take(&mut self.grad_accum);
        out.resize(len, 0.0);
        out
    }

    /// Write one checkpoint (manifest + blob) per trainable net.
    pub fn save_checkpoint(&self, dir: &std::path::Path, prefix: &str) -> Result<()> {
        for (k, net) in self.trainable_nets().iter().enumerate() {
            crate::netcore::save_params(
                &dir.join(format!("{prefix}_net{k}")),
                &net.spec,
                &net.params,
            )?;
        }
        Ok(())
    }

    /// Clip, then either step the local optimizer or accumulate for a
    /// central store. `which` indexes the trainable-net order.
    pub(super) fn step_net(&mut self, which: usize, grads: &mut Params) {
        let lens: Vec<usize> = self
            .trainable_nets()
            .iter()
            .map(|n| n.params.flat_len())
            .collect();
        let total: usize = lens.iter().sum();
        let offset: usize = lens[..which].iter().sum();
        let update_mode = self.update_mode;
        let grad_accum = &mut self.grad_accum;
        let mut nets = match &mut self.nets {
            AgentNets::Policy(n) | AgentNets::ActorCritic(n) | AgentNets::QLearner(n) => vec![n],
            AgentNets::Sac { policy, q1, q2 } => vec![policy, q1, q2],
        };
        let net = nets.swap_remove(which);
        if let Some(max) = net.spec.grad_clip_norm {
            clip_grad_norm(grads, max);
        }
        match update_mode {
            UpdateMode::Local => {
                optimizer_step(&mut net.params, grads, &mut net.opt, &net.spec);
            }
            UpdateMode::Accumulate => {
                if grad_accum.is_empty() {
                    grad_accum.resize(total, 0.0);
                }
                for (i, g) in grads.to_flat().iter().enumerate() {
                    grad_accum[offset + i] += g;
                }
            }
        }
    }

    /// Target update per the net spec: polyak every training step,
    /// replace every `update_frequency` training steps. In Accumulate mode
    /// online params only move on a store import, so the update is
    /// deferred to [`Agent::apply_target_updates`] after the pull.
    pub(super) fn maybe_update_targets(&mut self) -> Result<()> {
        if self.update_mode == UpdateMode::Accumulate {
            return Ok(());
        }
        self.apply_target_updates()
    }

    /// Run the per-net target update rule against the current online
    /// parameters.
    pub fn apply_target_updates(&mut self) -> Result<()> {
        let step = self.train_steps;
        for net in self.trainable_nets_mut() {
            if net.target.is_none() {
                continue;
            }
            let due = match net.spec.update {
                crate::netcore::UpdateKind::Polyak => true,
                crate::netcore::UpdateKind::Replace => {
                    step % net.spec.update_frequency.max(1) == 0
                }
            };
            if due {
                let target = net.target.as_mut().unwrap();
                update_target(target, &net.params, &net.spec)?;
            }
        }
        Ok(())
    }

    // ---- on-policy trainers ----

    /// Per-lane forward over states plus the bootstrap next-state, with the
    /// pre-update network. Returns (lane tensors, values per lane with one
    /// bootstrap entry, policy outputs for the first T rows per lane).
    fn lane_values(
        net: &Network,
        lanes: &[Vec<Transition>],
    ) -> Result<Vec<(Tensor, Vec<f64>, Vec<Tensor>)>> {
        let mut out = Vec::with_capacity(lanes.len());
        for lane in lanes {
            if lane.is_empty() {
                continue;
            }
            let mut rows: Vec<Vec<f64>> = lane.iter().map(|t| t.state.clone()).collect();
            rows.push(lane.last().unwrap().next_state.clone());
            let input = Tensor::from_rows(&rows);
            let outs = net.forward(&input)?;
            let value_head = outs.last().unwrap();
            let values: Vec<f64> = (0..value_head.rows()).map(|r| value_head.at(r, 0)).collect();
            out.push((input, values, outs));
        }
        Ok(out)
    }

    fn train_reinforce(&mut self) -> Result<TrainMetrics> {
        let lanes = match &mut self.memory {
            AgentMemory::OnPolicy(m) => m.drain()?,
            _ => unreachable!("reinforce uses on-policy memory"),
        };
        let gamma = self.spec.algorithm.gamma;
        let entropy_coef = self.spec.algorithm.entropy_coef;
        let mut states = Vec::new();
        let mut actions = Vec::new();
        let mut returns = Vec::new();
        for lane in &lanes {
            let rewards: Vec<f64> = lane.iter().map(|t| t.reward).collect();
            let dones: Vec<bool> = lane.iter().map(|t| t.done).collect();
            returns.extend(calc_mc_returns(&rewards, &dones, gamma));
            for t in lane {
                states.push(t.state.clone());
                actions.push(t.action.clone());
            }
        }
        let targets = if self.spec.algorithm.standardize_adv && returns.len() >= 2 {
            standardize_advantages(&returns)?
        } else {
            returns
        };
        let input = Tensor::from_rows(&states);
        let net = match &self.nets {
            AgentNets::Policy(n) => n,
            _ => unreachable!(),
        };
        let cache = forward_cached(&net.params, &net.spec, &input)?;
        let n = targets.len() as f64;
        let pol_weights: Vec<f64> = targets.iter().map(|r| -r / n).collect();
        let (loss_policy, entropy, head_grads) = match self.action_space {
            ActionSpace::Discrete(_) => {
                let dist = CategoricalParams::new(cache.head_out[0].clone());
                let acts: Vec<usize> = actions.iter().map(|a| a.discrete()).collect();
                let log_probs = dist.log_prob(&acts)?;
                let ent = dist.entropy();
                let loss =
                    super::losses::reinforce_loss(&log_probs, &targets, &ent, entropy_coef)?;
                let seed =
                    categorical_grad_seed(&cache.head_out[0], &acts, &pol_weights, -entropy_coef / n);
                (loss, mean(&ent), vec![seed])
            }
            ActionSpace::Continuous(_) => {
                let raw_log_std = &cache.head_out[1];
                let dist = TanhGaussianParams::new(cache.head_out[0].clone(), raw_log_std.clone());
                let u_rows: Vec<Vec<f64>> = lanes
                    .iter()
                    .flatten()
                    .map(|t| t.extras.as_ref().unwrap().pre_squash.clone().unwrap())
                    .collect();
                let u = Tensor::from_rows(&u_rows);
                let log_probs = dist.log_prob(&u)?;
                let ent = dist.entropy_proxy();
                let loss =
                    super::losses::reinforce_loss(&log_probs, &targets, &ent, entropy_coef)?;
                let (dm, ds) = tanh_gaussian_grad_seed(
                    &cache.head_out[0],
                    raw_log_std,
                    &u,
                    &pol_weights,
                    -entropy_coef / n,
                );
                (loss, mean(&ent), vec![dm, ds])
            }
        };
        let (mut grads, _) = {
            let net = match &self.nets {
                AgentNets::Policy(n) => n,
                _ => unreachable!(),
            };
            backward_from_cache(&net.params, &net.spec, &input, &cache, &head_grads)?
        };
        self.step_net(0, &mut grads);
        Ok(TrainMetrics {
            frame: self.frame,
            loss: loss_policy,
            loss_policy,
            loss_value: 0.0,
            entropy,
            mean_value: 0.0,
            explore_rate: 0.0,
        })
    }

    /// Shared advantage/target computation for the actor-critic family.
    /// Uses pre-update values; the PPO old-log-prob snapshot comes from the
    /// same pre-update forward.
    fn onpolicy_targets(
        &self,
        lanes: &[Vec<Transition>],
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let net = match &self.nets {
            AgentNets::ActorCritic(n) => n,
            _ => unreachable!("actor-critic family"),
        };
        let alg = &self.spec.algorithm;
        let mut states = Vec::new();
        let mut advantages = Vec::new();
        let mut v_targets = Vec::new();
        let mut old_log_probs = Vec::new();
        for (lane, (input, values, outs)) in lanes
            .iter()
            .filter(|l| !l.is_empty())
            .zip(Self::lane_values(net, lanes)?)
        {
            let t_len = lane.len();
            let rewards: Vec<f64> = lane.iter().map(|t| t.reward).collect();
            let dones: Vec<bool> = lane.iter().map(|t| t.done).collect();
            let (adv, vt) = match alg.name {
                AlgorithmName::A2cGae | AlgorithmName::Ppo => {
                    calc_gae(&rewards, &dones, &values, alg.gamma, alg.lam)?
                }
                AlgorithmName::A2cNstep => {
                    let ret = calc_nstep_returns(
                        &rewards,
                        &dones,
                        &values,
                        alg.gamma,
                        alg.num_step_returns,
                    )?;
                    let adv: Vec<f64> =
                        ret.iter().zip(&values[..t_len]).map(|(r, v)| r - v).collect();
                    (adv, ret)
                }
                _ => unreachable!(),
            };
            advantages.extend(adv);
            v_targets.extend(vt);
            for r in 0..t_len {
                states.push(input.row(r).to_vec());
            }
            // old log-probs from the pre-update policy outputs
            match self.action_space {
                ActionSpace::Discrete(_) => {
                    let logits_rows: Vec<Vec<f64>> =
                        (0..t_len).map(|r| outs[0].row(r).to_vec()).collect();
                    let dist = CategoricalParams::new(Tensor::from_rows(&logits_rows));
                    let acts: Vec<usize> = lane.iter().map(|t| t.action.discrete()).collect();
                    old_log_probs.extend(dist.log_prob(&acts)?);
                }
                ActionSpace::Continuous(_) => {
                    let mean_rows: Vec<Vec<f64>> =
                        (0..t_len).map(|r| outs[0].row(r).to_vec()).collect();
                    let ls_rows: Vec<Vec<f64>> =
                        (0..t_len).map(|r| outs[1].row(r).to_vec()).collect();
                    let dist = TanhGaussianParams::new(
                        Tensor::from_rows(&mean_rows),
                        Tensor::from_rows(&ls_rows),
                    );
                    let u_rows: Vec<Vec<f64>> = lane
                        .iter()
                        .map(|t| t.extras.as_ref().unwrap().pre_squash.clone().unwrap())
                        .collect();
                    old_log_probs.extend(dist.log_prob(&Tensor::from_rows(&u_rows))?);
                }
            }
        }
        let advantages = if alg.standardize_adv && advantages.len() >= 2 {
            standardize_advantages(&advantages)?
        } else {
            advantages
        };
        Ok((states, advantages, v_targets, old_log_probs))
    }

    fn train_actor_critic(&mut self) -> Result<TrainMetrics> {
        let lanes = match &mut self.memory {
            AgentMemory::OnPolicy(m) => m.drain()?,
            _ => unreachable!(),
        };
        let (states, advantages, v_targets, _) = self.onpolicy_targets(&lanes)?;
        let actions: Vec<Action> = lanes.iter().flatten().map(|t| t.action.clone()).collect();
        let u_rows: Vec<Option<Vec<f64>>> = lanes
            .iter()
            .flatten()
            .map(|t| t.extras.as_ref().and_then(|e| e.pre_squash.clone()))
            .collect();
        let alg = self.spec.algorithm.clone();
        let n = advantages.len() as f64;
        let pol_weights: Vec<f64> = advantages.iter().map(|a| -a / n).collect();
        let metrics = self.actor_critic_step(
            &states,
            &actions,
            &u_rows,
            &pol_weights,
            &advantages,
            &v_targets,
            alg.val_loss_coef,
            alg.entropy_coef,
            None,
        )?;
        Ok(metrics)
    }

    fn train_ppo(&mut self) -> Result<TrainMetrics> {
        let lanes = match &mut self.memory {
            AgentMemory::OnPolicy(m) => m.drain()?,
            _ => unreachable!(),
        };
        // GAE once with pre-update values; old log-probs snapshotted from
        // the pre-update policy and held fixed across epochs.
        let (states, advantages, v_targets, old_log_probs) = self.onpolicy_targets(&lanes)?;
        let actions: Vec<Action> = lanes.iter().flatten().map(|t| t.action.clone()).collect();
        let u_rows: Vec<Option<Vec<f64>>> = lanes
            .iter()
            .flatten()
            .map(|t| t.extras.as_ref().and_then(|e| e.pre_squash.clone()))
            .collect();
        let alg = self.spec.algorithm.clone();
        let n_total = states.len();
        let n_mb = alg.ppo_minibatches.max(1);
        let mut last = TrainMetrics::default();
        let mut first_ratio: Option<f64> = None;
        for _epoch in 0..alg.ppo_epochs.max(1) {
            let mut order: Vec<usize> = (0..n_total).collect();
            if n_mb > 1 {
                // Fisher-Yates with the training rng; acting streams are
                // untouched so rollouts stay aligned across variants
                for i in (1..order.len()).rev() {
                    let j = rand::Rng::random_range(&mut self.train_rng, 0..=i);
                    order.swap(i, j);
                }
            }
            let chunk = n_total.div_ceil(n_mb);
            for mb in order.chunks(chunk) {
                let mb_states: Vec<Vec<f64>> = mb.iter().map(|&i| states[i].clone()).collect();
                let mb_actions: Vec<Action> = mb.iter().map(|&i| actions[i].clone()).collect();
                let mb_u: Vec<Option<Vec<f64>>> = mb.iter().map(|&i| u_rows[i].clone()).collect();
                let mb_adv: Vec<f64> = mb.iter().map(|&i| advantages[i]).collect();
                let mb_vt: Vec<f64> = mb.iter().map(|&i| v_targets[i]).collect();
                let mb_old: Vec<f64> = mb.iter().map(|&i| old_log_probs[i]).collect();
                last = self.actor_critic_step(
                    &mb_states,
                    &mb_actions,
                    &mb_u,
                    &[],
                    &mb_adv,
                    &mb_vt,
                    alg.val_loss_coef,
                    alg.entropy_coef,
                    Some((&mb_old, alg.clip_eps)),
                )?;
                first_ratio.get_or_insert(last.mean_ratio);
            }
        }
        last.mean_ratio = first_ratio.unwrap_or(1.0);
        Ok(last)
    }

    /// One combined policy+value gradient step on the shared net. With
    /// `ppo` set, the policy term is the clipped surrogate against the old
    /// log-probs; otherwise `pol_weights` already carries -A/n.
    #[allow(clippy::too_many_arguments)]
    fn actor_critic_step(
        &mut self,
        states: &[Vec<f64>],
        actions: &[Action],
        u_rows: &[Option<Vec<f64>>],
        pol_weights: &[f64],
        advantages: &[f64],
        v_targets: &[f64],
        val_loss_coef: f64,
        entropy_coef: f64,
        ppo: Option<(&[f64], f64)>,
    ) -> Result<TrainMetrics> {
        let input = Tensor::from_rows(states);
        let net = match &self.nets {
            AgentNets::ActorCritic(n) => n,
            _ => unreachable!(),
        };
        let cache = forward_cached(&net.params, &net.spec, &input)?;
        let n = states.len() as f64;
        let value_head_idx = cache.head_out.len() - 1;
        let v_pred: Vec<f64> = (0..states.len())
            .map(|r| cache.head_out[value_head_idx].at(r, 0))
            .collect();

        // policy log-probs and entropy under the current parameters
        let (log_probs, entropy_vec) = match self.action_space {
            ActionSpace::Discrete(_) => {
                let dist = CategoricalParams::new(cache.head_out[0].clone());
                let acts: Vec<usize> = actions.iter().map(|a| a.discrete()).collect();
                (dist.log_prob(&acts)?, dist.entropy())
            }
            ActionSpace::Continuous(_) => {
                let dist = TanhGaussianParams::new(
                    cache.head_out[0].clone(),
                    cache.head_out[1].clone(),
                );
                let u = Tensor::from_rows(
                    &u_rows
                        .iter()
                        .map(|u| u.clone().expect("continuous action needs pre-squash"))
                        .collect::<Vec<_>>(),
                );
                (dist.log_prob(&u)?, dist.entropy_proxy())
            }
        };

        let (loss_policy, weights, mean_ratio) = match ppo {
            Some((old, clip_eps)) => {
                let loss = super::losses::ppo_policy_loss(&log_probs, old, advantages, clip_eps)?;
                let ratio = log_probs
                    .iter()
                    .zip(old)
                    .map(|(lp, o)| (lp - o).exp())
                    .sum::<f64>()
                    / n;
                (loss, ppo_policy_grad(&log_probs, old, advantages, clip_eps), ratio)
            }
            None => {
                let loss = -log_probs
                    .iter()
                    .zip(advantages)
                    .map(|(lp, a)| lp * a)
                    .sum::<f64>()
                    / n;
                (loss, pol_weights.to_vec(), 1.0)
            }
        };

        let loss_value = v_pred
            .iter()
            .zip(v_targets)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let mean_entropy = mean(&entropy_vec);
        let loss = loss_policy + val_loss_coef * loss_value - entropy_coef * mean_entropy;

        // head gradient seeds
        let mut head_grads: Vec<Tensor> = match self.action_space {
            ActionSpace::Discrete(_) => {
                let acts: Vec<usize> = actions.iter().map(|a| a.discrete()).collect();
                vec![categorical_grad_seed(
                    &cache.head_out[0],
                    &acts,
                    &weights,
                    -entropy_coef / n,
                )]
            }
            ActionSpace::Continuous(_) => {
                let u = Tensor::from_rows(
                    &u_rows
                        .iter()
                        .map(|u| u.clone().unwrap())
                        .collect::<Vec<_>>(),
                );
                let (dm, ds) = tanh_gaussian_grad_seed(
                    &cache.head_out[0],
                    &cache.head_out[1],
                    &u,
                    &weights,
                    -entropy_coef / n,
                );
                vec![dm, ds]
            }
        };
        let mut v_seed = Tensor::zeros(vec![states.len(), 1]);
        for r in 0..states.len() {
            v_seed.row_mut(r)[0] = val_loss_coef * 2.0 * (v_pred[r] - v_targets[r]) / n;
        }
        head_grads.push(v_seed);

        let (mut grads, _) = {
            let net = match &self.nets {
                AgentNets::ActorCritic(n) => n,
                _ => unreachable!(),
            };
            backward_from_cache(&net.params, &net.spec, &input, &cache, &head_grads)?
        };
        self.step_net(0, &mut grads);
        Ok(TrainMetrics {
            frame: self.frame,
            loss,
            loss_policy,
            loss_value,
            entropy: mean_entropy,
            mean_value: mean(&v_pred),
            explore_rate: 0.0,
            mean_ratio,
        })
    }

    /// Beta for importance weights, annealed over the session budget.
    pub(super) fn per_beta(&self) -> f64 {
        self.beta()
    }
}

fn expected_policy_heads(name: AlgorithmName, action_space: ActionSpace) -> Vec<usize> {
    match (name, action_space) {
        (AlgorithmName::Reinforce, ActionSpace::Discrete(n)) => vec![n],
        (AlgorithmName::Reinforce, ActionSpace::Continuous(d)) => vec![d, d],
        (
            AlgorithmName::A2cNstep | AlgorithmName::A2cGae | AlgorithmName::Ppo,
            ActionSpace::Discrete(n),
        ) => vec![n, 1],
        (
            AlgorithmName::A2cNstep | AlgorithmName::A2cGae | AlgorithmName::Ppo,
            ActionSpace::Continuous(d),
        ) => vec![d, d, 1],
        (AlgorithmName::Dqn | AlgorithmName::DdqnPer, ActionSpace::Discrete(n)) => vec![n],
        (AlgorithmName::Dqn | AlgorithmName::DdqnPer, ActionSpace::Continuous(_)) => vec![],
        (AlgorithmName::Sac, ActionSpace::Discrete(n)) => vec![n],
        (AlgorithmName::Sac, ActionSpace::Continuous(d)) => vec![d, d],
    }
}

fn discrete_actions(action_space: ActionSpace) -> Result<usize> {
    match action_space {
        ActionSpace::Discrete(n) => Ok(n),
        ActionSpace::Continuous(_) => Err(Error::Run(
            "algorithm requires a discrete action space".into(),
        )),
    }
}

fn policy_heads(action_space: ActionSpace) -> Vec<HeadSpec> {
    match action_space {
        ActionSpace::Discrete(n) => vec![HeadSpec::identity(n)],
        ActionSpace::Continuous(d) => vec![HeadSpec::identity(d), HeadSpec::identity(d)],
    }
}

pub(super) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}
