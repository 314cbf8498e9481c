//! Fast self-check suites runnable from the CLI: gradient checks against
//! finite differences, return-computation oracles, prioritized-replay
//! statistics, Gumbel-Softmax marginals, and a sum-tree audit.

pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::algorithms::{
    a2c_loss, calc_gae, calc_nstep_returns, categorical_grad_seed, ppo_policy_grad,
    ppo_policy_loss, reinforce_loss, sac_discrete_policy_grad, sac_gaussian_policy_grad,
};
use crate::distributions::{argmax, CategoricalParams, GumbelSoftmaxParams, TanhGaussianParams};
use crate::memory::{MemoryKind, MemorySpec, PerMemory, SampleIndex, SumTree, Transition};
use crate::netcore::{
    backward, forward, grad_check, init_params, Activation, HeadSpec, LossKind, NetSpec,
    OptimizerKind, Params, Tensor, UpdateKind,
};

/// Outcome of one suite: pass/fail plus the worst observed error.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub detail: String,
}

impl SuiteReport {
    fn new(name: &str, passed: bool, max_error: f64, detail: String) -> Self {
        SuiteReport {
            name: name.into(),
            passed,
            max_error,
            detail,
        }
    }
}

/// Deliberate defects injectable by tests to prove the suites catch them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Flip the sign of computed advantages inside the GAE suite.
    FlipGaeSign,
}

/// Run every suite at selftest scale (a couple of minutes at most).
pub fn run_all(fault: Option<Fault>) -> Vec<SuiteReport> {
    vec![
        suite_grad_check(25),
        suite_loss_grads(10),
        suite_gae_oracle(300, fault),
        suite_nstep_oracle(300),
        suite_sum_tree_audit(10_000),
        suite_per_sampling(100_000),
        suite_gumbel_marginals(100_000),
    ]
}

pub fn all_passed(reports: &[SuiteReport]) -> bool {
    reports.iter().all(|r| r.passed)
}

fn small_spec(hid: Vec<usize>, activation: Activation, heads: Vec<HeadSpec>) -> NetSpec {
    NetSpec {
        hid_layers: hid,
        activation,
        out_heads: Some(heads),
        optimizer: OptimizerKind::Sgd,
        lr: 0.01,
        adam_beta1: 0.9,
        adam_beta2: 0.999,
        adam_eps: 1e-8,
        grad_clip_norm: None,
        loss: LossKind::Mse,
        huber_delta: 1.0,
        polyak_tau: 0.005,
        update: UpdateKind::Replace,
        update_frequency: 1,
    }
}

fn random_input<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    // keep relu pre-activations away from kinks by avoiding tiny magnitudes
    Tensor::from_rows(
        &(0..rows)
            .map(|_| {
                (0..cols)
                    .map(|_| {
                        let v: f64 = rng.random_range(0.2..1.0);
                        if rng.random_range(0.0..1.0) < 0.5 {
                            -v
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect::<Vec<_>>(),
    )
}

/// Random-architecture probe-loss gradient checks (the netcore invariant).
pub fn suite_grad_check(n_nets: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAD);
    let mut worst: f64 = 0.0;
    for i in 0..n_nets {
        let act = if i % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::Relu
        };
        let in_dim = rng.random_range(2..6);
        let hid: Vec<usize> = (0..rng.random_range(1..3))
            .map(|_| rng.random_range(2..=16))
            .collect();
        let heads = vec![
            HeadSpec::identity(rng.random_range(1..4)),
            HeadSpec {
                width: rng.random_range(1..3),
                activation: crate::netcore::HeadActivation::Tanh,
            },
        ];
        let spec = small_spec(hid, act, heads.clone());
        let params = init_params(&spec, in_dim, &mut rng);
        let input = random_input(rng.random_range(1..4), in_dim, &mut rng);
        let probe: Vec<Tensor> = heads
            .iter()
            .map(|h| {
                Tensor::new(
                    vec![input.rows(), h.width],
                    (0..input.rows() * h.width)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        match grad_check(&spec, &params, &input, &probe, 1e-6) {
            Ok(err) => worst = worst.max(err),
            Err(e) => {
                return SuiteReport::new("grad_check", false, f64::INFINITY, e.to_string())
            }
        }
    }
    let passed = worst < 1e-5;
    SuiteReport::new(
        "grad_check",
        passed,
        worst,
        format!("{n_nets} random nets, tolerance 1e-5"),
    )
}

/// Relative error of analytic vs central-difference gradients over all
/// parameters of `params`, where `loss_fn` recomputes the scalar loss.
fn fd_check(
    params: &Params,
    analytic: &Params,
    loss_fn: &dyn Fn(&Params) -> f64,
    h: f64,
) -> f64 {
    let mut probe = params.clone();
    let n_arrays = params.arrays().count();
    let mut worst: f64 = 0.0;
    for ai in 0..n_arrays {
        let len = params.arrays().nth(ai).unwrap().len();
        for k in 0..len {
            let orig = probe.arrays().nth(ai).unwrap()[k];
            probe.arrays_mut().nth(ai).unwrap()[k] = orig + h;
            let up = loss_fn(&probe);
            probe.arrays_mut().nth(ai).unwrap()[k] = orig - h;
            let down = loss_fn(&probe);
            probe.arrays_mut().nth(ai).unwrap()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.arrays().nth(ai).unwrap()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

/// Finite-difference checks of every training loss's parameter gradient:
/// REINFORCE, A2C, PPO, DQN (mse and huber), SAC policy and Q in both
/// action spaces. Returns the worst relative error observed.
pub fn suite_loss_grads(n_per_loss: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF);
    let mut worst: f64 = 0.0;
    let mut worst_name = "";
    for i in 0..n_per_loss {
        let checks: Vec<(&str, f64)> = vec![
            ("reinforce", check_reinforce_grad(&mut rng)),
            ("a2c", check_a2c_grad(&mut rng)),
            ("ppo", check_ppo_grad(&mut rng)),
            ("dqn_mse", check_dqn_grad(&mut rng, LossKind::Mse)),
            ("dqn_huber", check_dqn_grad(&mut rng, LossKind::Huber)),
            ("sac_q", check_sac_q_grad(&mut rng)),
            ("sac_policy_continuous", check_sac_policy_cont_grad(&mut rng)),
            ("sac_policy_discrete", check_sac_policy_disc_grad(&mut rng)),
        ];
        for (name, err) in checks {
            if err > worst {
                worst = err;
                worst_name = name;
            }
        }
        let _ = i;
    }
    let passed = worst < 1e-5;
    SuiteReport::new(
        "loss_grads",
        passed,
        worst,
        format!("{n_per_loss} nets per loss, worst in '{worst_name}', tolerance 1e-5"),
    )
}

fn check_reinforce_grad(rng: &mut ChaCha8Rng) -> f64 {
    let spec = small_spec(vec![6], Activation::Tanh, vec![HeadSpec::identity(3)]);
    let params = init_params(&spec, 3, rng);
    let input = random_input(5, 3, rng);
    let actions: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
    let returns: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
    let coef = 0.01;
    let n = 5.0;
    let loss_fn = |p: &Params| -> f64 {
        let logits = forward(p, &spec, &input).unwrap().remove(0);
        let dist = CategoricalParams::new(logits);
        let lp = dist.log_prob(&actions).unwrap();
        let ent = dist.entropy();
        reinforce_loss(&lp, &returns, &ent, coef).unwrap()
    };
    let logits = forward(&params, &spec, &input).unwrap().remove(0);
    let weights: Vec<f64> = returns.iter().map(|r| -r / n).collect();
    let seed = categorical_grad_seed(&logits, &actions, &weights, -coef / n);
    let (analytic, _) = backward(&params, &spec, &input, &[seed]).unwrap();
    fd_check(&params, &analytic, &loss_fn, 1e-6)
}

fn check_a2c_grad(rng: &mut ChaCha8Rng) -> f64 {
    let spec = small_spec(
        vec![8],
        Activation::Tanh,
        vec![HeadSpec::identity(3), HeadSpec::identity(1)],
    );
    let params = init_params(&spec, 4, rng);
    let input = random_input(6, 4, rng);
    let actions: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
    let adv: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v_targets: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (c_v, c_e) = (0.5, 0.01);
    let n = 6.0;
    let loss_fn = |p: &Params| -> f64 {
        let outs = forward(p, &spec, &input).unwrap();
        let dist = CategoricalParams::new(outs[0].clone());
        let lp = dist.log_prob(&actions).unwrap();
        let ent = dist.entropy();
        let v: Vec<f64> = (0..6).map(|r| outs[1].at(r, 0)).collect();
        a2c_loss(&lp, &adv, &v, &v_targets, &ent, c_v, c_e).unwrap()
    };
    let outs = forward(&params, &spec, &input).unwrap();
    let weights: Vec<f64> = adv.iter().map(|a| -a / n).collect();
    let pol_seed = categorical_grad_seed(&outs[0], &actions, &weights, -c_e / n);
    let mut v_seed = Tensor::zeros(vec![6, 1]);
    for r in 0..6 {
        v_seed.row_mut(r)[0] = c_v * 2.0 * (outs[1].at(r, 0) - v_targets[r]) / n;
    }
    let (analytic, _) = backward(&params, &spec, &input, &[pol_seed, v_seed]).unwrap();
    fd_check(&params, &analytic, &loss_fn, 1e-6)
}

fn check_ppo_grad(rng: &mut ChaCha8Rng) -> f64 {
    let spec = small_spec(
        vec![8],
        Activation::Tanh,
        vec![HeadSpec::identity(3), HeadSpec::identity(1)],
    );
    let params = init_params(&spec, 4, rng);
    let input = random_input(6, 4, rng);
    let actions: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
    let adv: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v_targets: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (c_v, c_e, clip) = (0.5, 0.01, 0.2);
    let n = 6.0;
    // old log-probs near the current ones keep the ratio strictly inside
    // the clip interval, away from the min/clip kinks
    let outs0 = forward(&params, &spec, &input).unwrap();
    let old_lp: Vec<f64> = {
        let dist = CategoricalParams::new(outs0[0].clone());
        dist.log_prob(&actions)
            .unwrap()
            .iter()
            .map(|lp| lp + rng.random_range(-0.05..0.05))
            .collect()
    };
    let loss_fn = |p: &Params| -> f64 {
        let outs = forward(p, &spec, &input).unwrap();
        let dist = CategoricalParams::new(outs[0].clone());
        let lp = dist.log_prob(&actions).unwrap();
        let ent = dist.entropy();
        let v: Vec<f64> = (0..6).map(|r| outs[1].at(r, 0)).collect();
        let pol = ppo_policy_loss(&lp, &old_lp, &adv, clip).unwrap();
        let val: f64 = v
            .iter()
            .zip(&v_targets)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        pol + c_v * val - c_e * ent.iter().sum::<f64>() / n
    };
    let lp0 = CategoricalParams::new(outs0[0].clone())
        .log_prob(&actions)
        .unwrap();
    let weights = ppo_policy_grad(&lp0, &old_lp, &adv, clip);
    let pol_seed = categorical_grad_seed(&outs0[0], &actions, &weights, -c_e / n);
    let mut v_seed = Tensor::zeros(vec![6, 1]);
    for r in 0..6 {
        v_seed.row_mut(r)[0] = c_v * 2.0 * (outs0[1].at(r, 0) - v_targets[r]) / n;
    }
    let (analytic, _) = backward(&params, &spec, &input, &[pol_seed, v_seed]).unwrap();
    fd_check(&params, &analytic, &loss_fn, 1e-6)
}

fn check_dqn_grad(rng: &mut ChaCha8Rng, kind: LossKind) -> f64 {
    let spec = small_spec(vec![8], Activation::Tanh, vec![HeadSpec::identity(2)]);
    let params = init_params(&spec, 4, rng);
    let input = random_input(6, 4, rng);
    let actions: Vec<usize> = (0..6).map(|_| rng.random_range(0..2)).collect();
    // keep |pred - y| away from the huber delta kink at 1.0
    let q0 = forward(&params, &spec, &input).unwrap().remove(0);
    let y: Vec<f64> = (0..6)
        .map(|b| {
            let off = if rng.random_range(0.0..1.0) < 0.5 {
                rng.random_range(0.2..0.7)
            } else {
                rng.random_range(1.3..1.8)
            };
            q0.at(b, actions[b]) + if rng.random_range(0.0..1.0) < 0.5 { off } else { -off }
        })
        .collect();
    let loss_fn = |p: &Params| -> f64 {
        let q = forward(p, &spec, &input).unwrap().remove(0);
        let pred: Vec<f64> = (0..6).map(|b| q.at(b, actions[b])).collect();
        crate::netcore::loss_and_grad(kind, 1.0, &pred, &y, None).0
    };
    let pred0: Vec<f64> = (0..6).map(|b| q0.at(b, actions[b])).collect();
    let (_, dq) = crate::netcore::loss_and_grad(kind, 1.0, &pred0, &y, None);
    let mut seed = Tensor::zeros(vec![6, 2]);
    for b in 0..6 {
        seed.row_mut(b)[actions[b]] = dq[b];
    }
    let (analytic, _) = backward(&params, &spec, &input, &[seed]).unwrap();
    fd_check(&params, &analytic, &loss_fn, 1e-6)
}

fn check_sac_q_grad(rng: &mut ChaCha8Rng) -> f64 {
    let spec = small_spec(vec![8], Activation::Relu, vec![HeadSpec::identity(1)]);
    let params = init_params(&spec, 5, rng); // obs 3 + act 2
    let input = random_input(6, 5, rng);
    let y: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss_fn = |p: &Params| -> f64 {
        let q = forward(p, &spec, &input).unwrap().remove(0);
        let pred: Vec<f64> = (0..6).map(|b| q.at(b, 0)).collect();
        crate::netcore::loss_and_grad(LossKind::Mse, 1.0, &pred, &y, None).0
    };
    let q0 = forward(&params, &spec, &input).unwrap().remove(0);
    let pred0: Vec<f64> = (0..6).map(|b| q0.at(b, 0)).collect();
    let (_, dq) = crate::netcore::loss_and_grad(LossKind::Mse, 1.0, &pred0, &y, None);
    let mut seed = Tensor::zeros(vec![6, 1]);
    for b in 0..6 {
        seed.row_mut(b)[0] = dq[b];
    }
    let (analytic, _) = backward(&params, &spec, &input, &[seed]).unwrap();
    fd_check(&params, &analytic, &loss_fn, 1e-6)
}

fn check_sac_policy_cont_grad(rng: &mut ChaCha8Rng) -> f64 {
    let (obs, act) = (3usize, 2usize);
    let pol_spec = small_spec(
        vec![8],
        Activation::Tanh,
        vec![HeadSpec::identity(act), HeadSpec::identity(act)],
    );
    let q_spec = small_spec(vec![8], Activation::Tanh, vec![HeadSpec::identity(1)]);
    let pol = init_params(&pol_spec, obs, rng);
    let q1 = init_params(&q_spec, obs + act, rng);
    let q2 = init_params(&q_spec, obs + act, rng);
    let states = random_input(5, obs, rng);
    let xi: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..act).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let alpha = 0.2;
    let eval = |p: &Params| -> (f64, Tensor, Tensor, Tensor) {
        let outs = forward(p, &pol_spec, &states).unwrap();
        let (mean_t, raw_ls) = (outs[0].clone(), outs[1].clone());
        let dist = TanhGaussianParams::new(mean_t.clone(), raw_ls.clone());
        let mut u = Tensor::zeros(vec![5, act]);
        for b in 0..5 {
            for d in 0..act {
                u.row_mut(b)[d] =
                    dist.mean.at(b, d) + dist.log_std.at(b, d).exp() * xi[b][d];
            }
        }
        let logp = dist.log_prob(&u).unwrap();
        let mut a = u.clone();
        for v in a.data_mut() {
            *v = v.tanh();
        }
        let q_in = Tensor::from_rows(
            &(0..5)
                .map(|b| {
                    let mut row = states.row(b).to_vec();
                    row.extend_from_slice(a.row(b));
                    row
                })
                .collect::<Vec<_>>(),
        );
        let q1v = forward(&q1, &q_spec, &q_in).unwrap().remove(0);
        let q2v = forward(&q2, &q_spec, &q_in).unwrap().remove(0);
        let loss = (0..5)
            .map(|b| alpha * logp[b] - q1v.at(b, 0).min(q2v.at(b, 0)))
            .sum::<f64>()
            / 5.0;
        (loss, mean_t, raw_ls, u)
    };
    let (_, mean_t, raw_ls, u) = eval(&pol);
    // dVmin/da via the argmin branch input gradients
    let a = {
        let mut a = u.clone();
        for v in a.data_mut() {
            *v = v.tanh();
        }
        a
    };
    let q_in = Tensor::from_rows(
        &(0..5)
            .map(|b| {
                let mut row = states.row(b).to_vec();
                row.extend_from_slice(a.row(b));
                row
            })
            .collect::<Vec<_>>(),
    );
    let q1v = forward(&q1, &q_spec, &q_in).unwrap().remove(0);
    let q2v = forward(&q2, &q_spec, &q_in).unwrap().remove(0);
    let mut seed1 = Tensor::zeros(vec![5, 1]);
    let mut seed2 = Tensor::zeros(vec![5, 1]);
    for b in 0..5 {
        if q1v.at(b, 0) <= q2v.at(b, 0) {
            seed1.row_mut(b)[0] = 1.0;
        } else {
            seed2.row_mut(b)[0] = 1.0;
        }
    }
    let (_, din1) = backward(&q1, &q_spec, &q_in, &[seed1]).unwrap();
    let (_, din2) = backward(&q2, &q_spec, &q_in, &[seed2]).unwrap();
    let mut qgrad = Tensor::zeros(vec![5, act]);
    for b in 0..5 {
        for d in 0..act {
            qgrad.row_mut(b)[d] = din1.at(b, obs + d) + din2.at(b, obs + d);
        }
    }
    let (d_mean, d_ls) = sac_gaussian_policy_grad(&mean_t, &raw_ls, &u, &qgrad, alpha);
    let (analytic, _) = backward(&pol, &pol_spec, &states, &[d_mean, d_ls]).unwrap();
    fd_check(&pol, &analytic, &|p| eval(p).0, 1e-6)
}

fn check_sac_policy_disc_grad(rng: &mut ChaCha8Rng) -> f64 {
    let (obs, n_act) = (3usize, 4usize);
    let pol_spec = small_spec(vec![8], Activation::Tanh, vec![HeadSpec::identity(n_act)]);
    let q_spec = small_spec(vec![8], Activation::Tanh, vec![HeadSpec::identity(n_act)]);
    let pol = init_params(&pol_spec, obs, rng);
    let q1 = init_params(&q_spec, obs, rng);
    let q2 = init_params(&q_spec, obs, rng);
    let states = random_input(5, obs, rng);
    let tau = 0.8;
    let alpha = 0.2;
    let noise = Tensor::new(
        vec![5, n_act],
        (0..5 * n_act)
            .map(|_| {
                let u: f64 = rng.random_range(0.01..0.99);
                -(-u.ln()).ln()
            })
            .collect(),
    )
    .unwrap();
    let q_min = {
        let q1v = forward(&q1, &q_spec, &states).unwrap().remove(0);
        let q2v = forward(&q2, &q_spec, &states).unwrap().remove(0);
        let mut m = Tensor::zeros(vec![5, n_act]);
        for b in 0..5 {
            for a in 0..n_act {
                m.row_mut(b)[a] = q1v.at(b, a).min(q2v.at(b, a));
            }
        }
        m
    };
    let loss_fn = |p: &Params| -> f64 {
        let logits = forward(p, &pol_spec, &states).unwrap().remove(0);
        let g = GumbelSoftmaxParams::new(logits.clone(), tau);
        let y = g.sample_with_noise(&noise, false);
        let dist = CategoricalParams::new(logits);
        let mut acc = 0.0;
        for b in 0..5 {
            let row = CategoricalParams::new(Tensor::from_row(dist.logits.row(b)));
            for a in 0..n_act {
                let lp = row.log_prob(&[a]).unwrap()[0];
                acc += y.at(b, a) * (alpha * lp - q_min.at(b, a));
            }
        }
        acc / 5.0
    };
    let logits0 = forward(&pol, &pol_spec, &states).unwrap().remove(0);
    let relaxed = GumbelSoftmaxParams::new(logits0.clone(), tau).sample_with_noise(&noise, false);
    let dlogits = sac_discrete_policy_grad(&logits0, &relaxed, &q_min, alpha, tau);
    let (analytic, _) = backward(&pol, &pol_spec, &states, &[dlogits]).unwrap();
    fd_check(&pol, &analytic, &loss_fn, 1e-6)
}

/// GAE reverse scan vs the O(T^2) double-sum oracle.
pub fn suite_gae_oracle(n_cases: usize, fault: Option<Fault>) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AE);
    let mut worst: f64 = 0.0;
    for _ in 0..n_cases {
        let t_len = rng.random_range(1..=64);
        let gamma: f64 = rng.random_range(0.0..1.0);
        let lam: f64 = rng.random_range(0.0..1.0);
        let rewards: Vec<f64> = (0..t_len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dones: Vec<bool> = (0..t_len).map(|_| rng.random_range(0.0..1.0) < 0.2).collect();
        let values: Vec<f64> = (0..=t_len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (mut adv, _) = calc_gae(&rewards, &dones, &values, gamma, lam).unwrap();
        if fault == Some(Fault::FlipGaeSign) {
            for a in &mut adv {
                *a = -*a;
            }
        }
        let slow = oracles::gae_brute(&rewards, &dones, &values, gamma, lam);
        for (f, s) in adv.iter().zip(&slow) {
            worst = worst.max((f - s).abs());
        }
    }
    let passed = worst <= 1e-12;
    SuiteReport::new(
        "gae_oracle",
        passed,
        worst,
        format!("{n_cases} random sequences vs double-sum oracle, tolerance 1e-12"),
    )
}

/// n-step returns vs the O(T*n) forward-summation oracle.
pub fn suite_nstep_oracle(n_cases: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x57EB);
    let mut worst: f64 = 0.0;
    for _ in 0..n_cases {
        let t_len = rng.random_range(1..=64);
        let n = rng.random_range(1..=8);
        let gamma: f64 = rng.random_range(0.0..1.0);
        let rewards: Vec<f64> = (0..t_len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dones: Vec<bool> = (0..t_len).map(|_| rng.random_range(0.0..1.0) < 0.15).collect();
        let values: Vec<f64> = (0..=t_len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let fast = calc_nstep_returns(&rewards, &dones, &values, gamma, n).unwrap();
        let slow = oracles::nstep_returns_brute(&rewards, &dones, &values, gamma, n);
        for (f, s) in fast.iter().zip(&slow) {
            worst = worst.max((f - s).abs());
        }
    }
    let passed = worst <= 1e-12;
    SuiteReport::new(
        "nstep_oracle",
        passed,
        worst,
        format!("{n_cases} random sequences vs brute-force oracle, tolerance 1e-12"),
    )
}

/// Internal-node consistency after a long random op sequence.
pub fn suite_sum_tree_audit(ops: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut tree = SumTree::new(257);
    let mut worst: f64 = 0.0;
    for i in 0..ops {
        let leaf = rng.random_range(0..257);
        let p = rng.random_range(0.0..10.0);
        tree.set(leaf, p);
        if i % 997 == 0 {
            worst = worst.max(tree.audit());
        }
    }
    worst = worst.max(tree.audit());
    let passed = worst <= 1e-9;
    SuiteReport::new(
        "sum_tree_audit",
        passed,
        worst,
        format!("{ops} random set operations, node-sum tolerance 1e-9"),
    )
}

fn chi_square_p(observed: &[u64], expected: &[f64]) -> f64 {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(o, e)| {
            let d = *o as f64 - e;
            d * d / e
        })
        .sum();
    let dof = (observed.len() - 1) as f64;
    let dist = ChiSquared::new(dof).expect("dof >= 1");
    1.0 - dist.cdf(stat)
}

/// Stratified PER sampling frequencies vs p_i / sum(p) (chi-square), plus
/// the exact unit-weight cases.
pub fn suite_per_sampling(draws: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0xFE);
    let spec = MemorySpec {
        name: MemoryKind::PrioritizedReplay,
        max_size: 16,
        batch_size: 4,
        use_cer: false,
        per_alpha: 1.0,
        per_beta_start: 0.4,
        per_beta_end: 1.0,
        per_epsilon: 0.0001,
    };
    let mut mem = PerMemory::new(&spec);
    let n_items = 8;
    for i in 0..n_items {
        mem.add(Transition::new(
            &[i as f64],
            crate::memory::Action::Discrete(0),
            0.0,
            &[0.0],
            false,
        ));
    }
    let priorities: Vec<f64> = (1..=n_items).map(|p| p as f64 * 0.5).collect();
    let handles: Vec<SampleIndex> = (0..n_items)
        .map(|s| SampleIndex {
            slot: s,
            stamp: (s + 1) as u64,
        })
        .collect();
    // alpha = 1 and epsilon tiny: priorities ~ |delta|
    let deltas: Vec<f64> = priorities.iter().map(|p| p - spec.per_epsilon).collect();
    mem.update_priorities(&handles, &deltas);
    let total: f64 = mem.tree().total();
    let mut counts = vec![0u64; n_items];
    let n_batches = draws / spec.batch_size;
    let mut weights_ok = true;
    for _ in 0..n_batches {
        let (batch, _, _) = mem.sample(0.6, &mut rng).unwrap();
        for t in batch {
            counts[t.state[0] as usize] += 1;
        }
    }
    let n_drawn: u64 = counts.iter().sum();
    let expected: Vec<f64> = (0..n_items)
        .map(|i| mem.tree().get(i) / total * n_drawn as f64)
        .collect();
    let p = chi_square_p(&counts, &expected);

    // beta = 0 and uniform-priority cases must give exactly unit weights
    let (_, _, w0) = mem.sample(0.0, &mut rng).unwrap();
    weights_ok &= w0.iter().all(|&w| w == 1.0);
    let mut uniform = PerMemory::new(&spec);
    for i in 0..n_items {
        uniform.add(Transition::new(
            &[i as f64],
            crate::memory::Action::Discrete(0),
            0.0,
            &[0.0],
            false,
        ));
    }
    let (_, _, w1) = uniform.sample(0.7, &mut rng).unwrap();
    weights_ok &= w1.iter().all(|&w| w == 1.0);

    let passed = p > 0.01 && weights_ok;
    SuiteReport::new(
        "per_sampling",
        passed,
        1.0 - p,
        format!("chi-square p = {p:.4} over {n_drawn} draws; unit-weight cases {}", if weights_ok { "exact" } else { "VIOLATED" }),
    )
}

/// Hard Gumbel-Softmax samples must follow the categorical marginals at
/// every temperature.
pub fn suite_gumbel_marginals(draws: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6B);
    let probs = [0.1, 0.3, 0.6];
    let logits: Vec<f64> = probs.iter().map(|p: &f64| p.ln()).collect();
    let mut worst: f64 = 0.0;
    let mut min_p: f64 = 1.0;
    for tau in [0.1, 1.0, 5.0] {
        let g = GumbelSoftmaxParams::new(Tensor::from_rows(&[logits.clone()]), tau);
        let mut counts = [0u64; 3];
        for _ in 0..draws {
            let y = g.sample(&mut rng, true);
            counts[argmax(y.row(0))] += 1;
        }
        for (i, p) in probs.iter().enumerate() {
            worst = worst.max((counts[i] as f64 / draws as f64 - p).abs());
        }
        let expected: Vec<f64> = probs.iter().map(|p| p * draws as f64).collect();
        min_p = min_p.min(chi_square_p(&counts, &expected));
    }
    // low-temperature limit: relaxed samples sit within 1e-3 of a one-hot
    // vector whenever the Gumbel-perturbed logits are clear of a near-tie
    // (ties have vanishing probability; allow a small tied fraction)
    let g = GumbelSoftmaxParams::new(Tensor::from_rows(&[logits.clone()]), 0.01);
    let noise = Tensor::from_rows(&[vec![0.7, -0.4, 0.1]]);
    let fixed = g.sample_with_noise(&noise, false);
    let fixed_err = fixed
        .row(0)
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let target = if i == argmax(fixed.row(0)) { 1.0 } else { 0.0 };
            (v - target).abs()
        })
        .fold(0.0, f64::max);
    let mut near_one_hot = 0usize;
    let low_tau_draws = 2000;
    for _ in 0..low_tau_draws {
        let y = g.sample(&mut rng, false);
        let top = argmax(y.row(0));
        let err = y
            .row(0)
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let target = if i == top { 1.0 } else { 0.0 };
                (v - target).abs()
            })
            .fold(0.0, f64::max);
        if err < 1e-3 {
            near_one_hot += 1;
        }
    }
    let one_hot_frac = near_one_hot as f64 / low_tau_draws as f64;
    let passed = worst < 0.01 && min_p > 0.01 && fixed_err < 1e-3 && one_hot_frac >= 0.95;
    SuiteReport::new(
        "gumbel_marginals",
        passed,
        worst,
        format!(
            "marginal error {worst:.5} (tol 0.01), chi-square min p {min_p:.4}, tau=0.01 fixed-noise error {fixed_err:.2e}, one-hot fraction {one_hot_frac:.3}"
        ),
    )
}
