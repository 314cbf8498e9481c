//! Gradient clipping, SGD/Adam steps, losses, and target-network updates.

use super::{Grads, LossKind, NetSpec, OptimizerKind, Params, UpdateKind};
use crate::error::{Error, Result};

/// If the global L2 norm exceeds `max_norm`, scale all entries by
/// `max_norm / norm`. Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0);
    let sq: f64 = grads.arrays().map(|a| a.iter().map(|g| g * g).sum::<f64>()).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for a in grads.arrays_mut() {
            for g in a {
                *g *= scale;
            }
        }
    }
    norm
}

/// Optimizer state over the flattened parameter vector. SGD keeps only the
/// step counter; Adam keeps first/second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptState {
    pub fn new(flat_len: usize) -> Self {
        OptState {
            t: 0,
            m: vec![0.0; flat_len],
            v: vec![0.0; flat_len],
        }
    }
}

/// One optimizer step over flat slices. Element order must match between
/// calls for the state to stay meaningful.
pub fn optimizer_step_flat(params: &mut [f64], grads: &[f64], state: &mut OptState, spec: &NetSpec) {
    debug_assert_eq!(params.len(), grads.len());
    state.t += 1;
    match spec.optimizer {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                *p -= spec.lr * g;
            }
        }
        OptimizerKind::Adam => {
            let (b1, b2, eps) = (spec.adam_beta1, spec.adam_beta2, spec.adam_eps);
            let bc1 = 1.0 - b1.powi(state.t as i32);
            let bc2 = 1.0 - b2.powi(state.t as i32);
            for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                let m = b1 * state.m[i] + (1.0 - b1) * g;
                let v = b2 * state.v[i] + (1.0 - b2) * g * g;
                state.m[i] = m;
                state.v[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p -= spec.lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// SGD: p' = p - lr*g. Adam: bias-corrected moments with the spec's betas.
pub fn optimizer_step(params: &mut Params, grads: &Grads, state: &mut OptState, spec: &NetSpec) {
    state.t += 1;
    let t = state.t;
    let mut off = 0;
    match spec.optimizer {
        OptimizerKind::Sgd => {
            for (p_arr, g_arr) in params.arrays_mut().zip(grads.arrays()) {
                for (p, g) in p_arr.iter_mut().zip(g_arr) {
                    *p -= spec.lr * g;
                }
            }
        }
        OptimizerKind::Adam => {
            let (b1, b2, eps) = (spec.adam_beta1, spec.adam_beta2, spec.adam_eps);
            let bc1 = 1.0 - b1.powi(t as i32);
            let bc2 = 1.0 - b2.powi(t as i32);
            for (p_arr, g_arr) in params.arrays_mut().zip(grads.arrays()) {
                for (k, (p, g)) in p_arr.iter_mut().zip(g_arr).enumerate() {
                    let i = off + k;
                    let m = b1 * state.m[i] + (1.0 - b1) * g;
                    let v = b2 * state.v[i] + (1.0 - b2) * g * g;
                    state.m[i] = m;
                    state.v[i] = v;
                    *p -= spec.lr * (m / bc1) / ((v / bc2).sqrt() + eps);
                }
                off += p_arr.len();
            }
        }
    }
}

/// `replace`: target := online. `polyak`: t' = tau*online + (1-tau)*target.
/// Replace-mode gating by `update_frequency` is the caller's job.
pub fn update_target(target: &mut Params, online: &Params, spec: &NetSpec) -> Result<()> {
    if target.shapes() != online.shapes() {
        return Err(Error::shape(
            "update_target",
            &online.shapes().iter().flat_map(|&(a, b)| [a, b]).collect::<Vec<_>>(),
            &target.shapes().iter().flat_map(|&(a, b)| [a, b]).collect::<Vec<_>>(),
        ));
    }
    match spec.update {
        UpdateKind::Replace => {
            target.clone_from(online);
        }
        UpdateKind::Polyak => {
            let tau = spec.polyak_tau;
            for (t_arr, o_arr) in target.arrays_mut().zip(online.arrays()) {
                for (t, o) in t_arr.iter_mut().zip(o_arr) {
                    *t = tau * o + (1.0 - tau) * *t;
                }
            }
        }
    }
    Ok(())
}

/// Mean regression loss and its gradient with respect to predictions.
/// Per-sample weights scale both the loss terms and the gradient.
pub fn loss_and_grad(
    kind: LossKind,
    huber_delta: f64,
    pred: &[f64],
    target: &[f64],
    weights: Option<&[f64]>,
) -> (f64, Vec<f64>) {
    debug_assert_eq!(pred.len(), target.len());
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        let w = weights.map_or(1.0, |ws| ws[i]);
        let d = pred[i] - target[i];
        match kind {
            LossKind::Mse => {
                loss += w * d * d;
                grad[i] = w * 2.0 * d / n;
            }
            LossKind::Huber => {
                if d.abs() <= huber_delta {
                    loss += w * 0.5 * d * d;
                    grad[i] = w * d / n;
                } else {
                    loss += w * huber_delta * (d.abs() - 0.5 * huber_delta);
                    grad[i] = w * huber_delta * d.signum() / n;
                }
            }
        }
    }
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{Activation, HeadSpec, Linear};

    fn scalar_params(v: f64) -> Params {
        Params {
            trunk: vec![],
            heads: vec![Linear {
                in_dim: 1,
                out_dim: 1,
                w: vec![v],
                b: vec![0.0],
            }],
        }
    }

    fn sgd_spec(lr: f64) -> NetSpec {
        NetSpec {
            hid_layers: vec![],
            activation: Activation::Relu,
            out_heads: Some(vec![HeadSpec::identity(1)]),
            optimizer: OptimizerKind::Sgd,
            lr,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: None,
            loss: LossKind::Mse,
            huber_delta: 1.0,
            polyak_tau: 0.5,
            update: UpdateKind::Polyak,
            update_frequency: 1,
        }
    }

    #[test]
    fn clip_below_threshold_is_identity() {
        let mut g = scalar_params(0.5);
        g.heads[0].b[0] = 0.0;
        let norm = clip_grad_norm(&mut g, 1.0);
        assert!((norm - 0.5).abs() < 1e-15);
        assert_eq!(g.heads[0].w[0], 0.5);
    }

    #[test]
    fn clip_scales_to_max_norm_and_is_idempotent() {
        let mut g = Params {
            trunk: vec![],
            heads: vec![Linear {
                in_dim: 2,
                out_dim: 1,
                w: vec![6.0, 8.0],
                b: vec![0.0],
            }],
        };
        clip_grad_norm(&mut g, 1.0);
        let norm: f64 = g.arrays().flat_map(|a| a.iter()).map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        // direction preserved
        assert!((g.heads[0].w[0] / g.heads[0].w[1] - 0.75).abs() < 1e-12);
        let snapshot = g.clone();
        clip_grad_norm(&mut g, 1.0);
        assert_eq!(g, snapshot);
    }

    #[test]
    fn clip_zero_grads_unchanged() {
        let mut g = scalar_params(0.0);
        clip_grad_norm(&mut g, 1.0);
        assert_eq!(g.heads[0].w[0], 0.0);
    }

    #[test]
    fn sgd_step_definition() {
        let mut p = scalar_params(1.0);
        let g = scalar_params(2.0);
        let mut st = OptState::new(p.flat_len());
        optimizer_step(&mut p, &g, &mut st, &sgd_spec(0.1));
        assert!((p.heads[0].w[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_magnitude() {
        let mut spec = sgd_spec(0.01);
        spec.optimizer = OptimizerKind::Adam;
        let mut p = scalar_params(1.0);
        let g = scalar_params(3.0);
        let mut st = OptState::new(p.flat_len());
        optimizer_step(&mut p, &g, &mut st, &spec);
        // bias correction makes m_hat = g, v_hat = g^2 on step 1
        let expect = 1.0 - spec.lr * 3.0 / (3.0 + spec.adam_eps);
        assert!((p.heads[0].w[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn adam_minimizes_square() {
        let mut spec = sgd_spec(0.01);
        spec.optimizer = OptimizerKind::Adam;
        let mut p = scalar_params(5.0);
        let mut st = OptState::new(p.flat_len());
        for _ in 0..2000 {
            let g = scalar_params(2.0 * p.heads[0].w[0]);
            optimizer_step(&mut p, &g, &mut st, &spec);
        }
        assert!(p.heads[0].w[0].abs() < 0.1, "got {}", p.heads[0].w[0]);
        assert!(p.is_finite());
    }

    #[test]
    fn flat_and_structured_steps_agree_bitwise() {
        let mut spec = sgd_spec(0.003);
        spec.optimizer = OptimizerKind::Adam;
        let mut p1 = Params {
            trunk: vec![Linear {
                in_dim: 2,
                out_dim: 2,
                w: vec![0.1, -0.2, 0.3, 0.4],
                b: vec![0.0, 0.5],
            }],
            heads: vec![Linear {
                in_dim: 2,
                out_dim: 1,
                w: vec![-0.7, 0.9],
                b: vec![0.2],
            }],
        };
        let g = Params {
            trunk: vec![Linear {
                in_dim: 2,
                out_dim: 2,
                w: vec![1.0, -1.0, 0.5, 0.25],
                b: vec![0.1, -0.1],
            }],
            heads: vec![Linear {
                in_dim: 2,
                out_dim: 1,
                w: vec![2.0, -2.0],
                b: vec![0.3],
            }],
        };
        let mut flat_p = p1.to_flat();
        let flat_g = g.to_flat();
        let mut st1 = OptState::new(p1.flat_len());
        let mut st2 = OptState::new(p1.flat_len());
        for _ in 0..5 {
            optimizer_step(&mut p1, &g, &mut st1, &spec);
            optimizer_step_flat(&mut flat_p, &flat_g, &mut st2, &spec);
        }
        assert_eq!(p1.to_flat(), flat_p);
        assert_eq!(st1.m, st2.m);
    }

    #[test]
    fn polyak_boundaries_and_midpoint() {
        let online = scalar_params(2.0);
        let mut spec = sgd_spec(0.1);

        spec.polyak_tau = 1.0;
        let mut t = scalar_params(0.0);
        update_target(&mut t, &online, &spec).unwrap();
        assert_eq!(t.heads[0].w[0], 2.0);

        spec.polyak_tau = 0.0;
        let mut t = scalar_params(0.0);
        update_target(&mut t, &online, &spec).unwrap();
        assert_eq!(t.heads[0].w[0], 0.0);

        spec.polyak_tau = 0.5;
        let mut t = scalar_params(0.0);
        update_target(&mut t, &online, &spec).unwrap();
        assert_eq!(t.heads[0].w[0], 1.0);
    }

    #[test]
    fn replace_mode_copies_online() {
        let online = scalar_params(3.5);
        let mut spec = sgd_spec(0.1);
        spec.update = UpdateKind::Replace;
        let mut t = scalar_params(0.0);
        update_target(&mut t, &online, &spec).unwrap();
        assert_eq!(t, online);
    }

    #[test]
    fn huber_matches_mse_inside_delta() {
        let pred = [1.0, 2.0];
        let target = [1.2, 1.5];
        let (hl, hg) = loss_and_grad(LossKind::Huber, 10.0, &pred, &target, None);
        let (_, mg) = loss_and_grad(LossKind::Mse, 0.0, &pred, &target, None);
        for (h, m) in hg.iter().zip(&mg) {
            assert!((2.0 * h - m).abs() < 1e-15); // huber = 0.5*mse inside delta
        }
        assert!((hl - 0.5 * ((0.2f64 * 0.2 + 0.5 * 0.5) / 2.0)).abs() < 1e-12);
    }
}
