//! Per-algorithm losses and the analytic gradient seeds fed into the
//! network backward pass. Target quantities (returns, advantages, Q
//! targets, old log-probs) are plain numbers here, so no gradient can flow
//! into them by construction.

use crate::distributions::SQUASH_EPS;
use crate::error::{Error, Result};
use crate::netcore::Tensor;

fn check_len(context: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::length(context, a, b));
    }
    Ok(())
}

/// loss = -mean(log_probs * returns) - entropy_coef * mean(entropy)
pub fn reinforce_loss(
    log_probs: &[f64],
    returns: &[f64],
    entropy: &[f64],
    entropy_coef: f64,
) -> Result<f64> {
    check_len("reinforce_loss returns", returns.len(), log_probs.len())?;
    check_len("reinforce_loss entropy", entropy.len(), log_probs.len())?;
    let n = log_probs.len() as f64;
    let pol: f64 = log_probs.iter().zip(returns).map(|(lp, r)| lp * r).sum();
    let ent: f64 = entropy.iter().sum();
    Ok(-pol / n - entropy_coef * ent / n)
}

/// loss = -mean(log_prob * A) + val_loss_coef * mean((v_pred - v_target)^2)
///        - entropy_coef * mean(entropy)
/// Advantages and v_targets are constants.
#[allow(clippy::too_many_arguments)]
pub fn a2c_loss(
    log_probs: &[f64],
    advantages: &[f64],
    v_pred: &[f64],
    v_targets: &[f64],
    entropy: &[f64],
    val_loss_coef: f64,
    entropy_coef: f64,
) -> Result<f64> {
    check_len("a2c_loss advantages", advantages.len(), log_probs.len())?;
    check_len("a2c_loss v", v_pred.len(), v_targets.len())?;
    check_len("a2c_loss entropy", entropy.len(), log_probs.len())?;
    let n = log_probs.len() as f64;
    let pol: f64 = log_probs.iter().zip(advantages).map(|(lp, a)| lp * a).sum();
    let val: f64 = v_pred
        .iter()
        .zip(v_targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / v_pred.len() as f64;
    let ent: f64 = entropy.iter().sum();
    Ok(-pol / n + val_loss_coef * val - entropy_coef * ent / n)
}

/// Clipped surrogate: loss = -mean(min(r A, clip(r, 1-eps, 1+eps) A)) with
/// r = exp(new - old) and old log-probs constant.
pub fn ppo_policy_loss(
    log_probs_new: &[f64],
    log_probs_old: &[f64],
    advantages: &[f64],
    clip_eps: f64,
) -> Result<f64> {
    check_len("ppo_policy_loss old", log_probs_old.len(), log_probs_new.len())?;
    check_len("ppo_policy_loss adv", advantages.len(), log_probs_new.len())?;
    let n = log_probs_new.len() as f64;
    let mut acc = 0.0;
    for i in 0..log_probs_new.len() {
        let r = (log_probs_new[i] - log_probs_old[i]).exp();
        let clipped = r.clamp(1.0 - clip_eps, 1.0 + clip_eps);
        acc += (r * advantages[i]).min(clipped * advantages[i]);
    }
    Ok(-acc / n)
}

/// d(ppo_policy_loss)/d(log_probs_new): -(r A / n) on the active branch,
/// zero where the clip saturates.
pub fn ppo_policy_grad(
    log_probs_new: &[f64],
    log_probs_old: &[f64],
    advantages: &[f64],
    clip_eps: f64,
) -> Vec<f64> {
    let n = log_probs_new.len() as f64;
    log_probs_new
        .iter()
        .zip(log_probs_old)
        .zip(advantages)
        .map(|((lp, old), a)| {
            let r = (lp - old).exp();
            let clipped = r.clamp(1.0 - clip_eps, 1.0 + clip_eps);
            if r * a <= clipped * a {
                -r * a / n
            } else {
                0.0
            }
        })
        .collect()
}

/// y_b = r_b + gamma (1 - done_b) max_a q_target[b, a]
pub fn dqn_target(
    rewards: &[f64],
    dones: &[bool],
    q_target_out: &Tensor,
    gamma: f64,
) -> Result<Vec<f64>> {
    check_len("dqn_target rows", q_target_out.rows(), rewards.len())?;
    check_len("dqn_target dones", dones.len(), rewards.len())?;
    Ok((0..rewards.len())
        .map(|b| {
            let best = q_target_out
                .row(b)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let boot = if dones[b] { 0.0 } else { gamma * best };
            rewards[b] + boot
        })
        .collect())
}

/// Double-DQN: the online net selects, the target net evaluates.
/// a* = argmax_a q_online[b, a]; y_b = r_b + gamma (1-done_b) q_target[b, a*].
pub fn ddqn_target(
    rewards: &[f64],
    dones: &[bool],
    q_online_out: &Tensor,
    q_target_out: &Tensor,
    gamma: f64,
) -> Result<Vec<f64>> {
    if q_online_out.shape() != q_target_out.shape() {
        return Err(Error::shape(
            "ddqn_target",
            q_online_out.shape(),
            q_target_out.shape(),
        ));
    }
    check_len("ddqn_target rows", q_online_out.rows(), rewards.len())?;
    Ok((0..rewards.len())
        .map(|b| {
            let a_star = crate::distributions::argmax(q_online_out.row(b));
            let boot = if dones[b] {
                0.0
            } else {
                gamma * q_target_out.at(b, a_star)
            };
            rewards[b] + boot
        })
        .collect())
}

/// Gradient of a categorical policy-gradient objective with respect to the
/// logits. Each row contributes `pol_weight[t] * d(log pi(a_t))/d(logits)`
/// plus `entropy_weight * dH/d(logits)`:
/// d log pi(a)/d l_j = 1[j=a] - p_j, dH/d l_j = -p_j (log p_j + H).
pub fn categorical_grad_seed(
    logits: &Tensor,
    actions: &[usize],
    pol_weights: &[f64],
    entropy_weight: f64,
) -> Tensor {
    let mut out = Tensor::zeros(logits.shape().to_vec());
    for t in 0..logits.rows() {
        let row = logits.row(t);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        let lp: Vec<f64> = row.iter().map(|l| l - lse).collect();
        let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let h: f64 = -p.iter().zip(&lp).map(|(pi, li)| pi * li).sum::<f64>();
        let g = out.row_mut(t);
        for j in 0..p.len() {
            let ind = if j == actions[t] { 1.0 } else { 0.0 };
            g[j] = pol_weights[t] * (ind - p[j]) + entropy_weight * (-p[j] * (lp[j] + h));
        }
    }
    out
}

/// Gradients of a likelihood-ratio objective on a tanh-squashed Gaussian
/// with the pre-squash sample `u` held constant:
/// d log pi / d mean = (u - mean)/sigma^2,
/// d log pi / d log_std = z^2 - 1 with z = (u - mean)/sigma.
/// `entropy_weight` adds the Gaussian-entropy-proxy gradient (1 per
/// log_std element). Elements whose raw log_std output was clamped get
/// zero gradient.
pub fn tanh_gaussian_grad_seed(
    mean: &Tensor,
    raw_log_std: &Tensor,
    u: &Tensor,
    pol_weights: &[f64],
    entropy_weight: f64,
) -> (Tensor, Tensor) {
    use crate::distributions::{LOG_STD_MAX, LOG_STD_MIN};
    let mut d_mean = Tensor::zeros(mean.shape().to_vec());
    let mut d_log_std = Tensor::zeros(mean.shape().to_vec());
    for t in 0..mean.rows() {
        for d in 0..mean.cols() {
            let raw = raw_log_std.at(t, d);
            let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let sigma = ls.exp();
            let z = (u.at(t, d) - mean.at(t, d)) / sigma;
            d_mean.row_mut(t)[d] = pol_weights[t] * (z / sigma);
            if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
                d_log_std.row_mut(t)[d] = pol_weights[t] * (z * z - 1.0) + entropy_weight;
            }
        }
    }
    (d_mean, d_log_std)
}

/// Reparameterized SAC policy-loss gradients for a squashed Gaussian:
/// loss = mean_b [ alpha log pi(a|s) - qmin(s, a) ], a = tanh(mean + sigma xi)
/// with the noise xi fixed and `q_action_grad[b][d] = d qmin / d a_d`.
/// Returns (d loss/d mean, d loss/d raw_log_std).
pub fn sac_gaussian_policy_grad(
    mean: &Tensor,
    raw_log_std: &Tensor,
    u: &Tensor,
    q_action_grad: &Tensor,
    alpha: f64,
) -> (Tensor, Tensor) {
    use crate::distributions::{LOG_STD_MAX, LOG_STD_MIN};
    let batch = mean.rows() as f64;
    let mut d_mean = Tensor::zeros(mean.shape().to_vec());
    let mut d_log_std = Tensor::zeros(mean.shape().to_vec());
    for b in 0..mean.rows() {
        for d in 0..mean.cols() {
            let raw = raw_log_std.at(b, d);
            let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let sigma = ls.exp();
            let xi = (u.at(b, d) - mean.at(b, d)) / sigma;
            let t = u.at(b, d).tanh();
            let sech2 = 1.0 - t * t;
            // d log pi / du through the squash correction only: the
            // Gaussian term -0.5 xi^2 is constant in mean at fixed xi.
            let dlp_du = 2.0 * t * sech2 / (sech2 + SQUASH_EPS);
            let dq_du = q_action_grad.at(b, d) * sech2;
            let du_dls = sigma * xi;
            d_mean.row_mut(b)[d] = (alpha * dlp_du - dq_du) / batch;
            if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
                d_log_std.row_mut(b)[d] =
                    (alpha * (-1.0 + dlp_du * du_dls) - dq_du * du_dls) / batch;
            }
        }
    }
    (d_mean, d_log_std)
}

/// Discrete SAC policy-loss gradient with respect to the logits:
/// loss = mean_b sum_a y[a] (alpha log p[a] - qmin[a]) where
/// y = softmax((logits + g)/tau) with fixed Gumbel noise g.
pub fn sac_discrete_policy_grad(
    logits: &Tensor,
    relaxed: &Tensor,
    q_min_rows: &Tensor,
    alpha: f64,
    tau: f64,
) -> Tensor {
    let batch = logits.rows() as f64;
    let mut out = Tensor::zeros(logits.shape().to_vec());
    for b in 0..logits.rows() {
        let row = logits.row(b);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        let lp: Vec<f64> = row.iter().map(|l| l - lse).collect();
        let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let y = relaxed.row(b);
        let c: Vec<f64> = (0..p.len())
            .map(|a| alpha * lp[a] - q_min_rows.at(b, a))
            .collect();
        let y_dot_c: f64 = y.iter().zip(&c).map(|(yi, ci)| yi * ci).sum();
        let g = out.row_mut(b);
        for j in 0..p.len() {
            let through_y = y[j] * (c[j] - y_dot_c) / tau;
            let through_lp = alpha * (y[j] - p[j]);
            g[j] = (through_y + through_lp) / batch;
        }
    }
    out
}
