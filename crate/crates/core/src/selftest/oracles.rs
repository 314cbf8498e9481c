//! Independent brute-force references used to check the fast
//! implementations. These deliberately share no code with the production
//! paths: plain forward summations and double sums only.

/// O(T*n) forward summation of n-step returns.
pub fn nstep_returns_brute(
    rewards: &[f64],
    dones: &[bool],
    values: &[f64],
    gamma: f64,
    n: usize,
) -> Vec<f64> {
    let t_len = rewards.len();
    let mut out = vec![0.0; t_len];
    for t in 0..t_len {
        let mut acc = 0.0;
        let mut k = 0;
        let mut hit_terminal = false;
        while k < n && t + k < t_len {
            acc += gamma.powi(k as i32) * rewards[t + k];
            if dones[t + k] {
                hit_terminal = true;
                break;
            }
            k += 1;
        }
        if !hit_terminal {
            let m = k; // steps actually accumulated
            acc += gamma.powi(m as i32) * values[t + m];
        }
        out[t] = acc;
    }
    out
}

/// O(T^2) direct double sum for GAE: A_t = sum_l (gamma*lambda)^l delta_{t+l}
/// with the sum cut at the first done at or after t.
pub fn gae_brute(rewards: &[f64], dones: &[bool], values: &[f64], gamma: f64, lam: f64) -> Vec<f64> {
    let t_len = rewards.len();
    let delta = |t: usize| -> f64 {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        rewards[t] + gamma * not_done * values[t + 1] - values[t]
    };
    let mut out = vec![0.0; t_len];
    for t in 0..t_len {
        let mut acc = 0.0;
        for l in 0..t_len - t {
            acc += (gamma * lam).powi(l as i32) * delta(t + l);
            if dones[t + l] {
                break;
            }
        }
        out[t] = acc;
    }
    out
}

/// Loop-oracle Q targets: y_b = r_b + gamma (1-done_b) max_a q_target[b,a].
pub fn dqn_target_brute(
    rewards: &[f64],
    dones: &[bool],
    q_target_rows: &[Vec<f64>],
    gamma: f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(rewards.len());
    for b in 0..rewards.len() {
        let mut best = f64::NEG_INFINITY;
        for &q in &q_target_rows[b] {
            if q > best {
                best = q;
            }
        }
        let boot = if dones[b] { 0.0 } else { gamma * best };
        out.push(rewards[b] + boot);
    }
    out
}
