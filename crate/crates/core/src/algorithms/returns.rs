//! Return and advantage computations shared by the algorithm family.

use crate::error::{Error, Result};

/// n-step bootstrapped returns.
///
/// R_t = sum_{k=0}^{m-1} gamma^k r_{t+k} + gamma^m V(s_{t+m}) with
/// m = min(n, steps to horizon/terminal). A done flag stops the
/// accumulation and zeroes the bootstrap. `values` holds V(s_0..s_T)
/// (one bootstrap entry past the horizon), so V(s_{t+m}) = values[t+m].
pub fn calc_nstep_returns(
    rewards: &[f64],
    dones: &[bool],
    values: &[f64],
    gamma: f64,
    n: usize,
) -> Result<Vec<f64>> {
    let t_len = rewards.len();
    if dones.len() != t_len {
        return Err(Error::length("calc_nstep_returns dones", dones.len(), t_len));
    }
    if values.len() != t_len + 1 {
        return Err(Error::length(
            "calc_nstep_returns values",
            values.len(),
            t_len + 1,
        ));
    }
    assert!(n >= 1);
    let mut out = vec![0.0; t_len];
    for t in 0..t_len {
        let mut acc = 0.0;
        let mut discount = 1.0;
        let mut terminated = false;
        let mut end = t;
        for k in 0..n {
            let idx = t + k;
            if idx >= t_len {
                break;
            }
            acc += discount * rewards[idx];
            discount *= gamma;
            end = idx + 1;
            if dones[idx] {
                terminated = true;
                break;
            }
        }
        if !terminated {
            acc += discount * values[end];
        }
        out[t] = acc;
    }
    Ok(out)
}

/// Generalized advantage estimation by reverse scan.
///
/// delta_t = r_t + gamma (1 - done_t) V_{t+1} - V_t
/// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}
/// v_targets = A + values[0..T].
pub fn calc_gae(
    rewards: &[f64],
    dones: &[bool],
    values: &[f64],
    gamma: f64,
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let t_len = rewards.len();
    if dones.len() != t_len {
        return Err(Error::length("calc_gae dones", dones.len(), t_len));
    }
    if values.len() != t_len + 1 {
        return Err(Error::length("calc_gae values", values.len(), t_len + 1));
    }
    let mut adv = vec![0.0; t_len];
    let mut next_adv = 0.0;
    for t in (0..t_len).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * not_done * values[t + 1] - values[t];
        next_adv = delta + gamma * lam * not_done * next_adv;
        adv[t] = next_adv;
    }
    let v_targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, v_targets))
}

/// Discounted Monte-Carlo returns with resets at episode boundaries; the
/// trailing segment is treated as a truncated horizon (no bootstrap).
pub fn calc_mc_returns(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut future = 0.0;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            future = 0.0;
        }
        future = rewards[t] + gamma * future;
        out[t] = future;
    }
    out
}

/// Shift/scale to zero mean and unit standard deviation (population),
/// with the std floored at 1e-8.
pub fn standardize_advantages(adv: &[f64]) -> Result<Vec<f64>> {
    if adv.len() < 2 {
        return Err(Error::InsufficientData {
            have: adv.len(),
            need: 2,
        });
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    Ok(adv.iter().map(|a| (a - mean) / std).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selftest::oracles;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nstep_one_step_definition() {
        let rewards = [0.5, -0.5, 2.0];
        let dones = [false, true, false];
        let values = [9.0, 10.0, 11.0, 12.0];
        let gamma = 0.9;
        let got = calc_nstep_returns(&rewards, &dones, &values, gamma, 1).unwrap();
        for t in 0..3 {
            let boot = if dones[t] { 0.0 } else { values[t + 1] };
            assert!((got[t] - (rewards[t] + gamma * boot)).abs() < 1e-15);
        }
    }

    #[test]
    fn nstep_arithmetic_case() {
        let got = calc_nstep_returns(
            &[1.0, 1.0, 1.0],
            &[false, false, false],
            &[0.0, 0.0, 0.0, 10.0],
            0.9,
            3,
        )
        .unwrap();
        assert!((got[0] - 10.0).abs() < 1e-12); // 1 + 0.9 + 0.81 + 0.729*10
    }

    #[test]
    fn nstep_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let t_len = rng.random_range(1..=64);
            let n = rng.random_range(1..=8);
            let gamma: f64 = rng.random_range(0.0..1.0);
            let rewards: Vec<f64> = (0..t_len).map(|_| rng.random_range(-2.0..2.0)).collect();
            let dones: Vec<bool> = (0..t_len).map(|_| rng.random_range(0.0..1.0) < 0.15).collect();
            let values: Vec<f64> = (0..=t_len).map(|_| rng.random_range(-3.0..3.0)).collect();
            let fast = calc_nstep_returns(&rewards, &dones, &values, gamma, n).unwrap();
            let slow = oracles::nstep_returns_brute(&rewards, &dones, &values, gamma, n);
            for (f, s) in fast.iter().zip(&slow) {
                assert!((f - s).abs() <= 1e-12, "{f} vs {s}");
            }
        }
    }

    #[test]
    fn gae_lambda_zero_collapses_to_td_residual() {
        let rewards = [1.0, -1.0, 0.5];
        let dones = [false, false, true];
        let values = [0.3, -0.2, 0.9, 2.0];
        let gamma = 0.95;
        let (adv, vt) = calc_gae(&rewards, &dones, &values, gamma, 0.0).unwrap();
        for t in 0..3 {
            let not_done = if dones[t] { 0.0 } else { 1.0 };
            let delta = rewards[t] + gamma * not_done * values[t + 1] - values[t];
            assert!((adv[t] - delta).abs() < 1e-15);
            assert!((vt[t] - (delta + values[t])).abs() < 1e-15);
        }
    }

    #[test]
    fn gae_monte_carlo_case() {
        // gamma = lambda = 1, zero values, done at the end: MC returns
        let (adv, _) = calc_gae(
            &[1.0, 2.0, 3.0],
            &[false, false, true],
            &[0.0; 4],
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(adv, vec![6.0, 5.0, 3.0]);
    }

    #[test]
    fn gae_matches_double_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let t_len = rng.random_range(1..=64);
            let gamma: f64 = rng.random_range(0.0..1.0);
            let lam: f64 = rng.random_range(0.0..1.0);
            let rewards: Vec<f64> = (0..t_len).map(|_| rng.random_range(-2.0..2.0)).collect();
            let dones: Vec<bool> = (0..t_len).map(|_| rng.random_range(0.0..1.0) < 0.2).collect();
            let values: Vec<f64> = (0..=t_len).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (adv, _) = calc_gae(&rewards, &dones, &values, gamma, lam).unwrap();
            let slow = oracles::gae_brute(&rewards, &dones, &values, gamma, lam);
            for (f, s) in adv.iter().zip(&slow) {
                assert!((f - s).abs() <= 1e-12, "{f} vs {s}");
            }
        }
    }

    #[test]
    fn mc_returns_reset_at_episode_boundaries() {
        let got = calc_mc_returns(&[1.0, 1.0, 1.0, 1.0], &[false, true, false, false], 0.5);
        assert_eq!(got, vec![1.5, 1.0, 1.5, 1.0]);
    }

    #[test]
    fn standardize_two_point_and_degenerate() {
        assert_eq!(standardize_advantages(&[1.0, 3.0]).unwrap(), vec![-1.0, 1.0]);
        let z = standardize_advantages(&[4.0; 5]).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(standardize_advantages(&[1.0]).is_err());
    }

    #[test]
    fn standardize_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..257).map(|_| rng.random_range(-5.0..5.0)).collect();
        let z = standardize_advantages(&xs).unwrap();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 1e-10);
    }
}
