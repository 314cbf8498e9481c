//! Parametric action distributions and exploration policies: categorical,
//! diagonal Gaussian with tanh squashing, Gumbel-Softmax, epsilon-greedy,
//! and Boltzmann.
//!
//! All operations are stateless given a caller-owned rng.

use rand::Rng;

use crate::error::{Error, Result};
use crate::netcore::Tensor;

/// Clamp bounds for Gaussian log standard deviations.
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Floor inside the tanh change-of-variables log term.
pub const SQUASH_EPS: f64 = 1e-6;

const LN_2PI: f64 = 1.8378770664093453;

/// log-softmax of one row, stable via logsumexp.
fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn softmax_row(logits: &[f64]) -> Vec<f64> {
    log_softmax_row(logits).iter().map(|l| l.exp()).collect()
}

/// Categorical distribution over `[batch, n_actions]` logits.
#[derive(Debug, Clone)]
pub struct CategoricalParams {
    pub logits: Tensor,
}

impl CategoricalParams {
    pub fn new(logits: Tensor) -> Self {
        debug_assert!(logits.is_finite());
        CategoricalParams { logits }
    }

    pub fn n_actions(&self) -> usize {
        self.logits.cols()
    }

    /// Row-wise softmax probabilities.
    pub fn probs(&self) -> Tensor {
        let mut out = self.logits.clone();
        for r in 0..out.rows() {
            let p = softmax_row(self.logits.row(r));
            out.row_mut(r).copy_from_slice(&p);
        }
        out
    }

    /// Inverse-CDF sampling on softmax probabilities, one action per row.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        (0..self.logits.rows())
            .map(|r| {
                let row = self.logits.row(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|l| (l - m).exp()).sum();
                let u: f64 = rng.random_range(0.0..1.0) * z;
                let mut acc = 0.0;
                for (i, l) in row.iter().enumerate() {
                    acc += (l - m).exp();
                    if u < acc {
                        return i;
                    }
                }
                row.len() - 1
            })
            .collect()
    }

    /// log pi(a) = logit_a - logsumexp(logits), per row.
    pub fn log_prob(&self, actions: &[usize]) -> Result<Vec<f64>> {
        if actions.len() != self.logits.rows() {
            return Err(Error::length(
                "categorical log_prob",
                actions.len(),
                self.logits.rows(),
            ));
        }
        actions
            .iter()
            .enumerate()
            .map(|(r, &a)| {
                if a >= self.n_actions() {
                    return Err(Error::Run(format!(
                        "action index {a} out of range (n_actions {})",
                        self.n_actions()
                    )));
                }
                let row = self.logits.row(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
                Ok(row[a] - lse)
            })
            .collect()
    }

    /// Shannon entropy per row, in [0, ln n].
    pub fn entropy(&self) -> Vec<f64> {
        (0..self.logits.rows())
            .map(|r| {
                let lp = log_softmax_row(self.logits.row(r));
                -lp.iter().map(|l| l.exp() * l).sum::<f64>()
            })
            .collect()
    }

    pub fn argmax_row(&self, r: usize) -> usize {
        argmax(self.logits.row(r))
    }
}

/// Lowest-index argmax, the deterministic tie-break used everywhere.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Diagonal Gaussian squashed through tanh. `log_std` is clamped to
/// [LOG_STD_MIN, LOG_STD_MAX] at construction.
#[derive(Debug, Clone)]
pub struct TanhGaussianParams {
    pub mean: Tensor,
    pub log_std: Tensor,
}

impl TanhGaussianParams {
    pub fn new(mean: Tensor, mut log_std: Tensor) -> Self {
        for v in log_std.data_mut() {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        TanhGaussianParams { mean, log_std }
    }

    pub fn act_dim(&self) -> usize {
        self.mean.cols()
    }

    /// Draw u ~ Normal(mean, std) and return (tanh(u), u).
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (Tensor, Tensor) {
        let mut u = self.mean.clone();
        for (r, (uv, ls)) in u
            .data_mut()
            .iter_mut()
            .zip(self.log_std.data())
            .enumerate()
        {
            let _ = r;
            let z = standard_normal(rng);
            *uv += ls.exp() * z;
        }
        let mut a = u.clone();
        for v in a.data_mut() {
            *v = v.tanh();
        }
        (a, u)
    }

    /// Deterministic (exploit) action: tanh(mean).
    pub fn mean_action(&self) -> Tensor {
        let mut a = self.mean.clone();
        for v in a.data_mut() {
            *v = v.tanh();
        }
        a
    }

    /// log pi(a) for a = tanh(u), evaluated at the given pre-squash u:
    /// sum_d [ log N(u_d; mean, std) - log(1 - tanh^2(u_d) + eps) ].
    pub fn log_prob(&self, u: &Tensor) -> Result<Vec<f64>> {
        if u.shape() != self.mean.shape() {
            return Err(Error::shape("tanh_gaussian log_prob", self.mean.shape(), u.shape()));
        }
        let mut out = Vec::with_capacity(u.rows());
        for r in 0..u.rows() {
            let mut lp = 0.0;
            for d in 0..u.cols() {
                let mean = self.mean.at(r, d);
                let log_std = self.log_std.at(r, d);
                let std = log_std.exp();
                let z = (u.at(r, d) - mean) / std;
                lp += -0.5 * z * z - log_std - 0.5 * LN_2PI;
                let t = u.at(r, d).tanh();
                lp -= (1.0 - t * t + SQUASH_EPS).ln();
            }
            out.push(lp);
        }
        Ok(out)
    }

    /// Gaussian entropy (pre-squash), the standard proxy for metrics and
    /// entropy bonuses on squashed policies.
    pub fn entropy_proxy(&self) -> Vec<f64> {
        (0..self.mean.rows())
            .map(|r| {
                self.log_std
                    .row(r)
                    .iter()
                    .map(|ls| ls + 0.5 * (LN_2PI + 1.0))
                    .sum()
            })
            .collect()
    }
}

/// Box-Muller standard normal draw.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Gumbel-Softmax relaxation of a categorical with temperature tau.
#[derive(Debug, Clone)]
pub struct GumbelSoftmaxParams {
    pub logits: Tensor,
    pub tau: f64,
}

impl GumbelSoftmaxParams {
    pub fn new(logits: Tensor, tau: f64) -> Self {
        assert!(tau > 0.0, "gumbel temperature must be positive");
        GumbelSoftmaxParams { logits, tau }
    }

    /// Draw standard Gumbel noise g = -log(-log u), u clamped away from 0/1.
    pub fn draw_noise<R: Rng>(&self, rng: &mut R) -> Tensor {
        let mut g = Tensor::zeros(self.logits.shape().to_vec());
        for v in g.data_mut() {
            let draw: f64 = rng.random_range(0.0..1.0);
            let u = draw.clamp(1e-12, 1.0 - 1e-12);
            *v = -(-u.ln()).ln();
        }
        g
    }

    /// y = softmax((logits + g) / tau). With `hard`, returns one-hot of the
    /// argmax; training code that needs gradients must differentiate
    /// through the relaxed y (straight-through contract).
    pub fn sample<R: Rng>(&self, rng: &mut R, hard: bool) -> Tensor {
        let g = self.draw_noise(rng);
        self.sample_with_noise(&g, hard)
    }

    /// Deterministic path used by unit tests: inject fixed Gumbel noise.
    pub fn sample_with_noise(&self, noise: &Tensor, hard: bool) -> Tensor {
        debug_assert_eq!(noise.shape(), self.logits.shape());
        let mut y = Tensor::zeros(self.logits.shape().to_vec());
        for r in 0..self.logits.rows() {
            let perturbed: Vec<f64> = self
                .logits
                .row(r)
                .iter()
                .zip(noise.row(r))
                .map(|(l, g)| (l + g) / self.tau)
                .collect();
            let soft = softmax_row(&perturbed);
            let yr = y.row_mut(r);
            if hard {
                yr[argmax(&soft)] = 1.0;
            } else {
                yr.copy_from_slice(&soft);
            }
        }
        y
    }
}

/// With probability epsilon a uniform action, otherwise the greedy argmax
/// (ties break to the lowest index).
pub fn epsilon_greedy<R: Rng>(q_values: &[f64], epsilon: f64, rng: &mut R) -> usize {
    debug_assert!((0.0..=1.0).contains(&epsilon));
    if epsilon > 0.0 && rng.random_range(0.0..1.0) < epsilon {
        rng.random_range(0..q_values.len())
    } else {
        argmax(q_values)
    }
}

/// Sample from softmax(q / temperature).
pub fn boltzmann<R: Rng>(q_values: &[f64], temperature: f64, rng: &mut R) -> usize {
    assert!(temperature > 0.0);
    let scaled: Vec<f64> = q_values.iter().map(|q| q / temperature).collect();
    let p = softmax_row(&scaled);
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_logits_give_uniform_probs_and_ln2_entropy() {
        let c = CategoricalParams::new(Tensor::from_rows(&[vec![0.0, 0.0]]));
        let p = c.probs();
        assert!((p.at(0, 0) - 0.5).abs() < 1e-12);
        assert!((c.entropy()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_stay_stable() {
        let c = CategoricalParams::new(Tensor::from_rows(&[vec![1000.0, 0.0]]));
        let lp = c.log_prob(&[0]).unwrap();
        assert!(lp[0].abs() < 1e-9);
        assert!(lp[0] <= 0.0);
    }

    #[test]
    fn categorical_sampling_frequencies() {
        // probs [0.2, 0.8]
        let logits = vec![0.0, (0.8f64 / 0.2).ln()];
        let c = CategoricalParams::new(Tensor::from_rows(&[logits]));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut count1 = 0usize;
        for _ in 0..100_000 {
            if c.sample(&mut rng)[0] == 1 {
                count1 += 1;
            }
        }
        let f = count1 as f64 / 100_000.0;
        assert!((f - 0.8).abs() < 0.01, "freq {f}");
    }

    #[test]
    fn categorical_entropy_bounds_and_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(2..8);
            let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
            let c = CategoricalParams::new(Tensor::from_rows(&[logits.clone()]));
            let h = c.entropy()[0];
            assert!(h >= -1e-12 && h <= (n as f64).ln() + 1e-12);
            let shifted: Vec<f64> = logits.iter().map(|l| l + 7.3).collect();
            let c2 = CategoricalParams::new(Tensor::from_rows(&[shifted]));
            let (p1, p2) = (c.probs(), c2.probs());
            for (a, b) in p1.data().iter().zip(p2.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_action_is_an_error() {
        let c = CategoricalParams::new(Tensor::from_rows(&[vec![0.0, 0.0]]));
        assert!(c.log_prob(&[2]).is_err());
    }

    #[test]
    fn tanh_correction_is_negligible_at_zero() {
        let p = TanhGaussianParams::new(
            Tensor::from_rows(&[vec![0.0]]),
            Tensor::from_rows(&[vec![0.0]]),
        );
        let u = Tensor::from_rows(&[vec![0.0]]);
        let lp = p.log_prob(&u).unwrap()[0];
        // log N(0;0,1) = -0.5 ln(2 pi); correction term ~ -log(1 + 1e-6)
        let expect = -0.5 * LN_2PI - (1.0f64 + SQUASH_EPS).ln();
        assert!((lp - expect).abs() < 1e-12);
    }

    #[test]
    fn log_std_clamped_at_construction() {
        let p = TanhGaussianParams::new(
            Tensor::from_rows(&[vec![0.0]]),
            Tensor::from_rows(&[vec![-100.0]]),
        );
        assert_eq!(p.log_std.at(0, 0), LOG_STD_MIN);
    }

    #[test]
    fn deterministic_action_is_tanh_mean() {
        let p = TanhGaussianParams::new(
            Tensor::from_rows(&[vec![0.7, -2.0]]),
            Tensor::from_rows(&[vec![0.0, 0.0]]),
        );
        let a = p.mean_action();
        assert_eq!(a.row(0), &[0.7f64.tanh(), (-2.0f64).tanh()]);
    }

    #[test]
    fn tanh_gaussian_density_integrates_to_one() {
        // quadrature of exp(log pi(a)) over a in (-1, 1) for a 1-D policy
        let p = TanhGaussianParams::new(
            Tensor::from_rows(&[vec![0.3]]),
            Tensor::from_rows(&[vec![-0.5]]),
        );
        let n = 20_000;
        let mut integral = 0.0;
        for k in 0..n {
            let a = -1.0 + 2.0 * (k as f64 + 0.5) / n as f64;
            let u = ((1.0 + a) / (1.0 - a)).ln() / 2.0; // atanh
            if !u.is_finite() {
                continue;
            }
            let ut = Tensor::from_rows(&[vec![u]]);
            let lp = p.log_prob(&ut).unwrap()[0];
            integral += lp.exp() * (2.0 / n as f64);
        }
        assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
    }

    #[test]
    fn sampled_actions_lie_in_open_interval() {
        let p = TanhGaussianParams::new(
            Tensor::from_rows(&[vec![0.0, 5.0]]),
            Tensor::from_rows(&[vec![1.0, 1.0]]),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let (a, _) = p.sample(&mut rng);
            assert!(a.data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn gumbel_low_temperature_is_nearly_one_hot() {
        let g = GumbelSoftmaxParams::new(Tensor::from_rows(&[vec![0.5, -0.2, 1.1]]), 0.01);
        // deterministic noise keeps the perturbed logits clear of ties
        let noise = Tensor::from_rows(&[vec![0.3, -0.1, 0.9]]);
        let y = g.sample_with_noise(&noise, false);
        let mx = y.data().iter().cloned().fold(f64::MIN, f64::max);
        assert!(mx > 1.0 - 1e-3);
        // random draws: near-ties between perturbed logits are possible but
        // rare, so the one-hot property holds for almost all samples
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut near_one_hot = 0;
        for _ in 0..1000 {
            let y = g.sample(&mut rng, false);
            let mx = y.data().iter().cloned().fold(f64::MIN, f64::max);
            if mx > 1.0 - 1e-3 {
                near_one_hot += 1;
            }
            let sum: f64 = y.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
        assert!(near_one_hot >= 950, "only {near_one_hot}/1000 near one-hot");
    }

    #[test]
    fn gumbel_hard_marginals_match_categorical() {
        // probs [0.1, 0.3, 0.6]; Gumbel-max marginals are independent of tau
        let logits = vec![0.1f64.ln(), 0.3f64.ln(), 0.6f64.ln()];
        for tau in [0.1, 1.0, 5.0] {
            let g = GumbelSoftmaxParams::new(Tensor::from_rows(&[logits.clone()]), tau);
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let mut counts = [0usize; 3];
            for _ in 0..100_000 {
                let y = g.sample(&mut rng, true);
                counts[argmax(y.row(0))] += 1;
            }
            for (i, expect) in [0.1, 0.3, 0.6].iter().enumerate() {
                let f = counts[i] as f64 / 100_000.0;
                assert!((f - expect).abs() < 0.01, "tau {tau} arm {i}: {f}");
            }
        }
    }

    #[test]
    fn gumbel_zero_noise_uniform_logits_gives_uniform_point() {
        let g = GumbelSoftmaxParams::new(Tensor::from_rows(&[vec![0.0; 4]]), 1.0);
        let noise = Tensor::zeros(vec![1, 4]);
        let y = g.sample_with_noise(&noise, false);
        for v in y.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn gumbel_samples_lie_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = GumbelSoftmaxParams::new(Tensor::from_rows(&[vec![2.0, -3.0, 0.4]]), 0.7);
        for _ in 0..500 {
            let y = g.sample(&mut rng, false);
            assert!(y.data().iter().all(|&v| v >= 0.0));
            assert!((y.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn epsilon_greedy_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert_eq!(epsilon_greedy(&[1.0, 3.0, 2.0], 0.0, &mut rng), 1);
        assert_eq!(epsilon_greedy(&[2.0, 2.0], 0.0, &mut rng), 0); // tie-break low

        let mut counts = [0usize; 3];
        for _ in 0..100_000 {
            counts[epsilon_greedy(&[0.0, 9.0, 0.0], 1.0, &mut rng)] += 1;
        }
        for c in counts {
            let f = c as f64 / 100_000.0;
            assert!((f - 1.0 / 3.0).abs() < 0.01, "freq {f}");
        }
    }

    #[test]
    fn boltzmann_limits_and_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // high T: near-uniform
        let q = [0.4, -0.3, 0.1];
        let p_hi = softmax_row(&q.iter().map(|v| v / 1e6).collect::<Vec<_>>());
        for v in &p_hi {
            assert!((v - 1.0 / 3.0).abs() < 0.01);
        }
        // low T: mass on argmax
        let p_lo = softmax_row(&[0.0 / 1e-3, 0.1 / 1e-3]);
        assert!(p_lo[1] > 0.999);
        // q = [0, ln 3], T = 1 -> probs [0.25, 0.75]
        let p = softmax_row(&[0.0, 3.0f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
        // sampling marginals at T=1
        let mut count1 = 0;
        for _ in 0..100_000 {
            if boltzmann(&[0.0, 3.0f64.ln()], 1.0, &mut rng) == 1 {
                count1 += 1;
            }
        }
        assert!((count1 as f64 / 100_000.0 - 0.75).abs() < 0.01);
    }
}
