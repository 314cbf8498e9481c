//! Forward pass and exact reverse-mode gradients for the trunk-plus-heads MLP.

use rand::Rng;

use super::{Activation, HeadActivation, Linear, NetSpec, Params, Tensor};
use crate::error::{Error, Result};

/// Scaled uniform fan-in initialization: weights ~ U(-1/sqrt(in), 1/sqrt(in)),
/// biases zero.
pub fn init_params<R: Rng>(net_spec: &NetSpec, in_dim: usize, rng: &mut R) -> Params {
    assert!(in_dim >= 1, "in_dim must be >= 1");
    let mut trunk = Vec::new();
    let mut cur = in_dim;
    for &width in &net_spec.hid_layers {
        trunk.push(init_linear(cur, width, rng));
        cur = width;
    }
    let heads = net_spec
        .heads()
        .iter()
        .map(|h| init_linear(cur, h.width, rng))
        .collect();
    Params { trunk, heads }
}

fn init_linear<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Linear {
    let bound = 1.0 / (in_dim as f64).sqrt();
    let w = (0..in_dim * out_dim)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Linear {
        in_dim,
        out_dim,
        w,
        b: vec![0.0; out_dim],
    }
}

/// y[b,o] = sum_i x[b,i] * w[o,i] + b[o]
fn linear_forward(x: &Tensor, layer: &Linear) -> Tensor {
    let batch = x.rows();
    let mut out = Tensor::zeros(vec![batch, layer.out_dim]);
    for bi in 0..batch {
        let xr = x.row(bi);
        let yr = out.row_mut(bi);
        for o in 0..layer.out_dim {
            let wr = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
            let mut acc = layer.b[o];
            for (xi, wi) in xr.iter().zip(wr) {
                acc += xi * wi;
            }
            yr[o] = acc;
        }
    }
    out
}

fn apply_activation(t: &mut Tensor, act: Activation) {
    match act {
        Activation::Relu => {
            for v in t.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Activation::Tanh => {
            for v in t.data_mut() {
                *v = v.tanh();
            }
        }
    }
}

fn apply_head_activation(t: &mut Tensor, act: HeadActivation) {
    match act {
        HeadActivation::Identity => {}
        HeadActivation::Tanh => {
            for v in t.data_mut() {
                *v = v.tanh();
            }
        }
    }
}

/// Post-activation values cached during a forward pass, for backprop.
pub struct ForwardCache {
    /// Trunk outputs after activation, one per hidden layer.
    pub trunk_post: Vec<Tensor>,
    /// Head outputs after head activation.
    pub head_out: Vec<Tensor>,
}

impl ForwardCache {
    pub fn outputs(&self) -> &[Tensor] {
        &self.head_out
    }
}

fn check_input(params: &Params, input: &Tensor) -> Result<()> {
    let expect = params.in_dim();
    if input.shape().len() != 2 || input.cols() != expect {
        return Err(Error::shape(
            "forward input",
            &[input.rows(), expect],
            input.shape(),
        ));
    }
    Ok(())
}

/// Forward pass keeping intermediate activations.
pub fn forward_cached(params: &Params, net_spec: &NetSpec, input: &Tensor) -> Result<ForwardCache> {
    check_input(params, input)?;
    let mut trunk_post = Vec::with_capacity(params.trunk.len());
    let mut cur = input;
    for layer in &params.trunk {
        let mut h = linear_forward(cur, layer);
        apply_activation(&mut h, net_spec.activation);
        trunk_post.push(h);
        cur = trunk_post.last().unwrap();
    }
    let mut head_out = Vec::with_capacity(params.heads.len());
    for (layer, hs) in params.heads.iter().zip(net_spec.heads()) {
        let mut y = linear_forward(cur, layer);
        apply_head_activation(&mut y, hs.activation);
        head_out.push(y);
    }
    Ok(ForwardCache {
        trunk_post,
        head_out,
    })
}

/// Forward pass: one output tensor `[batch, head_width]` per head.
pub fn forward(params: &Params, net_spec: &NetSpec, input: &Tensor) -> Result<Vec<Tensor>> {
    Ok(forward_cached(params, net_spec, input)?.head_out)
}

/// Exact gradients of `sum_j head_j . head_output_grads_j` with respect to
/// every parameter and to the input.
pub fn backward(
    params: &Params,
    net_spec: &NetSpec,
    input: &Tensor,
    head_output_grads: &[Tensor],
) -> Result<(Params, Tensor)> {
    let cache = forward_cached(params, net_spec, input)?;
    backward_from_cache(params, net_spec, input, &cache, head_output_grads)
}

/// Backward pass reusing a cache from [`forward_cached`] on the same input.
pub fn backward_from_cache(
    params: &Params,
    net_spec: &NetSpec,
    input: &Tensor,
    cache: &ForwardCache,
    head_output_grads: &[Tensor],
) -> Result<(Params, Tensor)> {
    if head_output_grads.len() != params.heads.len() {
        return Err(Error::length(
            "backward head grads",
            head_output_grads.len(),
            params.heads.len(),
        ));
    }
    for (g, y) in head_output_grads.iter().zip(&cache.head_out) {
        if g.shape() != y.shape() {
            return Err(Error::shape("backward head grad", y.shape(), g.shape()));
        }
    }
    let batch = input.rows();
    let mut grads = Params::zeros_like(params);
    let trunk_in = |i: usize| -> &Tensor {
        if i == 0 {
            input
        } else {
            &cache.trunk_post[i - 1]
        }
    };
    let last_hidden = if params.trunk.is_empty() {
        input
    } else {
        cache.trunk_post.last().unwrap()
    };

    // d(loss)/d(last hidden), accumulated over heads
    let mut dh = Tensor::zeros(vec![batch, last_hidden.cols()]);
    for (j, (layer, hs)) in params.heads.iter().zip(net_spec.heads()).enumerate() {
        let mut dpre = head_output_grads[j].clone();
        if hs.activation == HeadActivation::Tanh {
            let y = &cache.head_out[j];
            for (g, yv) in dpre.data_mut().iter_mut().zip(y.data()) {
                *g *= 1.0 - yv * yv;
            }
        }
        accumulate_linear_grads(&dpre, last_hidden, layer, &mut grads.heads[j], &mut dh);
    }

    for i in (0..params.trunk.len()).rev() {
        let post = &cache.trunk_post[i];
        let mut dpre = dh;
        match net_spec.activation {
            Activation::Relu => {
                for (g, yv) in dpre.data_mut().iter_mut().zip(post.data()) {
                    if *yv <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (g, yv) in dpre.data_mut().iter_mut().zip(post.data()) {
                    *g *= 1.0 - yv * yv;
                }
            }
        }
        let x = trunk_in(i);
        dh = Tensor::zeros(vec![batch, x.cols()]);
        accumulate_linear_grads(&dpre, x, &params.trunk[i], &mut grads.trunk[i], &mut dh);
    }

    Ok((grads, dh))
}

/// dW[o,i] += sum_b dpre[b,o] * x[b,i]; db[o] += sum_b dpre[b,o];
/// dx[b,i] += sum_o dpre[b,o] * w[o,i]
fn accumulate_linear_grads(
    dpre: &Tensor,
    x: &Tensor,
    layer: &Linear,
    grad: &mut Linear,
    dx: &mut Tensor,
) {
    let batch = x.rows();
    for bi in 0..batch {
        let dr = dpre.row(bi);
        let xr = x.row(bi);
        let dxr = dx.row_mut(bi);
        for o in 0..layer.out_dim {
            let d = dr[o];
            if d == 0.0 {
                continue;
            }
            grad.b[o] += d;
            let wrow = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
            let gwrow = &mut grad.w[o * layer.in_dim..(o + 1) * layer.in_dim];
            for i in 0..layer.in_dim {
                gwrow[i] += d * xr[i];
                dxr[i] += d * wrow[i];
            }
        }
    }
}

/// Compare [`backward`] against central finite differences of the scalar
/// probe loss `sum_j probe_j . head_j(params, input)`. Returns the worst
/// relative error over all parameters.
pub fn grad_check(
    net_spec: &NetSpec,
    params: &Params,
    input: &Tensor,
    probe_head_weights: &[Tensor],
    h: f64,
) -> Result<f64> {
    assert!(h > 0.0);
    let probe_loss = |p: &Params| -> Result<f64> {
        let outs = forward(p, net_spec, input)?;
        let mut loss = 0.0;
        for (o, w) in outs.iter().zip(probe_head_weights) {
            for (ov, wv) in o.data().iter().zip(w.data()) {
                loss += ov * wv;
            }
        }
        Ok(loss)
    };
    let (analytic, _) = backward(params, net_spec, input, probe_head_weights)?;
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    let n_arrays = analytic.arrays().count();
    for ai in 0..n_arrays {
        let len = analytic.arrays().nth(ai).unwrap().len();
        for k in 0..len {
            let orig = probe.arrays().nth(ai).unwrap()[k];
            probe.arrays_mut().nth(ai).unwrap()[k] = orig + h;
            let up = probe_loss(&probe)?;
            probe.arrays_mut().nth(ai).unwrap()[k] = orig - h;
            let down = probe_loss(&probe)?;
            probe.arrays_mut().nth(ai).unwrap()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.arrays().nth(ai).unwrap()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{HeadSpec, LossKind, OptimizerKind, UpdateKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(hid: Vec<usize>, act: Activation, heads: Vec<HeadSpec>) -> NetSpec {
        NetSpec {
            hid_layers: hid,
            activation: act,
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

    #[test]
    fn init_shapes_and_zero_biases() {
        let s = spec(vec![4], Activation::Relu, vec![HeadSpec::identity(2)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = init_params(&s, 3, &mut rng);
        assert_eq!(p.shapes(), vec![(4, 3), (2, 4)]);
        assert!(p.trunk[0].b.iter().all(|&b| b == 0.0));
        assert!(p.heads[0].b.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let s = spec(vec![8, 8], Activation::Tanh, vec![HeadSpec::identity(3)]);
        let a = init_params(&s, 5, &mut ChaCha8Rng::seed_from_u64(7));
        let b = init_params(&s, 5, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_net_gives_zero_outputs() {
        let s = spec(vec![4], Activation::Relu, vec![HeadSpec::identity(2)]);
        let p = Params {
            trunk: vec![Linear::zeros(3, 4)],
            heads: vec![Linear::zeros(4, 2)],
        };
        let input = Tensor::from_rows(&[vec![1.0, -2.0, 3.0]]);
        let out = forward(&p, &s, &input).unwrap();
        assert!(out[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let s = spec(vec![], Activation::Relu, vec![HeadSpec::identity(3)]);
        let mut head = Linear::zeros(3, 3);
        for i in 0..3 {
            head.w[i * 3 + i] = 1.0;
        }
        let p = Params {
            trunk: vec![],
            heads: vec![head],
        };
        let input = Tensor::from_rows(&[vec![0.5, -1.5, 2.0]]);
        let out = forward(&p, &s, &input).unwrap();
        assert_eq!(out[0].data(), input.data());
    }

    #[test]
    fn batch_rows_are_independent() {
        let s = spec(vec![6], Activation::Tanh, vec![HeadSpec::identity(2)]);
        let p = init_params(&s, 4, &mut ChaCha8Rng::seed_from_u64(3));
        let row = vec![0.3, -0.7, 1.1, 0.0];
        let input = Tensor::from_rows(&[row.clone(), row]);
        let out = forward(&p, &s, &input).unwrap();
        assert_eq!(out[0].row(0), out[0].row(1));
    }

    #[test]
    fn input_width_mismatch_reports_shapes() {
        let s = spec(vec![4], Activation::Relu, vec![HeadSpec::identity(2)]);
        let p = init_params(&s, 3, &mut ChaCha8Rng::seed_from_u64(0));
        let input = Tensor::from_rows(&[vec![1.0, 2.0]]);
        let err = forward(&p, &s, &input).unwrap_err();
        assert!(err.to_string().contains("expected"));
    }

    #[test]
    fn zero_upstream_grads_give_zero_grads() {
        let s = spec(vec![4], Activation::Tanh, vec![HeadSpec::identity(2)]);
        let p = init_params(&s, 3, &mut ChaCha8Rng::seed_from_u64(1));
        let input = Tensor::from_rows(&[vec![0.1, 0.2, 0.3]]);
        let g = vec![Tensor::zeros(vec![1, 2])];
        let (grads, dx) = backward(&p, &s, &input, &g).unwrap();
        assert!(grads.arrays().all(|a| a.iter().all(|&v| v == 0.0)));
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_analytic_grads() {
        // y = Wx + b, upstream g: dW = g x^T, db = g, dx = W^T g
        let s = spec(vec![], Activation::Relu, vec![HeadSpec::identity(2)]);
        let head = Linear {
            in_dim: 2,
            out_dim: 2,
            w: vec![1.0, 2.0, 3.0, 4.0],
            b: vec![0.0, 0.0],
        };
        let p = Params {
            trunk: vec![],
            heads: vec![head],
        };
        let input = Tensor::from_rows(&[vec![5.0, 7.0]]);
        let g = vec![Tensor::from_rows(&[vec![1.0, -1.0]])];
        let (grads, dx) = backward(&p, &s, &input, &g).unwrap();
        assert_eq!(grads.heads[0].w, vec![5.0, 7.0, -5.0, -7.0]);
        assert_eq!(grads.heads[0].b, vec![1.0, -1.0]);
        assert_eq!(dx.data(), &[1.0 - 3.0, 2.0 - 4.0]);
    }

    #[test]
    fn grad_check_two_hidden_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for act in [Activation::Relu, Activation::Tanh] {
            let s = spec(
                vec![8, 6],
                act,
                vec![HeadSpec::identity(3), HeadSpec { width: 2, activation: HeadActivation::Tanh }],
            );
            let p = init_params(&s, 5, &mut rng);
            let input = Tensor::from_rows(&[
                (0..5).map(|_| rng.random_range(0.1..1.0)).collect(),
                (0..5).map(|_| rng.random_range(-1.0..-0.1)).collect(),
            ]);
            let probe = vec![
                Tensor::new(vec![2, 3], (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
                Tensor::new(vec![2, 2], (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
            ];
            let err = grad_check(&s, &p, &input, &probe, 1e-6).unwrap();
            assert!(err < 1e-6, "grad check error {err} for {act:?}");
        }
    }
}
