//! Minimal differentiable multilayer-perceptron engine.
//!
//! Forward pass, exact reverse-mode gradients, losses, optimizers, gradient
//! clipping, and target-network updates. All math is in 64-bit floats so
//! gradient tests can use tight tolerances. MLP only: a trunk of hidden
//! layers feeding one or more output heads (shared-body actor-critic nets
//! use two heads).

mod checkpoint;
mod mlp;
mod optim;
mod tensor;

pub use checkpoint::{load_params, save_params};
pub use mlp::{
    backward, backward_from_cache, forward, forward_cached, grad_check, init_params, ForwardCache,
};
pub use optim::{clip_grad_norm, loss_and_grad, optimizer_step, optimizer_step_flat, update_target, OptState};
pub use tensor::Tensor;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadActivation {
    Identity,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Huber,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Replace,
    Polyak,
}

/// One output head: width plus output activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub width: usize,
    pub activation: HeadActivation,
}

impl HeadSpec {
    pub fn identity(width: usize) -> Self {
        HeadSpec {
            width,
            activation: HeadActivation::Identity,
        }
    }
}

/// Network section of a spec file.
///
/// `out_heads` may be omitted in spec files; the algorithm derives head
/// shapes from the environment's observation/action dimensions when the
/// agent is built. All other fields are free hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub hid_layers: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub out_heads: Option<Vec<HeadSpec>>,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub grad_clip_norm: Option<f64>,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_huber_delta")]
    pub huber_delta: f64,
    #[serde(default = "default_polyak_tau")]
    pub polyak_tau: f64,
    #[serde(default = "default_update")]
    pub update: UpdateKind,
    #[serde(default = "default_update_frequency")]
    pub update_frequency: u64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_loss() -> LossKind {
    LossKind::Mse
}
fn default_huber_delta() -> f64 {
    1.0
}
fn default_polyak_tau() -> f64 {
    0.005
}
fn default_update() -> UpdateKind {
    UpdateKind::Replace
}
fn default_update_frequency() -> u64 {
    1
}

impl NetSpec {
    /// Copy of this spec with the given output heads resolved in.
    pub fn with_heads(&self, heads: Vec<HeadSpec>) -> NetSpec {
        let mut s = self.clone();
        s.out_heads = Some(heads);
        s
    }

    pub fn heads(&self) -> &[HeadSpec] {
        self.out_heads
            .as_deref()
            .expect("NetSpec.out_heads must be resolved before building a net")
    }
}

/// One dense layer: weights `[out_dim x in_dim]` row-major plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }
}

/// Per-layer weight matrices and bias vectors for trunk and heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub trunk: Vec<Linear>,
    pub heads: Vec<Linear>,
}

/// Gradients mirror [`Params`] shape-for-shape.
pub type Grads = Params;

impl Params {
    pub fn zeros_like(other: &Params) -> Params {
        Params {
            trunk: other
                .trunk
                .iter()
                .map(|l| Linear::zeros(l.in_dim, l.out_dim))
                .collect(),
            heads: other
                .heads
                .iter()
                .map(|l| Linear::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.trunk
            .first()
            .map(|l| l.in_dim)
            .unwrap_or_else(|| self.heads.first().map(|l| l.in_dim).unwrap_or(0))
    }

    /// Flat parameter count across all layers.
    pub fn flat_len(&self) -> usize {
        self.arrays().map(|a| a.len()).sum()
    }

    /// All parameter arrays in a fixed order (trunk w/b, then heads w/b).
    pub fn arrays(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.trunk
            .iter()
            .chain(self.heads.iter())
            .flat_map(|l| [&l.w, &l.b])
    }

    pub fn arrays_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.trunk
            .iter_mut()
            .chain(self.heads.iter_mut())
            .flat_map(|l| [&mut l.w, &mut l.b])
    }

    /// Parameters flattened to one vector in layer order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for a in self.arrays() {
            out.extend_from_slice(a);
        }
        out
    }

    /// Overwrite parameters from a flat vector in layer order.
    pub fn load_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for a in self.arrays_mut() {
            let len = a.len();
            a.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        debug_assert_eq!(off, flat.len());
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.trunk
            .iter()
            .chain(self.heads.iter())
            .map(|l| (l.out_dim, l.in_dim))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().all(|a| a.iter().all(|v| v.is_finite()))
    }
}
