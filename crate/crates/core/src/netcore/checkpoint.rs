//! Parameter checkpoints: a JSON manifest plus a flat little-endian f64 blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Linear, NetSpec, Params};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: String,
    net_spec: NetSpec,
    /// (out_dim, in_dim) per layer, trunk first then heads.
    shapes: Vec<(usize, usize)>,
    n_trunk: usize,
}

/// Write `<base>.json` and `<base>.bin`. The blob holds all parameters in
/// layer order (w then b per layer), little-endian f64.
pub fn save_params(base: &Path, net_spec: &NetSpec, params: &Params) -> Result<()> {
    let manifest = Manifest {
        version: crate::VERSION.to_string(),
        net_spec: net_spec.clone(),
        shapes: params.shapes(),
        n_trunk: params.trunk.len(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(base.with_extension("json"), json)?;
    let flat = params.to_flat();
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(base.with_extension("bin"), bytes)?;
    Ok(())
}

/// Load a checkpoint written by [`save_params`]. Bit-exact round trip.
pub fn load_params(base: &Path) -> Result<(NetSpec, Params)> {
    let json = fs::read_to_string(base.with_extension("json"))?;
    let manifest: Manifest = serde_json::from_str(&json)?;
    let bytes = fs::read(base.with_extension("bin"))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "blob length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let expected: usize = manifest.shapes.iter().map(|&(o, i)| o * i + o).sum();
    if flat.len() != expected {
        return Err(Error::Checkpoint(format!(
            "blob holds {} values, manifest expects {}",
            flat.len(),
            expected
        )));
    }
    let mut layers: Vec<Linear> = manifest
        .shapes
        .iter()
        .map(|&(o, i)| Linear::zeros(i, o))
        .collect();
    let heads = layers.split_off(manifest.n_trunk);
    let mut params = Params {
        trunk: layers,
        heads,
    };
    params.load_flat(&flat);
    Ok((manifest.net_spec, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{init_params, Activation, HeadSpec, LossKind, OptimizerKind, UpdateKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let spec = NetSpec {
            hid_layers: vec![7, 5],
            activation: Activation::Tanh,
            out_heads: Some(vec![HeadSpec::identity(3), HeadSpec::identity(1)]),
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: Some(0.5),
            loss: LossKind::Huber,
            huber_delta: 1.0,
            polyak_tau: 0.005,
            update: UpdateKind::Polyak,
            update_frequency: 4,
        };
        let params = init_params(&spec, 9, &mut ChaCha8Rng::seed_from_u64(42));
        let dir = std::env::temp_dir().join("rl_core_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let base = dir.join("net0");
        save_params(&base, &spec, &params).unwrap();
        let (spec2, params2) = load_params(&base).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(params.to_flat(), params2.to_flat());
        assert_eq!(params.shapes(), params2.shapes());
    }
}
