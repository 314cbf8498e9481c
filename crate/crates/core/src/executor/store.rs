//! Shared parameter store for Trial-level asynchronous training.
//!
//! Two access disciplines over one flat parameter vector:
//!
//! * hogwild: workers add parameter deltas element-wise with no mutual
//!   exclusion (per-element atomic bit stores, lost updates tolerated by
//!   design) and read best-effort snapshots;
//! * server-worker: workers push accumulated gradients; the store applies
//!   the optimizer step under a lock and hands back the fresh snapshot.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::netcore::{optimizer_step_flat, NetSpec, OptState};
use crate::specfile::DistributedMode;

struct ServerState {
    params: Vec<f64>,
    opt: OptState,
}

pub struct SharedParamStore {
    mode: DistributedMode,
    net_spec: NetSpec,
    /// Hogwild cells: f64 bits behind relaxed atomics. Reads and writes of
    /// one element never tear; read-modify-write is deliberately not
    /// atomic across the add, matching lock-free training semantics.
    cells: Vec<AtomicU64>,
    version: AtomicU64,
    server: Mutex<ServerState>,
}

impl SharedParamStore {
    pub fn new(mode: DistributedMode, init_params: Vec<f64>, net_spec: NetSpec) -> Self {
        let cells = init_params
            .iter()
            .map(|v| AtomicU64::new(v.to_bits()))
            .collect();
        let opt = OptState::new(init_params.len());
        SharedParamStore {
            mode,
            net_spec,
            cells,
            version: AtomicU64::new(0),
            server: Mutex::new(ServerState {
                params: init_params,
                opt,
            }),
        }
    }

    pub fn mode(&self) -> DistributedMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Monotone update counter; strictly increases on every applied update.
    pub fn version(&self) -> u64 {
        self.version.load(Ordering::Acquire)
    }

    /// Current parameters. In hogwild mode this is a best-effort snapshot
    /// (element-wise consistent, not globally); in server mode it is an
    /// exact committed version.
    pub fn snapshot(&self) -> Vec<f64> {
        match self.mode {
            DistributedMode::Hogwild => self
                .cells
                .iter()
                .map(|c| f64::from_bits(c.load(Ordering::Relaxed)))
                .collect(),
            _ => self.server.lock().expect("store lock").params.clone(),
        }
    }

    /// Hogwild write: element-wise read-add-store without mutual exclusion.
    pub fn add_delta(&self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.cells.len());
        for (c, d) in self.cells.iter().zip(delta) {
            let cur = f64::from_bits(c.load(Ordering::Relaxed));
            c.store((cur + d).to_bits(), Ordering::Relaxed);
        }
        self.version.fetch_add(1, Ordering::AcqRel);
    }

    /// Server-worker push: apply one optimizer step with the accumulated
    /// gradients, serialized; returns the fresh snapshot and its version.
    pub fn push_grads(&self, grads: &[f64]) -> (Vec<f64>, u64) {
        let mut s = self.server.lock().expect("store lock");
        let ServerState { params, opt } = &mut *s;
        optimizer_step_flat(params, grads, opt, &self.net_spec);
        let v = self.version.fetch_add(1, Ordering::AcqRel) + 1;
        (s.params.clone(), v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{Activation, HeadSpec, LossKind, OptimizerKind, UpdateKind};
    use std::sync::Arc;

    fn spec(optimizer: OptimizerKind, lr: f64) -> NetSpec {
        NetSpec {
            hid_layers: vec![],
            activation: Activation::Relu,
            out_heads: Some(vec![HeadSpec::identity(1)]),
            optimizer,
            lr,
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
    fn server_push_applies_optimizer_and_bumps_version() {
        let store = SharedParamStore::new(
            DistributedMode::ServerWorker,
            vec![1.0, 2.0],
            spec(OptimizerKind::Sgd, 0.1),
        );
        assert_eq!(store.version(), 0);
        let (p, v) = store.push_grads(&[1.0, -1.0]);
        assert_eq!(v, 1);
        assert_eq!(p, vec![0.9, 2.1]);
        assert_eq!(store.snapshot(), vec![0.9, 2.1]);
    }

    #[test]
    fn server_versions_are_strictly_increasing_under_contention() {
        let store = Arc::new(SharedParamStore::new(
            DistributedMode::ServerWorker,
            vec![0.0; 8],
            spec(OptimizerKind::Sgd, 0.01),
        ));
        let mut handles = Vec::new();
        for _ in 0..4 {
            let s = Arc::clone(&store);
            handles.push(std::thread::spawn(move || {
                let mut versions = Vec::new();
                for _ in 0..50 {
                    let (_, v) = s.push_grads(&[1.0; 8]);
                    versions.push(v);
                }
                versions
            }));
        }
        let mut all: Vec<u64> = handles
            .into_iter()
            .flat_map(|h| h.join().unwrap())
            .collect();
        all.sort_unstable();
        // every version distinct and the count matches the pushes
        let expect: Vec<u64> = (1..=200).collect();
        assert_eq!(all, expect);
        // the final state corresponds to the serial application of all pushes
        let snap = store.snapshot();
        assert!((snap[0] - (-0.01 * 200.0)).abs() < 1e-9);
    }

    #[test]
    fn hogwild_delta_add_and_snapshot() {
        let store = SharedParamStore::new(
            DistributedMode::Hogwild,
            vec![1.0, -1.0],
            spec(OptimizerKind::Sgd, 0.1),
        );
        store.add_delta(&[0.5, 0.25]);
        assert_eq!(store.snapshot(), vec![1.5, -0.75]);
        assert_eq!(store.version(), 1);
    }
}
