//! Experience storage and sampling: on-policy batch memory, uniform ring
//! replay (optionally with combined experience replay), and prioritized
//! replay backed by a sum tree.
//!
//! Memories never store aliases: transitions own their state copies, so
//! mutating a caller-side array after insertion cannot change sampled
//! batches.

mod sum_tree;

pub use sum_tree::SumTree;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Action as stored in a transition.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn discrete(&self) -> usize {
        match self {
            Action::Discrete(a) => *a,
            Action::Continuous(_) => panic!("expected discrete action"),
        }
    }

    pub fn continuous(&self) -> &[f64] {
        match self {
            Action::Continuous(a) => a,
            Action::Discrete(_) => panic!("expected continuous action"),
        }
    }
}

/// Values captured at collection time for on-policy training.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Extras {
    pub log_prob: f64,
    pub value: f64,
    /// Pre-squash Gaussian sample for continuous policies.
    pub pre_squash: Option<Vec<f64>>,
}

/// One environment interaction (s, a, r, s', done).
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub extras: Option<Extras>,
}

impl Transition {
    /// States are copied in; the memory never holds caller aliases.
    pub fn new(state: &[f64], action: Action, reward: f64, next_state: &[f64], done: bool) -> Self {
        Transition {
            state: state.to_vec(),
            action,
            reward,
            next_state: next_state.to_vec(),
            done,
            extras: None,
        }
    }

    pub fn with_extras(mut self, extras: Extras) -> Self {
        self.extras = Some(extras);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Onpolicy,
    Replay,
    PrioritizedReplay,
}

/// Memory section of a spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySpec {
    pub name: MemoryKind,
    pub max_size: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub use_cer: bool,
    #[serde(default = "default_per_alpha")]
    pub per_alpha: f64,
    #[serde(default = "default_per_beta_start")]
    pub per_beta_start: f64,
    #[serde(default = "default_per_beta_end")]
    pub per_beta_end: f64,
    #[serde(default = "default_per_epsilon")]
    pub per_epsilon: f64,
}

fn default_per_alpha() -> f64 {
    0.6
}
fn default_per_beta_start() -> f64 {
    0.4
}
fn default_per_beta_end() -> f64 {
    1.0
}
fn default_per_epsilon() -> f64 {
    0.01
}

/// Fresh-data memory for the on-policy algorithm family. Transitions are
/// stored lane-major (one stream per vector-env lane, time-ordered) so
/// return/advantage scans see contiguous trajectories.
#[derive(Debug)]
pub struct OnPolicyMemory {
    lanes: Vec<Vec<Transition>>,
}

impl OnPolicyMemory {
    pub fn new(num_lanes: usize) -> Self {
        assert!(num_lanes >= 1);
        OnPolicyMemory {
            lanes: vec![Vec::new(); num_lanes],
        }
    }

    pub fn add(&mut self, lane: usize, transition: Transition) {
        self.lanes[lane].push(transition);
    }

    pub fn len(&self) -> usize {
        self.lanes.iter().map(|l| l.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_lanes(&self) -> usize {
        self.lanes.len()
    }

    pub fn lanes(&self) -> &[Vec<Transition>] {
        &self.lanes
    }

    /// Remove and return everything, lane-major and time-ordered per lane.
    /// Draining an empty memory is a training-schedule bug.
    pub fn drain(&mut self) -> Result<Vec<Vec<Transition>>> {
        if self.is_empty() {
            return Err(Error::EmptyMemory("on-policy drain".into()));
        }
        let n = self.lanes.len();
        let lanes = std::mem::replace(&mut self.lanes, vec![Vec::new(); n]);
        Ok(lanes)
    }
}

/// Uniform ring replay, sampling i.i.d. with replacement. With `use_cer`
/// the most recently added transition replaces one sampled slot.
#[derive(Debug)]
pub struct ReplayMemory {
    buf: Vec<Transition>,
    write: usize,
    max_size: usize,
    batch_size: usize,
    use_cer: bool,
}

impl ReplayMemory {
    pub fn new(spec: &MemorySpec) -> Self {
        assert!(spec.max_size >= spec.batch_size && spec.batch_size >= 1);
        ReplayMemory {
            buf: Vec::with_capacity(spec.max_size.min(1 << 16)),
            write: 0,
            max_size: spec.max_size,
            batch_size: spec.batch_size,
            use_cer: spec.use_cer,
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Ring-buffer insert, overwriting the oldest once full.
    pub fn add(&mut self, transition: Transition) {
        if self.buf.len() < self.max_size {
            self.buf.push(transition);
            self.write = self.buf.len() % self.max_size;
        } else {
            self.buf[self.write] = transition;
            self.write = (self.write + 1) % self.max_size;
        }
    }

    /// Index of the most recently added transition.
    fn latest(&self) -> usize {
        (self.write + self.max_size.min(self.buf.len()) - 1) % self.max_size.min(self.buf.len()).max(1)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Vec<Transition>> {
        if self.buf.len() < self.batch_size {
            return Err(Error::InsufficientData {
                have: self.buf.len(),
                need: self.batch_size,
            });
        }
        let mut batch: Vec<Transition> = (0..self.batch_size)
            .map(|_| self.buf[rng.random_range(0..self.buf.len())].clone())
            .collect();
        if self.use_cer {
            let last = self.latest();
            batch[0] = self.buf[last].clone();
        }
        Ok(batch)
    }

    /// Time-ordered view of the last `min(adds, max_size)` transitions.
    pub fn contents_in_order(&self) -> Vec<&Transition> {
        if self.buf.len() < self.max_size {
            self.buf.iter().collect()
        } else {
            let mut out = Vec::with_capacity(self.buf.len());
            for k in 0..self.buf.len() {
                out.push(&self.buf[(self.write + k) % self.buf.len()]);
            }
            out
        }
    }
}

/// Handle to a sampled prioritized slot, carrying an insertion stamp so
/// overwrites between sample and priority write-back are detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleIndex {
    pub slot: usize,
    pub stamp: u64,
}

/// Prioritized replay: ring storage, sum-tree index, stratified sampling,
/// importance-sampling weights.
#[derive(Debug)]
pub struct PerMemory {
    tree: SumTree,
    slots: Vec<Option<Transition>>,
    stamps: Vec<u64>,
    write: usize,
    size: usize,
    next_stamp: u64,
    stale_updates: u64,
    max_size: usize,
    batch_size: usize,
    alpha: f64,
    epsilon: f64,
}

impl PerMemory {
    pub fn new(spec: &MemorySpec) -> Self {
        assert!(spec.max_size >= spec.batch_size && spec.batch_size >= 1);
        assert!(spec.per_alpha >= 0.0);
        PerMemory {
            tree: SumTree::new(spec.max_size),
            slots: vec![None; spec.max_size],
            stamps: vec![0; spec.max_size],
            write: 0,
            size: 0,
            next_stamp: 1,
            stale_updates: 0,
            max_size: spec.max_size,
            batch_size: spec.batch_size,
            alpha: spec.per_alpha,
            epsilon: spec.per_epsilon,
        }
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn stale_update_count(&self) -> u64 {
        self.stale_updates
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    /// Insert with priority equal to the current max leaf priority (1.0 on
    /// an empty memory) so new data is sampled at least once.
    pub fn add(&mut self, transition: Transition) {
        let priority = if self.size == 0 {
            1.0
        } else {
            self.tree.max_priority()
        };
        let slot = self.write;
        self.slots[slot] = Some(transition);
        self.stamps[slot] = self.next_stamp;
        self.next_stamp += 1;
        self.tree.set(slot, priority);
        self.write = (self.write + 1) % self.max_size;
        self.size = (self.size + 1).min(self.max_size);
    }

    /// Stratified sample: the total priority mass is split into
    /// `batch_size` equal segments with one uniform draw per segment.
    /// Returns transitions, slot handles, and importance weights
    /// w_i = (N * P(i))^(-beta) normalized by the batch max.
    pub fn sample<R: Rng>(
        &self,
        beta: f64,
        rng: &mut R,
    ) -> Result<(Vec<Transition>, Vec<SampleIndex>, Vec<f64>)> {
        if self.size < self.batch_size {
            return Err(Error::InsufficientData {
                have: self.size,
                need: self.batch_size,
            });
        }
        let total = self.tree.total();
        let seg = total / self.batch_size as f64;
        let n = self.size as f64;
        let mut batch = Vec::with_capacity(self.batch_size);
        let mut indices = Vec::with_capacity(self.batch_size);
        let mut weights = Vec::with_capacity(self.batch_size);
        for k in 0..self.batch_size {
            let u = (seg * k as f64 + rng.random_range(0.0..seg)).min(total * (1.0 - 1e-12));
            let mut slot = self.tree.prefix_descend(u);
            if self.slots[slot].is_none() {
                slot = self.size - 1; // float edge beyond the last filled leaf
            }
            let p = self.tree.get(slot) / total;
            weights.push((n * p).powf(-beta));
            indices.push(SampleIndex {
                slot,
                stamp: self.stamps[slot],
            });
            batch.push(self.slots[slot].clone().unwrap());
        }
        let w_max = weights.iter().cloned().fold(f64::MIN, f64::max);
        for w in &mut weights {
            *w /= w_max;
        }
        Ok((batch, indices, weights))
    }

    /// Write back p_i = (|delta_i| + epsilon)^alpha. Slots overwritten since
    /// sampling are skipped and counted, not errors: overwrites between
    /// sample and update are legal in a ring buffer.
    pub fn update_priorities(&mut self, indices: &[SampleIndex], td_errors: &[f64]) {
        debug_assert_eq!(indices.len(), td_errors.len());
        for (idx, delta) in indices.iter().zip(td_errors) {
            if self.stamps[idx.slot] != idx.stamp {
                self.stale_updates += 1;
                continue;
            }
            let p = (delta.abs() + self.epsilon).powf(self.alpha);
            self.tree.set(idx.slot, p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(v: f64) -> Transition {
        Transition::new(&[v], Action::Discrete(0), v, &[v + 1.0], false)
    }

    fn mem_spec(name: MemoryKind, max_size: usize, batch_size: usize) -> MemorySpec {
        MemorySpec {
            name,
            max_size,
            batch_size,
            use_cer: false,
            per_alpha: 0.6,
            per_beta_start: 0.4,
            per_beta_end: 1.0,
            per_epsilon: 0.01,
        }
    }

    #[test]
    fn onpolicy_drain_returns_in_order_and_empties() {
        let mut m = OnPolicyMemory::new(1);
        for i in 0..5 {
            m.add(0, t(i as f64));
        }
        let lanes = m.drain().unwrap();
        assert_eq!(lanes[0].len(), 5);
        for (i, tr) in lanes[0].iter().enumerate() {
            assert_eq!(tr.state[0], i as f64);
        }
        assert!(m.is_empty());
        assert!(matches!(m.drain(), Err(Error::EmptyMemory(_))));
    }

    #[test]
    fn onpolicy_lane_major_preserves_per_lane_time_order() {
        let mut m = OnPolicyMemory::new(4);
        // interleave adds across lanes
        for step in 0..3 {
            for lane in 0..4 {
                m.add(lane, t((lane * 10 + step) as f64));
            }
        }
        let lanes = m.drain().unwrap();
        for (lane, stream) in lanes.iter().enumerate() {
            let got: Vec<f64> = stream.iter().map(|tr| tr.state[0]).collect();
            let expect: Vec<f64> = (0..3).map(|s| (lane * 10 + s) as f64).collect();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn replay_ring_overwrites_oldest() {
        let mut m = ReplayMemory::new(&mem_spec(MemoryKind::Replay, 3, 1));
        for i in 1..=4 {
            m.add(t(i as f64));
            assert!(m.len() <= 3);
        }
        let mut seen: Vec<f64> = m.contents_in_order().iter().map(|tr| tr.state[0]).collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn replay_contents_in_order_equals_last_k_adds() {
        let mut m = ReplayMemory::new(&mem_spec(MemoryKind::Replay, 4, 1));
        for i in 0..11 {
            m.add(t(i as f64));
        }
        let got: Vec<f64> = m.contents_in_order().iter().map(|tr| tr.state[0]).collect();
        assert_eq!(got, vec![7.0, 8.0, 9.0, 10.0]);
    }

    #[test]
    fn replay_stores_copies_not_aliases() {
        let mut m = ReplayMemory::new(&mem_spec(MemoryKind::Replay, 4, 1));
        let mut state = vec![1.0, 2.0];
        m.add(Transition::new(&state, Action::Discrete(0), 0.0, &state, false));
        state[0] = 99.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = m.sample(&mut rng).unwrap();
        assert_eq!(batch[0].state, vec![1.0, 2.0]);
    }

    #[test]
    fn replay_uniform_frequencies() {
        let mut m = ReplayMemory::new(&mem_spec(MemoryKind::Replay, 4, 1));
        for i in 0..4 {
            m.add(t(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 4];
        for _ in 0..100_000 {
            let b = m.sample(&mut rng).unwrap();
            counts[b[0].state[0] as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / 100_000.0;
            assert!((f - 0.25).abs() < 0.01, "freq {f}");
        }
    }

    #[test]
    fn cer_always_includes_latest() {
        let mut spec = mem_spec(MemoryKind::Replay, 8, 3);
        spec.use_cer = true;
        let mut m = ReplayMemory::new(&spec);
        for i in 0..8 {
            m.add(t(i as f64));
        }
        // wrap the ring a couple of times
        for i in 8..19 {
            m.add(t(i as f64));
            let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
            let batch = m.sample(&mut rng).unwrap();
            assert!(batch.iter().any(|tr| tr.state[0] == i as f64));
        }
    }

    #[test]
    fn sample_insufficient_data_errors() {
        let m = ReplayMemory::new(&mem_spec(MemoryKind::Replay, 4, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            m.sample(&mut rng),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn per_first_insert_gets_priority_one() {
        let mut m = PerMemory::new(&mem_spec(MemoryKind::PrioritizedReplay, 8, 1));
        m.add(t(0.0));
        assert_eq!(m.tree().get(0), 1.0);
    }

    #[test]
    fn per_new_insert_inherits_current_max() {
        let mut m = PerMemory::new(&mem_spec(MemoryKind::PrioritizedReplay, 8, 1));
        m.add(t(0.0));
        m.update_priorities(&[SampleIndex { slot: 0, stamp: 1 }], &[8.28]); // (8.28+0.01)^0.6 ~ 3.56
        let expect = (8.29f64).powf(0.6);
        m.add(t(1.0));
        assert!((m.tree().get(1) - expect).abs() < 1e-12);
    }

    #[test]
    fn per_total_increases_by_inserted_priority() {
        let mut m = PerMemory::new(&mem_spec(MemoryKind::PrioritizedReplay, 4, 1));
        m.add(t(0.0));
        let before = m.tree().total();
        m.add(t(1.0));
        assert!((m.tree().total() - before - 1.0).abs() < 1e-12);
        // overwrite path: fill and wrap
        for i in 2..6 {
            m.add(t(i as f64));
        }
        let before = m.tree().total();
        let overwritten = m.tree().get(2);
        m.add(t(9.0));
        let inserted = m.tree().get(2);
        assert!((m.tree().total() - (before - overwritten + inserted)).abs() < 1e-9);
    }

    #[test]
    fn per_priority_formula() {
        let mut m = PerMemory::new(&mem_spec(MemoryKind::PrioritizedReplay, 8, 1));
        m.add(t(0.0));
        m.update_priorities(&[SampleIndex { slot: 0, stamp: 1 }], &[0.0]);
        assert!((m.tree().get(0) - 0.01f64.powf(0.6)).abs() < 1e-12);

        let mut spec = mem_spec(MemoryKind::PrioritizedReplay, 8, 1);
        spec.per_alpha = 0.0;
        let mut m = PerMemory::new(&spec);
        m.add(t(0.0));
        m.add(t(1.0));
        m.update_priorities(
            &[
                SampleIndex { slot: 0, stamp: 1 },
                SampleIndex { slot: 1, stamp: 2 },
            ],
            &[3.7, 1234.5],
        );
        assert_eq!(m.tree().get(0), 1.0);
        assert_eq!(m.tree().get(1), 1.0);
    }

    #[test]
    fn per_stale_updates_are_skipped_and_counted() {
        let mut m = PerMemory::new(&mem_spec(MemoryKind::PrioritizedReplay, 2, 1));
        m.add(t(0.0));
        m.add(t(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, indices, _) = m.sample(1.0, &mut rng).unwrap();
        m.add(t(2.0)); // overwrites slot 0
        m.update_priorities(&indices, &[5.0]);
        let stale_expected = indices.iter().filter(|i| i.slot == 0).count() as u64;
        assert_eq!(m.stale_update_count(), stale_expected);
    }

    #[test]
    fn per_beta_zero_gives_unit_weights() {
        let mut m = PerMemory::new(&mem_spec(MemoryKind::PrioritizedReplay, 8, 4));
        for i in 0..6 {
            m.add(t(i as f64));
        }
        m.update_priorities(
            &(1..=6)
                .map(|s| SampleIndex {
                    slot: s - 1,
                    stamp: s as u64,
                })
                .collect::<Vec<_>>(),
            &[0.3, 1.0, 2.0, 0.1, 4.0, 0.9],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, _, w) = m.sample(0.0, &mut rng).unwrap();
        assert!(w.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn per_equal_priorities_give_unit_weights() {
        let mut m = PerMemory::new(&mem_spec(MemoryKind::PrioritizedReplay, 8, 4));
        for i in 0..8 {
            m.add(t(i as f64)); // all inherit priority 1.0
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, _, w) = m.sample(0.7, &mut rng).unwrap();
        assert!(w.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn per_sampling_frequencies_match_priorities() {
        let mut m = PerMemory::new(&mem_spec(MemoryKind::PrioritizedReplay, 4, 4));
        for i in 0..4 {
            m.add(t(i as f64));
        }
        // alpha=0.6: pick deltas so transformed priorities are exactly 1,2,3,4
        let deltas: Vec<f64> = (1..=4).map(|p| (p as f64).powf(1.0 / 0.6) - 0.01).collect();
        m.update_priorities(
            &(0..4)
                .map(|s| SampleIndex {
                    slot: s,
                    stamp: (s + 1) as u64,
                })
                .collect::<Vec<_>>(),
            &deltas,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        let draws = 25_000; // x4 per batch = 1e5 samples
        for _ in 0..draws {
            let (batch, _, _) = m.sample(0.4, &mut rng).unwrap();
            for tr in batch {
                counts[tr.state[0] as usize] += 1;
            }
        }
        let total = (draws * 4) as f64;
        for (i, c) in counts.iter().enumerate() {
            let f = *c as f64 / total;
            let expect = (i + 1) as f64 / 10.0;
            assert!((f - expect).abs() < 0.01, "item {i}: {f} vs {expect}");
        }
    }
}
