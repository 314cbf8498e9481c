//! Sum tree over leaf priorities with prefix-sum descent, plus a mirrored
//! max tree so the current maximum leaf priority is exact after overwrites.

/// Binary indexed sum tree. Capacity is rounded up to a power of two; unused
/// leaves hold priority zero and are never returned by descent.
#[derive(Debug, Clone)]
pub struct SumTree {
    capacity: usize,
    sums: Vec<f64>,
    maxes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        let cap = capacity.next_power_of_two();
        SumTree {
            capacity: cap,
            sums: vec![0.0; 2 * cap],
            maxes: vec![0.0; 2 * cap],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> f64 {
        self.sums[1]
    }

    /// Maximum leaf priority currently stored (0 when all leaves are empty).
    pub fn max_priority(&self) -> f64 {
        self.maxes[1]
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.sums[self.capacity + leaf]
    }

    pub fn set(&mut self, leaf: usize, priority: f64) {
        debug_assert!(leaf < self.capacity);
        debug_assert!(priority >= 0.0 && priority.is_finite());
        let mut i = self.capacity + leaf;
        self.sums[i] = priority;
        self.maxes[i] = priority;
        while i > 1 {
            i /= 2;
            self.sums[i] = self.sums[2 * i] + self.sums[2 * i + 1];
            self.maxes[i] = self.maxes[2 * i].max(self.maxes[2 * i + 1]);
        }
    }

    /// Locate the leaf whose cumulative-priority interval contains `u`.
    /// `u` must lie in `[0, total())`.
    pub fn prefix_descend(&self, mut u: f64) -> usize {
        let mut i = 1;
        while i < self.capacity {
            let left = 2 * i;
            if u < self.sums[left] {
                i = left;
            } else {
                u -= self.sums[left];
                i = left + 1;
            }
        }
        i - self.capacity
    }

    /// Worst absolute discrepancy between any internal node and the sum of
    /// its children.
    pub fn audit(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 1..self.capacity {
            let d = (self.sums[i] - (self.sums[2 * i] + self.sums[2 * i + 1])).abs();
            worst = worst.max(d);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn total_and_max_track_leaves() {
        let mut t = SumTree::new(5); // rounds to 8
        assert_eq!(t.capacity(), 8);
        t.set(0, 1.0);
        t.set(3, 2.5);
        assert!((t.total() - 3.5).abs() < 1e-15);
        assert_eq!(t.max_priority(), 2.5);
        t.set(3, 0.5);
        assert_eq!(t.max_priority(), 1.0); // max is exact after lowering
    }

    #[test]
    fn descent_matches_linear_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(1..=64);
            let mut t = SumTree::new(n);
            let ps: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
            for (i, p) in ps.iter().enumerate() {
                t.set(i, *p);
            }
            if t.total() == 0.0 {
                continue;
            }
            for _ in 0..200 {
                let u = rng.random_range(0.0..t.total());
                let leaf = t.prefix_descend(u);
                // linear-scan oracle
                let mut acc = 0.0;
                let mut expect = ps.len() - 1;
                for (i, p) in ps.iter().enumerate() {
                    if u < acc + p {
                        expect = i;
                        break;
                    }
                    acc += p;
                }
                assert_eq!(leaf, expect, "u={u} ps={ps:?}");
            }
        }
    }

    #[test]
    fn audit_after_random_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut t = SumTree::new(128);
        for _ in 0..10_000 {
            let leaf = rng.random_range(0..128);
            let p = rng.random_range(0.0..10.0);
            t.set(leaf, p);
        }
        assert!(t.audit() <= 1e-9);
    }
}
