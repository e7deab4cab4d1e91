//! Binary sum tree over nonnegative weights: O(log n) updates and
//! proportional sampling.

#[derive(Debug, Clone)]
pub(crate) struct SumTree {
    leaves: usize,
    // 1-based heap layout; leaf i lives at `base + i`.
    base: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(leaves: usize) -> Self {
        let base = leaves.max(1).next_power_of_two();
        Self {
            leaves,
            base,
            nodes: vec![0.0; 2 * base],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn set(&mut self, i: usize, w: f64) {
        debug_assert!(i < self.leaves);
        let mut at = self.base + i;
        self.nodes[at] = w;
        while at > 1 {
            at /= 2;
            self.nodes[at] = self.nodes[2 * at] + self.nodes[2 * at + 1];
        }
    }

    /// Set every leaf at once and rebuild the internal sums.
    pub fn fill(&mut self, mut weight: impl FnMut(usize) -> f64) {
        for i in 0..self.leaves {
            self.nodes[self.base + i] = weight(i);
        }
        for i in self.leaves..self.base {
            self.nodes[self.base + i] = 0.0;
        }
        for at in (1..self.base).rev() {
            self.nodes[at] = self.nodes[2 * at] + self.nodes[2 * at + 1];
        }
    }

    /// Leaf whose cumulative interval contains `u * total`, for `u` in `[0,1)`.
    /// Never returns a zero-weight leaf while the total is positive.
    pub fn sample(&self, u: f64) -> usize {
        let mut x = u * self.total();
        let mut at = 1;
        while at < self.base {
            let left = self.nodes[2 * at];
            let right = self.nodes[2 * at + 1];
            if (x < left && left > 0.0) || right <= 0.0 {
                at *= 2;
            } else {
                x -= left;
                at = 2 * at + 1;
            }
        }
        at - self.base
    }
}
