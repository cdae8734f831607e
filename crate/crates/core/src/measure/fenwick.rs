use std::sync::atomic::{AtomicU64, Ordering};

/// Append-only Fenwick (binary indexed) tree over nonnegative weights.
///
/// Supports O(log n) append, point update, prefix sums and inverse-CDF
/// search. Every method that walks the tree adds the number of nodes it
/// touched to [`FenwickTree::node_visits`].
#[derive(Debug, Default)]
pub struct FenwickTree {
    // 1-based: node i covers (i - lowbit(i), i].
    nodes: Vec<f64>,
    visits: AtomicU64,
}

impl Clone for FenwickTree {
    fn clone(&self) -> Self {
        Self { nodes: self.nodes.clone(), visits: AtomicU64::new(self.node_visits()) }
    }
}

#[inline]
fn lowbit(i: usize) -> usize {
    i & i.wrapping_neg()
}

impl FenwickTree {
    pub fn new() -> Self {
        Self { nodes: vec![0.0], visits: AtomicU64::new(0) }
    }

    pub fn with_capacity(capacity: usize) -> Self {
        let mut nodes = Vec::with_capacity(capacity + 1);
        nodes.push(0.0);
        Self { nodes, visits: AtomicU64::new(0) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cumulative count of tree nodes touched by all operations so far.
    pub fn node_visits(&self) -> u64 {
        self.visits.load(Ordering::Relaxed)
    }

    fn record(&self, visited: u64) {
        self.visits.fetch_add(visited, Ordering::Relaxed);
    }

    /// Appends a new leaf holding `weight`.
    pub fn push(&mut self, weight: f64) {
        if self.nodes.is_empty() {
            self.nodes.push(0.0);
        }
        let i = self.nodes.len();
        let mut value = weight;
        let mut visited = 1;
        // The new node covers (i - lowbit(i), i]; gather the children below it.
        let stop = i - lowbit(i);
        let mut j = i - 1;
        while j > stop {
            value += self.nodes[j];
            visited += 1;
            j -= lowbit(j);
        }
        self.nodes.push(value);
        self.record(visited);
    }

    /// Adds `delta` to leaf `index` (0-based).
    pub fn add(&mut self, index: usize, delta: f64) {
        assert!(index < self.len(), "fenwick index {index} out of range");
        let mut i = index + 1;
        let mut visited = 0;
        while i < self.nodes.len() {
            self.nodes[i] += delta;
            visited += 1;
            i += lowbit(i);
        }
        self.record(visited);
    }

    /// Sum of leaves `0..count`.
    pub fn prefix_sum(&self, count: usize) -> f64 {
        assert!(count <= self.len());
        let mut sum = 0.0;
        let mut i = count;
        let mut visited = 0;
        while i > 0 {
            sum += self.nodes[i];
            visited += 1;
            i -= lowbit(i);
        }
        self.record(visited);
        sum
    }

    /// Sum of all leaves as seen by the tree.
    pub fn total(&self) -> f64 {
        self.prefix_sum(self.len())
    }

    /// Smallest 0-based index `k` with `prefix_sum(k + 1) > target`, clamped to
    /// the last leaf when rounding pushes `target` past the total.
    pub fn search(&self, target: f64) -> usize {
        let n = self.len();
        assert!(n > 0, "search on an empty tree");
        let mut pos = 0usize;
        let mut remaining = target;
        let mut step = 1usize << (usize::BITS - 1 - n.leading_zeros());
        let mut visited = 0;
        while step > 0 {
            let next = pos + step;
            if next <= n {
                visited += 1;
                if self.nodes[next] <= remaining {
                    pos = next;
                    remaining -= self.nodes[next];
                }
            }
            step >>= 1;
        }
        self.record(visited);
        // `target >= total` walks off the end.
        pos.min(n - 1)
    }

    /// Multiplies every leaf by `factor` in O(n).
    pub fn scale(&mut self, factor: f64) {
        for node in self.nodes.iter_mut().skip(1) {
            *node *= factor;
        }
        self.record(self.len() as u64);
    }
}
