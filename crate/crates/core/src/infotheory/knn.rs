//! Kozachenko–Leonenko k-nearest-neighbour differential entropy estimator.
//!
//! `Ĥ = ψ(N) − ψ(k) + ln V_d + (d/N) Σ ln r_i` nats, where `r_i` is the
//! Euclidean distance from sample `i` to its k-th nearest neighbour and `V_d`
//! the volume of the unit d-ball. Neighbour search uses a kd-tree, so 10⁵
//! samples in a few dimensions take well under a second.

use std::f64::consts::{LN_2, PI};

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `ψ(n)` for a positive integer argument.
pub fn digamma_int(n: usize) -> f64 {
    assert!(n >= 1);
    -EULER_GAMMA + (1..n).map(|j| 1.0 / j as f64).sum::<f64>()
}

/// `ln V_d`, the log volume of the unit ball in `d` dimensions.
pub fn ln_unit_ball_volume(d: usize) -> f64 {
    // V_0 = 1, V_1 = 2, V_d = V_{d-2} · 2π / d
    let mut v = if d.is_multiple_of(2) { 1.0f64 } else { 2.0 };
    let mut k = if d.is_multiple_of(2) { 2 } else { 3 };
    while k <= d {
        v *= 2.0 * PI / k as f64;
        k += 2;
    }
    v.ln()
}

enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Static kd-tree over a flat `n × dim` point array.
pub struct KdTree<'a> {
    points: &'a [f64],
    dim: usize,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [f64], dim: usize) -> Self {
        assert!(dim > 0 && points.len().is_multiple_of(dim));
        let n = points.len() / dim;
        let mut tree = Self {
            points,
            dim,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n, 0);
        }
        tree
    }

    #[inline]
    fn coord(&self, idx: usize, d: usize) -> f64 {
        self.points[idx * self.dim + d]
    }

    fn build(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dim = depth % self.dim;
        let mid = start + (end - start) / 2;
        let (points, d) = (self.points, self.dim);
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| points[a * d + dim].total_cmp(&points[b * d + dim]));
        let value = self.coord(self.order[mid], dim);
        // placeholder, patched after children exist
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid, depth + 1);
        let right = self.build(mid, end, depth + 1);
        self.nodes[id] = Node::Split { dim, value, left, right };
        id
    }

    fn dist2(&self, a: usize, q: &[f64]) -> f64 {
        (0..self.dim).map(|d| (self.coord(a, d) - q[d]).powi(2)).sum()
    }

    /// Squared distance from point `idx` to its k-th nearest other point.
    pub fn kth_neighbor_dist2(&self, idx: usize, k: usize) -> f64 {
        let q: Vec<f64> = (0..self.dim).map(|d| self.coord(idx, d)).collect();
        // ascending list of the best k squared distances
        let mut best: Vec<f64> = Vec::with_capacity(k + 1);
        self.search(0, idx, &q, k, &mut best);
        best[k - 1]
    }

    fn search(&self, node: usize, skip: usize, q: &[f64], k: usize, best: &mut Vec<f64>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &p in &self.order[start..end] {
                    if p == skip {
                        continue;
                    }
                    let d2 = self.dist2(p, q);
                    if best.len() < k || d2 < best[best.len() - 1] {
                        let pos = best.partition_point(|&b| b <= d2);
                        best.insert(pos, d2);
                        best.truncate(k);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, skip, q, k, best);
                if best.len() < k || diff * diff < best[best.len() - 1] {
                    self.search(far, skip, q, k, best);
                }
            }
        }
    }
}

/// Kozachenko–Leonenko estimate in bits from `n × dim` row-major samples.
pub fn knn_entropy_bits(samples: &[f64], dim: usize, k: usize) -> Result<f64> {
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(Error::Config(format!(
            "{} values do not form rows of dimension {dim}",
            samples.len()
        )));
    }
    let n = samples.len() / dim;
    if k == 0 || n <= k {
        return Err(Error::InsufficientSamples { got: n, min: k + 1 });
    }
    let tree = KdTree::new(samples, dim);
    let mut sum_ln_r = 0.0;
    for i in 0..n {
        let d2 = tree.kth_neighbor_dist2(i, k);
        if d2 <= 0.0 {
            return Err(Error::Config("duplicate samples: zero neighbour distance".into()));
        }
        sum_ln_r += 0.5 * d2.ln();
    }
    let nats = digamma_int(n) - digamma_int(k) + ln_unit_ball_volume(dim) + dim as f64 * sum_ln_r / n as f64;
    Ok(nats / LN_2)
}
