//! Randomized k-d forest over codebook centroids.
//!
//! Each tree splits on a dimension drawn at random from the few highest
//! variance dimensions of the node, at the node mean. Queries descend every
//! tree once and then continue best-bin-first from a shared priority queue
//! ordered by a lower bound on the distance to each unexplored branch. The
//! bound is the squared distance from the query to the branch's cell,
//! maintained incrementally one split dimension at a time. With an unlimited
//! budget the search stops only when no branch can contain a closer
//! centroid, which makes it exact.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Codebook;
use crate::error::{Error, Result};
use crate::matrix::{sq_dist, Matrix};

/// Number of top-variance dimensions a split dimension is drawn from.
const SPLIT_CANDIDATES: usize = 5;
/// Points sampled when estimating node variance.
const VARIANCE_SAMPLE: usize = 128;

pub const DEFAULT_TREES: usize = 8;
pub const DEFAULT_MAX_CHECKS: usize = 512;

/// Search budget: the number of distinct centroids whose distance is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Exhaustive,
    Checks(usize),
}

impl Default for Budget {
    fn default() -> Self {
        Budget::Checks(DEFAULT_MAX_CHECKS)
    }
}

impl Budget {
    /// `0` means exhaustive.
    pub fn from_checks(max_checks: usize) -> Self {
        if max_checks == 0 {
            Budget::Exhaustive
        } else {
            Budget::Checks(max_checks)
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        start: usize,
        end: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
    /// Centroid ids referenced by leaves.
    leaf_ids: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CentroidIndex {
    centroids: Matrix,
    trees: Vec<Tree>,
}

/// Per-worker scratch space for queries.
#[derive(Debug, Default)]
pub struct SearchScratch {
    stamp: Vec<u32>,
    generation: u32,
    heap: BinaryHeap<Reverse<Branch>>,
    /// Per-dimension offsets of queued cells as linked lists:
    /// `(dim, offset, parent)`.
    offsets: Vec<(u32, f64, u32)>,
}

const NO_PATH: u32 = u32::MAX;

/// Slack on the pruning test so rounding in the incremental bound never
/// discards a cell holding the true nearest centroid.
const PRUNE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Branch {
    bound: f64,
    tree: usize,
    node: usize,
    path: u32,
}

impl Eq for Branch {}

impl PartialOrd for Branch {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Branch {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(self.tree.cmp(&other.tree))
            .then(self.node.cmp(&other.node))
    }
}

impl CentroidIndex {
    pub fn build(codebook: &Codebook, num_trees: usize, seed: u64) -> Self {
        let centroids = codebook.centroids.clone();
        let num_trees = num_trees.max(1);
        let trees = (0..num_trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
                build_tree(&centroids, &mut rng)
            })
            .collect();
        CentroidIndex { centroids, trees }
    }

    pub fn len(&self) -> usize {
        self.centroids.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.rows() == 0
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    /// Id of the (approximately) nearest centroid; ties go to the lowest id.
    pub fn assign(&self, vector: &[f64], budget: Budget) -> Result<usize> {
        if vector.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: vector.len(),
            });
        }
        Ok(self.search(vector, budget, &mut SearchScratch::default()).0)
    }

    /// Assign many vectors in parallel; output order matches input order.
    pub fn assign_batch<V: AsRef<[f64]> + Sync>(&self, vectors: &[V], budget: Budget) -> Result<Vec<usize>> {
        if let Some(v) = vectors.iter().find(|v| v.as_ref().len() != self.dim()) {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: v.as_ref().len(),
            });
        }
        Ok(vectors
            .par_iter()
            .map_init(SearchScratch::default, |scratch, v| self.search(v.as_ref(), budget, scratch).0)
            .collect())
    }

    /// Nearest centroid id and squared distance.
    pub fn search(&self, q: &[f64], budget: Budget, scratch: &mut SearchScratch) -> (usize, f64) {
        let k = self.len();
        if scratch.stamp.len() != k {
            scratch.stamp = vec![0; k];
            scratch.generation = 0;
        }
        scratch.generation = scratch.generation.wrapping_add(1);
        if scratch.generation == 0 {
            scratch.stamp.iter_mut().for_each(|s| *s = 0);
            scratch.generation = 1;
        }
        scratch.heap.clear();
        scratch.offsets.clear();

        let max_checks = match budget {
            Budget::Exhaustive => usize::MAX,
            Budget::Checks(c) => c.max(1),
        };
        let mut state = SearchState {
            best: (usize::MAX, f64::INFINITY),
            checks: 0,
            max_checks,
        };

        for t in 0..self.trees.len() {
            self.descend(t, 0, 0.0, NO_PATH, q, &mut state, scratch);
        }
        while let Some(Reverse(branch)) = scratch.heap.pop() {
            if state.checks >= state.max_checks || pruned(branch.bound, state.best.1) {
                break;
            }
            self.descend(branch.tree, branch.node, branch.bound, branch.path, q, &mut state, scratch);
        }
        state.best
    }

    #[allow(clippy::too_many_arguments)]
    fn descend(
        &self,
        tree: usize,
        mut node: usize,
        bound: f64,
        path: u32,
        q: &[f64],
        state: &mut SearchState,
        scratch: &mut SearchScratch,
    ) {
        let t = &self.trees[tree];
        loop {
            if state.checks >= state.max_checks {
                return;
            }
            match t.nodes[node] {
                Node::Split {
                    dim,
                    value,
                    left,
                    right,
                } => {
                    let diff = q[dim] - value;
                    let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                    let old = offset_of(&scratch.offsets, path, dim);
                    let far_bound = (bound - old * old + diff * diff).max(bound);
                    if !pruned(far_bound, state.best.1) {
                        let far_path = scratch.offsets.len() as u32;
                        scratch.offsets.push((dim as u32, diff, path));
                        scratch.heap.push(Reverse(Branch {
                            bound: far_bound,
                            tree,
                            node: far,
                            path: far_path,
                        }));
                    }
                    node = near;
                }
                Node::Leaf { start, end } => {
                    for &id in &t.leaf_ids[start..end] {
                        if scratch.stamp[id] == scratch.generation {
                            continue;
                        }
                        scratch.stamp[id] = scratch.generation;
                        let d = sq_dist(self.centroids.row(id), q);
                        state.checks += 1;
                        if d < state.best.1 || (d == state.best.1 && id < state.best.0) {
                            state.best = (id, d);
                        }
                        if state.checks >= state.max_checks {
                            return;
                        }
                    }
                    return;
                }
            }
        }
    }
}

fn pruned(bound: f64, best: f64) -> bool {
    bound > best * (1.0 + PRUNE_SLACK)
}

/// Current offset of the query from a cell along `dim` (zero if the cell is
/// unbounded or contains the query in that dimension).
fn offset_of(offsets: &[(u32, f64, u32)], mut path: u32, dim: usize) -> f64 {
    while path != NO_PATH {
        let (d, off, parent) = offsets[path as usize];
        if d as usize == dim {
            return off;
        }
        path = parent;
    }
    0.0
}

struct SearchState {
    best: (usize, f64),
    checks: usize,
    max_checks: usize,
}

fn build_tree(points: &Matrix, rng: &mut ChaCha8Rng) -> Tree {
    let mut tree = Tree {
        nodes: Vec::new(),
        leaf_ids: Vec::with_capacity(points.rows()),
    };
    let mut ids: Vec<usize> = (0..points.rows()).collect();
    build_node(points, &mut ids, rng, &mut tree);
    tree
}

fn build_node(points: &Matrix, ids: &mut [usize], rng: &mut ChaCha8Rng, tree: &mut Tree) -> usize {
    let me = tree.nodes.len();
    tree.nodes.push(Node::Leaf { start: 0, end: 0 });
    let split = if ids.len() > 1 { choose_split(points, ids, rng) } else { None };
    match split {
        None => {
            let start = tree.leaf_ids.len();
            tree.leaf_ids.extend_from_slice(ids);
            tree.nodes[me] = Node::Leaf {
                start,
                end: tree.leaf_ids.len(),
            };
        }
        Some((dim, value)) => {
            // left: x[dim] < value, right: x[dim] >= value
            let mut mid = 0;
            for i in 0..ids.len() {
                if points.get(ids[i], dim) < value {
                    ids.swap(i, mid);
                    mid += 1;
                }
            }
            let (l, r) = ids.split_at_mut(mid);
            let left = build_node(points, l, rng, tree);
            let right = build_node(points, r, rng, tree);
            tree.nodes[me] = Node::Split {
                dim,
                value,
                left,
                right,
            };
        }
    }
    me
}

/// Pick a split that leaves both children non-empty, or `None` if every
/// point in the node is identical.
fn choose_split(points: &Matrix, ids: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
    let dim = points.cols();
    let sample: Vec<usize> = if ids.len() > VARIANCE_SAMPLE {
        ids.choose_multiple(rng, VARIANCE_SAMPLE).copied().collect()
    } else {
        ids.to_vec()
    };
    let m = sample.len() as f64;
    let mut mean = vec![0.0; dim];
    for &i in &sample {
        for (s, x) in mean.iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    mean.iter_mut().for_each(|s| *s /= m);
    let mut var = vec![0.0; dim];
    for &i in &sample {
        for ((v, x), mu) in var.iter_mut().zip(points.row(i)).zip(&mean) {
            *v += (x - mu) * (x - mu);
        }
    }
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));

    let top = order.len().min(SPLIT_CANDIDATES);
    let first = order[rng.random_range(0..top)];
    // fall back to the remaining dimensions by decreasing variance
    for d in std::iter::once(first).chain(order.iter().copied().filter(|&d| d != first)) {
        let (lo, hi) = ids.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            let x = points.get(i, d);
            (lo.min(x), hi.max(x))
        });
        if lo < hi {
            let mut value = mean[d];
            if !(value > lo && value <= hi) {
                // sampled mean can fall outside the node's range
                value = lo + (hi - lo) / 2.0;
                if value <= lo {
                    value = hi;
                }
            }
            return Some((d, value));
        }
    }
    None
}
