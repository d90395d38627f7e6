//! Lloyd's k-means with k-means++ seeding.

use std::collections::HashSet;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Codebook;
use crate::error::{Error, Result};
use crate::matrix::{nearest_brute, sq_dist, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the total centroid shift falls below `tol` times the total
    /// centroid norm.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            seed,
            max_iter: 100,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansOutcome {
    pub codebook: Codebook,
    pub iterations: usize,
    pub converged: bool,
    /// Objective (sum of squared distances to the nearest centroid) after
    /// every assignment step, ending with the returned codebook's inertia.
    pub objective_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Cluster the rows of `data` into `params.k` centroids.
pub fn kmeans(data: &Matrix, params: &KMeansParams) -> Result<KMeansOutcome> {
    let (n, dim, k) = (data.rows(), data.cols(), params.k);
    if n == 0 || dim == 0 {
        return Err(Error::invalid("k-means needs at least one non-empty vector"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if data.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("k-means input contains non-finite values"));
    }

    let distinct = distinct_rows(data, k + 1);
    if distinct.len() <= k {
        return Ok(pad_with_points(data, &distinct, k));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = plus_plus_init(data, k, &mut rng);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iter {
        iterations += 1;
        let assignment = assign_all(data, &centroids);
        trace.push(objective(&assignment));

        let mut next = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in next.row_mut(c).iter_mut().zip(data.row(i)) {
                *s += x;
            }
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let inv = 1.0 / count as f64;
                next.row_mut(c).iter_mut().for_each(|s| *s *= inv);
            }
        }
        repair_empty(data, &assignment, &counts, &mut next);

        let shift: f64 = (0..k).map(|c| sq_dist(next.row(c), centroids.row(c))).sum::<f64>().sqrt();
        let scale: f64 = next.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        centroids = next;
        if shift <= params.tol * scale.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    let final_assignment = assign_all(data, &centroids);
    let inertia = objective(&final_assignment);
    trace.push(inertia);
    Ok(KMeansOutcome {
        codebook: Codebook::new(centroids, None, inertia)?,
        iterations,
        converged,
        objective_trace: trace,
        warnings: Vec::new(),
    })
}

/// Up to `limit` distinct rows, in order of first appearance.
fn distinct_rows(data: &Matrix, limit: usize) -> Vec<usize> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in data.iter_rows().enumerate() {
        // normalise -0.0 so it compares equal to 0.0
        let key: Vec<u64> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
        if seen.insert(key) {
            out.push(i);
            if out.len() >= limit {
                break;
            }
        }
    }
    out
}

/// Fewer distinct points than centroids: use every distinct point and pad by
/// repeating them.
fn pad_with_points(data: &Matrix, distinct: &[usize], k: usize) -> KMeansOutcome {
    let mut warnings = Vec::new();
    if distinct.len() < k {
        let msg = format!(
            "k = {k} exceeds the {} distinct input points; duplicating points",
            distinct.len()
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    let idx: Vec<usize> = (0..k).map(|c| distinct[c % distinct.len()]).collect();
    let centroids = data.select_rows(&idx);
    KMeansOutcome {
        codebook: Codebook::new(centroids, None, 0.0).expect("finite input"),
        iterations: 0,
        converged: true,
        objective_trace: vec![0.0],
        warnings,
    }
}

fn plus_plus_init(data: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = data.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut min_d2: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| sq_dist(data.row(i), data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = min_d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in min_d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `target` just past the last positive weight
            pick.unwrap_or_else(|| min_d2.iter().rposition(|&d| d > 0.0).expect("positive mass"))
        } else {
            // unreachable while distinct points outnumber k
            rng.random_range(0..n)
        };
        chosen.push(next);
        let c = data.row(next);
        min_d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            let nd = sq_dist(data.row(i), c);
            if nd < *d {
                *d = nd;
            }
        });
    }
    data.select_rows(&chosen)
}

/// Nearest centroid and squared distance for every row; computed in
/// parallel, collected in row order.
pub(crate) fn assign_all(data: &Matrix, centroids: &Matrix) -> Vec<(usize, f64)> {
    (0..data.rows())
        .into_par_iter()
        .map(|i| nearest_brute(centroids, data.row(i)))
        .collect()
}

fn objective(assignment: &[(usize, f64)]) -> f64 {
    assignment.iter().map(|&(_, d)| d).sum()
}

/// Move every empty centroid onto the point farthest from its own centroid.
fn repair_empty(data: &Matrix, assignment: &[(usize, f64)], counts: &[usize], next: &mut Matrix) {
    let empty: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] == 0).collect();
    if empty.is_empty() {
        return;
    }
    let mut order: Vec<usize> = (0..assignment.len()).collect();
    // farthest first, lowest index on ties
    order.sort_by(|&a, &b| assignment[b].1.total_cmp(&assignment[a].1).then(a.cmp(&b)));
    for (c, &i) in empty.iter().zip(&order) {
        next.row_mut(*c).copy_from_slice(data.row(i));
    }
}
