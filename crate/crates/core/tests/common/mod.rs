//! Reference computations shared by the integration tests and the acceptance
//! harness. Each one is written independently of the library code it checks.

#![allow(dead_code)]

use boswe::features::{Histogram, Norm};
use boswe::matrix::Matrix;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `2 (P - Q)` by sign products over all pairs.
pub fn pq_oracle(x: &[f64], y: &[f64]) -> i64 {
    let sign = |a: f64, b: f64| -> i64 {
        if a > b {
            1
        } else if a < b {
            -1
        } else {
            0
        }
    };
    let mut s = 0;
    for i in 0..x.len() {
        for j in 0..i {
            s += sign(x[i], x[j]) * sign(y[i], y[j]);
        }
    }
    2 * s
}

pub fn js_oracle(x: &[f64], y: &[f64]) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a / 2.0 * ((a + b) / a).log2() };
    x.iter().zip(y).map(|(&a, &b)| term(a, b) + term(b, a)).sum()
}

/// Random vector with roughly `zero_rate` zeros and small integer counts
/// elsewhere, so ties are frequent.
pub fn sparse_counts(rng: &mut ChaCha8Rng, n: usize, zero_rate: f64) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.random::<f64>() < zero_rate { 0.0 } else { f64::from(rng.random_range(1..6u32)) })
        .collect()
}

pub fn normalized(values: Vec<f64>, norm: Norm, id: &str) -> Histogram {
    let h = Histogram {
        doc_id: id.to_string(),
        values,
        norm: Norm::None,
    };
    h.normalized(norm).expect("unnormalized input")
}

pub fn random_histograms(rng: &mut ChaCha8Rng, count: usize, len: usize, norm: Norm) -> Vec<Histogram> {
    (0..count)
        .map(|i| normalized(sparse_counts(rng, len, 0.6), norm, &format!("h{i}")))
        .collect()
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eig_range(m: &Matrix) -> (f64, f64) {
    let d = DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
    let e = SymmetricEigen::new(d).eigenvalues;
    (e.min(), e.max())
}

pub fn max_asymmetry(m: &Matrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            worst = worst.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    worst
}

/// `sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij`, evaluated directly.
pub fn dual_oracle(k: &Matrix, y: &[f64], a: &[f64]) -> f64 {
    let n = a.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += a[i] * a[j] * y[i] * y[j] * k.get(i, j);
        }
    }
    a.iter().sum::<f64>() - 0.5 * quad
}

/// Uniform box sample rescaled on the larger side so that `y'a = 0`.
pub fn random_feasible(rng: &mut ChaCha8Rng, y: &[f64], c: f64) -> Vec<f64> {
    let mut a: Vec<f64> = y.iter().map(|_| rng.random::<f64>() * c).collect();
    let pos: f64 = a.iter().zip(y).filter(|(_, &t)| t > 0.0).map(|(v, _)| v).sum();
    let neg: f64 = a.iter().zip(y).filter(|(_, &t)| t < 0.0).map(|(v, _)| v).sum();
    let (shrink, factor) = if pos > neg { (1.0, neg / pos) } else { (-1.0, pos / neg) };
    for (v, &t) in a.iter_mut().zip(y) {
        if t == shrink {
            *v *= factor;
        }
    }
    a
}

/// Best 2-partition of 1-d points by enumeration: (inertia, sorted centres).
pub fn best_two_partition(points: &[f64]) -> (f64, [f64; 2]) {
    let n = points.len();
    let mut best = (f64::INFINITY, [0.0, 0.0]);
    for mask in 1..(1u32 << n) - 1 {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, &p) in points.iter().enumerate() {
            if mask & (1 << i) != 0 {
                a.push(p)
            } else {
                b.push(p)
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let cost: f64 = a.iter().map(|p| (p - ma).powi(2)).sum::<f64>() + b.iter().map(|p| (p - mb).powi(2)).sum::<f64>();
        if cost < best.0 {
            best = (cost, if ma < mb { [ma, mb] } else { [mb, ma] });
        }
    }
    best
}

/// Points with a power-law spectrum (`sigma_j = 1/(j+1)`) in a random
/// orthonormal basis: the low effective dimension typical of word vectors.
pub struct SpectralCloud {
    basis: DMatrix<f64>,
}

impl SpectralCloud {
    pub fn new(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
        SpectralCloud { basis: g.qr().q() }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let dim = self.basis.nrows();
        let z = nalgebra::DVector::from_fn(dim, |j, _| {
            let s: f64 = StandardNormal.sample(rng);
            s / (j as f64 + 1.0)
        });
        (&self.basis * z).iter().copied().collect()
    }
}

pub fn uniform_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
}
