//! Histogram kernels and Gram matrices.

use std::cmp::Ordering;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, Provenance};
use crate::error::{Error, Result};
use crate::features::{Histogram, Norm};
use crate::matrix::Matrix;

const GRAM_MAGIC: &[u8; 8] = b"BOSWEGRM";
const GRAM_VERSION: u32 = 1;
const FLAG_SYMMETRIC: u8 = 1;
const FLAG_PQ_NORMALIZED: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Hellinger,
    Intersection,
    Js,
    Pq,
}

impl KernelKind {
    pub const ALL: [KernelKind; 5] = [
        KernelKind::Linear,
        KernelKind::Hellinger,
        KernelKind::Intersection,
        KernelKind::Js,
        KernelKind::Pq,
    ];

    /// Input normalization a kernel expects: L2 for the 2-homogeneous
    /// kernels, L1 for the 1-homogeneous ones.
    pub fn required_norm(self) -> Norm {
        match self {
            KernelKind::Linear | KernelKind::Pq => Norm::L2,
            KernelKind::Hellinger | KernelKind::Intersection | KernelKind::Js => Norm::L1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Hellinger => "hellinger",
            KernelKind::Intersection => "intersection",
            KernelKind::Js => "js",
            KernelKind::Pq => "pq",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        KernelKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PqAlgo {
    Naive,
    Fast,
}

fn check_len(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(())
}

fn check_non_negative(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| v.is_nan() || *v < 0.0 || v.is_infinite()) {
        Some(i) => Err(Error::invalid(format!("histogram entry {i} is {} (must be finite and >= 0)", x[i]))),
        None => Ok(()),
    }
}

pub fn k_linear(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len(x, y)?;
    Ok(linear(x, y))
}

pub fn k_hellinger(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len(x, y)?;
    check_non_negative(x)?;
    check_non_negative(y)?;
    Ok(hellinger(x, y))
}

pub fn k_intersection(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len(x, y)?;
    check_non_negative(x)?;
    check_non_negative(y)?;
    Ok(intersection(x, y))
}

pub fn k_js(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len(x, y)?;
    check_non_negative(x)?;
    check_non_negative(y)?;
    Ok(js(x, y))
}

/// `2 (P - Q)` over unordered index pairs: concordant minus discordant.
pub fn k_pq(x: &[f64], y: &[f64], algo: PqAlgo) -> Result<i64> {
    check_len(x, y)?;
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::invalid("PQ kernel input contains NaN"));
    }
    Ok(match algo {
        PqAlgo::Naive => pq_naive(x, y),
        PqAlgo::Fast => pq_fast(x, y),
    })
}

fn linear(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn hellinger(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a * b).sqrt()).sum()
}

fn intersection(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a.min(*b)).sum()
}

fn js(x: &[f64], y: &[f64]) -> f64 {
    let term = |a: f64, m: f64| if a > 0.0 { 0.5 * a * (m / a).log2() } else { 0.0 };
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let m = a + b;
            term(a, m) + term(b, m)
        })
        .sum()
}

fn cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).expect("NaN rejected earlier")
}

fn pq_naive(x: &[f64], y: &[f64]) -> i64 {
    let n = x.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (cmp(x[i], x[j]), cmp(y[i], y[j]));
            if a != Ordering::Equal && b != Ordering::Equal {
                s += if a == b { 1 } else { -1 };
            }
        }
    }
    2 * s
}

fn pairs(run: i64) -> i64 {
    run * (run - 1) / 2
}

/// Sum of `m(m-1)/2` over maximal runs of equal keys in a sorted sequence.
fn tied_pairs<T: Copy>(items: &[T], eq: impl Fn(T, T) -> bool) -> i64 {
    let mut total = 0;
    let mut run = 1i64;
    for w in items.windows(2) {
        if eq(w[0], w[1]) {
            run += 1;
        } else {
            total += pairs(run);
            run = 1;
        }
    }
    total + pairs(run)
}

/// Merge sort of `v` by value, returning the number of strict inversions.
fn sort_count_swaps(v: &mut [f64], buf: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_count_swaps(&mut v[..mid], &mut buf[..mid]) + sort_count_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        // equal values are not inversions: take from the left first
        if cmp(v[j], v[i]) == Ordering::Less {
            buf[k] = v[j];
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// O(n log n) evaluation: sort by (x, y), count the pairs tied in x, in y
/// and in both, and count discordant pairs as merge-sort inversions of y.
fn pq_fast(x: &[f64], y: &[f64]) -> i64 {
    let n = x.len() as i64;
    let mut order: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    order.sort_by(|a, b| cmp(a.0, b.0).then(cmp(a.1, b.1)));
    let n0 = pairs(n);
    let n1 = tied_pairs(&order, |a, b| a.0 == b.0);
    let n3 = tied_pairs(&order, |a, b| a.0 == b.0 && a.1 == b.1);
    let mut ys: Vec<f64> = order.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let discordant = sort_count_swaps(&mut ys, &mut buf);
    let n2 = tied_pairs(&ys, |a, b| a == b);
    2 * (n0 - n1 - n2 + n3 - 2 * discordant)
}

/// Evaluate on raw vectors without validation.
fn eval_unchecked(kind: KernelKind, x: &[f64], y: &[f64]) -> f64 {
    match kind {
        KernelKind::Linear => linear(x, y),
        KernelKind::Hellinger => hellinger(x, y),
        KernelKind::Intersection => intersection(x, y),
        KernelKind::Js => js(x, y),
        KernelKind::Pq => pq_fast(x, y) as f64,
    }
}

fn check_histograms(kind: KernelKind, hs: &[&Histogram], dim: usize) -> Result<()> {
    let required = kind.required_norm();
    for h in hs {
        if h.norm != required {
            return Err(Error::NormMismatch {
                kernel: kind.name(),
                required: required.name(),
                found: h.norm.name(),
            });
        }
        if h.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: h.len(),
            });
        }
        match kind {
            KernelKind::Linear => {
                if h.values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("histogram {} has non-finite entries", h.doc_id)));
                }
            }
            _ => check_non_negative(&h.values)?,
        }
    }
    Ok(())
}

/// Kernel value on two histograms, enforcing the kernel's normalization.
pub fn evaluate(kind: KernelKind, x: &Histogram, y: &Histogram) -> Result<f64> {
    check_histograms(kind, &[x, y], x.len())?;
    Ok(eval_unchecked(kind, &x.values, &y.values))
}

/// Square or rectangular matrix of kernel values.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub matrix: Matrix,
    /// Kernel names joined by `+`.
    pub label: String,
    pub symmetric: bool,
    pub pq_normalized: bool,
    pub provenance: Provenance,
}

/// Identifier of an ordered histogram set, derived from its document ids.
pub fn histogram_set_id(hs: &[Histogram]) -> Provenance {
    let mut bytes = Vec::new();
    for h in hs {
        bytes.extend_from_slice(&(h.doc_id.len() as u64).to_le_bytes());
        bytes.extend_from_slice(h.doc_id.as_bytes());
    }
    Provenance::of_bytes(&bytes)
}

fn pq_scale(k: f64, a: f64, b: f64) -> f64 {
    if a > 0.0 && b > 0.0 {
        k / (a * b).sqrt()
    } else {
        0.0
    }
}

fn label_of(kind: KernelKind, pq_normalize: bool) -> String {
    match (kind, pq_normalize) {
        (KernelKind::Pq, true) => "pq-normalized".into(),
        _ => kind.name().into(),
    }
}

/// Symmetric Gram matrix over one histogram set. With `pq_normalize`, PQ
/// entries become `K_ij / sqrt(K_ii K_jj)` (zero where a self-value is zero).
pub fn gram(hs: &[Histogram], kind: KernelKind, pq_normalize: bool) -> Result<GramMatrix> {
    let first = hs.first().ok_or_else(|| Error::invalid("Gram matrix of an empty histogram set"))?;
    let refs: Vec<&Histogram> = hs.iter().collect();
    check_histograms(kind, &refs, first.len())?;
    let n = hs.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| eval_unchecked(kind, &hs[i].values, &hs[j].values)).collect())
        .collect();
    let mut m = Matrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            m.set(i, i + off, v);
            m.set(i + off, i, v);
        }
    }
    let normalized = pq_normalize && kind == KernelKind::Pq;
    if normalized {
        let diag: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, pq_scale(m.get(i, j), diag[i], diag[j]));
            }
        }
    }
    Ok(GramMatrix {
        matrix: m,
        label: label_of(kind, pq_normalize),
        symmetric: true,
        pq_normalized: normalized,
        provenance: histogram_set_id(hs),
    })
}

/// Kernel values between `rows` (e.g. test documents) and `cols` (training
/// documents). Normalized PQ uses each side's own self-similarity.
pub fn cross_gram(rows: &[Histogram], cols: &[Histogram], kind: KernelKind, pq_normalize: bool) -> Result<GramMatrix> {
    let dim = cols
        .first()
        .or(rows.first())
        .ok_or_else(|| Error::invalid("Gram matrix of an empty histogram set"))?
        .len();
    let refs: Vec<&Histogram> = rows.iter().chain(cols).collect();
    check_histograms(kind, &refs, dim)?;
    let normalized = pq_normalize && kind == KernelKind::Pq;
    let self_values = |hs: &[Histogram]| -> Vec<f64> {
        if normalized {
            hs.par_iter().map(|h| pq_fast(&h.values, &h.values) as f64).collect()
        } else {
            Vec::new()
        }
    };
    let (dr, dc) = (self_values(rows), self_values(cols));
    let data: Vec<f64> = (0..rows.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let (dr, dc) = (&dr, &dc);
            (0..cols.len()).map(move |j| {
                let k = eval_unchecked(kind, &rows[i].values, &cols[j].values);
                if normalized {
                    pq_scale(k, dr[i], dc[j])
                } else {
                    k
                }
            })
        })
        .collect();
    let mut provenance_bytes = histogram_set_id(rows).0.to_vec();
    provenance_bytes.extend_from_slice(&histogram_set_id(cols).0);
    Ok(GramMatrix {
        matrix: Matrix::from_vec(rows.len(), cols.len(), data)?,
        label: label_of(kind, pq_normalize),
        symmetric: false,
        pq_normalized: normalized,
        provenance: Provenance::of_bytes(&provenance_bytes),
    })
}

/// Entrywise sum of two Gram matrices over the same histogram sets.
pub fn sum_kernels(a: &GramMatrix, b: &GramMatrix) -> Result<GramMatrix> {
    a.provenance.ensure_eq(&b.provenance)?;
    if a.matrix.rows() != b.matrix.rows() || a.matrix.cols() != b.matrix.cols() {
        return Err(Error::DimensionMismatch {
            expected: a.matrix.rows() * a.matrix.cols(),
            found: b.matrix.rows() * b.matrix.cols(),
        });
    }
    let data = a.matrix.as_slice().iter().zip(b.matrix.as_slice()).map(|(x, y)| x + y).collect();
    Ok(GramMatrix {
        matrix: Matrix::from_vec(a.matrix.rows(), a.matrix.cols(), data)?,
        label: format!("{}+{}", a.label, b.label),
        symmetric: a.symmetric && b.symmetric,
        pq_normalized: a.pq_normalized || b.pq_normalized,
        provenance: a.provenance,
    })
}

impl GramMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    /// Largest `|K_ij - K_ji|`; infinite for a rectangular matrix.
    pub fn asymmetry(&self) -> f64 {
        let n = self.rows();
        if n != self.cols() {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn write<W: Write>(&self, w: &mut W, provenance: &Provenance) -> Result<()> {
        artifact::write_header(w, GRAM_MAGIC, GRAM_VERSION, provenance)?;
        w.write_u64::<LittleEndian>(self.rows() as u64)?;
        w.write_u64::<LittleEndian>(self.cols() as u64)?;
        artifact::write_str(w, &self.label)?;
        let mut flags = 0;
        if self.symmetric {
            flags |= FLAG_SYMMETRIC;
        }
        if self.pq_normalized {
            flags |= FLAG_PQ_NORMALIZED;
        }
        w.write_u8(flags)?;
        w.write_all(&self.provenance.0)?;
        artifact::write_f64s(w, self.matrix.as_slice())?;
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<(Self, Provenance)> {
        let provenance = artifact::read_header(r, GRAM_MAGIC, GRAM_VERSION)?;
        let rows = r.read_u64::<LittleEndian>().map_err(artifact::truncated("rows"))? as usize;
        let cols = r.read_u64::<LittleEndian>().map_err(artifact::truncated("cols"))? as usize;
        let label = artifact::read_str(r)?;
        let flags = r.read_u8().map_err(artifact::truncated("flags"))?;
        let mut set_id = [0u8; 32];
        r.read_exact(&mut set_id).map_err(artifact::truncated("histogram set id"))?;
        let data = artifact::read_f64s(r, rows * cols)?;
        let gram = GramMatrix {
            matrix: Matrix::from_vec(rows, cols, data)?,
            label,
            symmetric: flags & FLAG_SYMMETRIC != 0,
            pq_normalized: flags & FLAG_PQ_NORMALIZED != 0,
            provenance: Provenance(set_id),
        };
        Ok((gram, provenance))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(values: &[f64], norm: Norm) -> Histogram {
        Histogram {
            doc_id: format!("{values:?}"),
            values: values.to_vec(),
            norm,
        }
    }

    #[test]
    fn scalar_examples() {
        assert!((k_linear(&[0.6, 0.8], &[0.8, 0.6]).unwrap() - 0.96).abs() < 1e-15);
        let hel = k_hellinger(&[0.5, 0.5], &[0.8, 0.2]).unwrap();
        assert!((hel - (0.4f64.sqrt() + 0.1f64.sqrt())).abs() < 1e-15);
        assert!((k_intersection(&[0.5, 0.5], &[0.8, 0.2]).unwrap() - 0.7).abs() < 1e-15);
        assert!((k_js(&[0.3, 0.7], &[0.3, 0.7]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(k_js(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(k_hellinger(&[-0.5, 1.5], &[0.5, 0.5]).is_err());
        assert!(k_linear(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn pq_examples() {
        for algo in [PqAlgo::Naive, PqAlgo::Fast] {
            assert_eq!(k_pq(&[3.0, 1.0, 2.0], &[2.0, 1.0, 3.0], algo).unwrap(), 2);
            assert_eq!(k_pq(&[3.0, 1.0, 2.0], &[3.0, 1.0, 2.0], algo).unwrap(), 6);
            assert_eq!(k_pq(&[3.0, 1.0, 2.0], &[1.0, 3.0, 2.0], algo).unwrap(), -6);
            assert_eq!(k_pq(&[0.0, 0.0, 1.0, 0.0], &[0.0, 2.0, 0.0, 0.0], algo).unwrap(), -2);
            assert_eq!(k_pq(&[], &[], algo).unwrap(), 0);
        }
        assert_eq!(k_pq(&[-0.0, 0.0, 1.0], &[1.0, 2.0, 3.0], PqAlgo::Fast).unwrap(), 4);
    }

    #[test]
    fn norm_is_enforced() {
        let a = h(&[0.5, 0.5], Norm::L1);
        assert!(matches!(evaluate(KernelKind::Linear, &a, &a), Err(Error::NormMismatch { .. })));
        assert!((evaluate(KernelKind::Hellinger, &a, &a).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gram_and_cross_gram_agree() {
        let hs: Vec<Histogram> = [[0.1, 0.5, 0.4], [0.3, 0.3, 0.4], [0.0, 0.0, 1.0]]
            .iter()
            .map(|v| {
                let mut x = v.to_vec();
                crate::features::normalize(&mut x, Norm::L2);
                h(&x, Norm::L2)
            })
            .collect();
        let g = gram(&hs, KernelKind::Pq, true).unwrap();
        let c = cross_gram(&hs, &hs, KernelKind::Pq, true).unwrap();
        assert_eq!(g.matrix, c.matrix);
        assert_eq!(g.get(0, 0), 1.0);
        assert_eq!(g.asymmetry(), 0.0);
    }

    #[test]
    fn constant_histogram_zero_row_under_normalization() {
        let hs = vec![h(&[0.5, 0.5, 0.5, 0.5], Norm::L2), h(&[0.0, 0.6, 0.8, 0.0], Norm::L2)];
        let g = gram(&hs, KernelKind::Pq, true).unwrap();
        assert_eq!(g.matrix.row(0), &[0.0, 0.0]);
        assert_eq!(g.get(1, 1), 1.0);
    }

    #[test]
    fn sum_requires_same_set() {
        let a = vec![h(&[0.5, 0.5], Norm::L1)];
        let b = vec![h(&[0.2, 0.8], Norm::L1)];
        let ga = gram(&a, KernelKind::Hellinger, false).unwrap();
        let gb = gram(&b, KernelKind::Hellinger, false).unwrap();
        assert!(sum_kernels(&ga, &gb).is_err());
        let s = sum_kernels(&ga, &ga).unwrap();
        assert_eq!(s.label, "hellinger+hellinger");
        assert!((s.get(0, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn gram_round_trip() {
        let hs = vec![h(&[0.5, 0.5], Norm::L1), h(&[1.0, 0.0], Norm::L1)];
        let g = gram(&hs, KernelKind::Intersection, false).unwrap();
        let p = Provenance::of_bytes(b"cfg");
        let mut buf = Vec::new();
        g.write(&mut buf, &p).unwrap();
        let (back, bp) = GramMatrix::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back, g);
        assert_eq!(bp, p);
    }
}
