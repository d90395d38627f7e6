//! Soft-margin SVM trained in the dual over a precomputed Gram matrix.
//!
//! The solver is SMO with second-order working-set selection. It works on
//! `min f(a) = 1/2 a'Qa - e'a` with `Q_ij = y_i y_j K_ij`, subject to
//! `0 <= a_i <= C_i` and `y'a = 0`.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, Provenance};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MODEL_MAGIC: &[u8; 8] = b"BOSWESVM";
const MODEL_VERSION: u32 = 1;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// Stop once the maximal KKT violation falls to this value.
    pub tol: f64,
    /// Iteration cap, in multiples of the training-set size.
    pub max_passes: usize,
    /// Scale `C` per class by `n / (2 n_class)`.
    pub balanced: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            tol: 1e-3,
            max_passes: 10_000,
            balanced: false,
        }
    }
}

impl SvmParams {
    pub fn with_c(c: f64) -> Self {
        SvmParams { c, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// Dual coefficient per training example.
    pub alpha: Vec<f64>,
    /// Training labels, `+1` or `-1`.
    pub y: Vec<f64>,
    pub bias: f64,
    pub support: Vec<usize>,
    pub c: f64,
    pub positive: String,
    pub negative: String,
    /// Identifier of the training Gram matrix.
    pub gram_id: Provenance,
}

#[derive(Debug, Clone)]
pub struct SolveStats {
    pub iterations: usize,
    pub converged: bool,
    /// Dual objective `e'a - 1/2 a'Qa` after every update.
    pub objective_trace: Vec<f64>,
}

impl SvmModel {
    pub fn n_train(&self) -> usize {
        self.alpha.len()
    }

    /// `sum_i a_i y_i k_i + b` for the kernel row of a new example against
    /// the training set.
    pub fn decision(&self, k_row: &[f64]) -> Result<f64> {
        if k_row.len() != self.alpha.len() {
            return Err(Error::DimensionMismatch {
                expected: self.alpha.len(),
                found: k_row.len(),
            });
        }
        Ok(self.support.iter().map(|&i| self.alpha[i] * self.y[i] * k_row[i]).sum::<f64>() + self.bias)
    }

    /// `+1` for a non-negative score.
    pub fn predict(&self, k_row: &[f64]) -> Result<f64> {
        Ok(if self.decision(k_row)? >= 0.0 { 1.0 } else { -1.0 })
    }

    /// `e'a - 1/2 a'Qa` for this model's coefficients.
    pub fn dual_objective(&self, k: &Matrix) -> f64 {
        dual_objective(k, &self.y, &self.alpha)
    }

    pub fn write<W: Write>(&self, w: &mut W, provenance: &Provenance) -> Result<()> {
        artifact::write_header(w, MODEL_MAGIC, MODEL_VERSION, provenance)?;
        write_model_body(w, self)
    }

    pub fn read<R: Read>(r: &mut R) -> Result<(Self, Provenance)> {
        let provenance = artifact::read_header(r, MODEL_MAGIC, MODEL_VERSION)?;
        Ok((read_model_body(r)?, provenance))
    }
}

fn write_model_body<W: Write>(w: &mut W, m: &SvmModel) -> Result<()> {
    w.write_u64::<LittleEndian>(m.alpha.len() as u64)?;
    w.write_f64::<LittleEndian>(m.c)?;
    w.write_f64::<LittleEndian>(m.bias)?;
    artifact::write_f64s(w, &m.alpha)?;
    artifact::write_f64s(w, &m.y)?;
    w.write_u64::<LittleEndian>(m.support.len() as u64)?;
    for &s in &m.support {
        w.write_u64::<LittleEndian>(s as u64)?;
    }
    artifact::write_str(w, &m.positive)?;
    artifact::write_str(w, &m.negative)?;
    w.write_all(&m.gram_id.0)?;
    Ok(())
}

fn read_model_body<R: Read>(r: &mut R) -> Result<SvmModel> {
    let n = r.read_u64::<LittleEndian>().map_err(artifact::truncated("n"))? as usize;
    let c = r.read_f64::<LittleEndian>().map_err(artifact::truncated("C"))?;
    let bias = r.read_f64::<LittleEndian>().map_err(artifact::truncated("bias"))?;
    let alpha = artifact::read_f64s(r, n)?;
    let y = artifact::read_f64s(r, n)?;
    let n_sv = r.read_u64::<LittleEndian>().map_err(artifact::truncated("support size"))? as usize;
    let mut support = Vec::with_capacity(n_sv.min(n));
    for _ in 0..n_sv {
        let s = r.read_u64::<LittleEndian>().map_err(artifact::truncated("support"))? as usize;
        if s >= n {
            return Err(Error::Format {
                offset: 0,
                msg: format!("support index {s} out of range for {n} examples"),
            });
        }
        support.push(s);
    }
    let positive = artifact::read_str(r)?;
    let negative = artifact::read_str(r)?;
    let mut gram_id = [0u8; 32];
    r.read_exact(&mut gram_id).map_err(artifact::truncated("gram id"))?;
    Ok(SvmModel {
        alpha,
        y,
        bias,
        support,
        c,
        positive,
        negative,
        gram_id: Provenance(gram_id),
    })
}

pub fn dual_objective(k: &Matrix, y: &[f64], alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in (0..n).filter(|&i| alpha[i] != 0.0) {
        let row = k.row(i);
        let inner: f64 = (0..n).filter(|&j| alpha[j] != 0.0).map(|j| alpha[j] * y[j] * row[j]).sum();
        quad += alpha[i] * y[i] * inner;
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

fn validate(k: &Matrix, y: &[f64], params: &SvmParams) -> Result<()> {
    let n = y.len();
    if k.rows() != n || k.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: k.rows().max(k.cols()),
        });
    }
    if params.c.is_nan() || params.c <= 0.0 || params.c.is_infinite() {
        return Err(Error::invalid(format!("C must be positive, got {}", params.c)));
    }
    if params.tol.is_nan() || params.tol <= 0.0 {
        return Err(Error::invalid(format!("tol must be positive, got {}", params.tol)));
    }
    if let Some(i) = y.iter().position(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::invalid(format!("label {i} is {} (expected +1 or -1)", y[i])));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::invalid("training labels contain a single class"));
    }
    for i in 0..n {
        if !k.get(i, i).is_finite() {
            return Err(Error::invalid(format!("Gram diagonal entry {i} is not finite")));
        }
        for j in i + 1..n {
            let (a, b) = (k.get(i, j), k.get(j, i));
            if !a.is_finite() || (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::invalid(format!("Gram matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Train a binary SVM. `y` holds `+1` / `-1`.
pub fn train_binary(k: &Matrix, y: &[f64], params: &SvmParams) -> Result<SvmModel> {
    Ok(train_binary_traced(k, y, params, false)?.0)
}

/// As [`train_binary`], also returning solver statistics. The objective
/// trace is recorded only when `trace` is set.
pub fn train_binary_traced(k: &Matrix, y: &[f64], params: &SvmParams, trace: bool) -> Result<(SvmModel, SolveStats)> {
    validate(k, y, params)?;
    let n = y.len();
    let cost: Vec<f64> = if params.balanced {
        let pos = y.iter().filter(|&&v| v > 0.0).count() as f64;
        let neg = n as f64 - pos;
        y.iter()
            .map(|&v| params.c * n as f64 / (2.0 * if v > 0.0 { pos } else { neg }))
            .collect()
    } else {
        vec![params.c; n]
    };

    let mut alpha = vec![0.0; n];
    // gradient of f: (Q a)_i - 1
    let mut grad = vec![-1.0; n];
    let q = |i: usize, j: usize| y[i] * y[j] * k.get(i, j);
    let max_iter = params.max_passes.saturating_mul(n).max(1);
    let mut stats = SolveStats {
        iterations: 0,
        converged: false,
        objective_trace: Vec::new(),
    };
    let mut objective = 0.0;
    if trace {
        stats.objective_trace.push(objective);
    }

    while stats.iterations < max_iter {
        let Some((i, j)) = select_working_set(k, y, &alpha, &grad, &cost, params.tol) else {
            stats.converged = true;
            break;
        };
        stats.iterations += 1;
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (ci, cj) = (cost[i], cost[j]);
        let (qii, qjj, qij) = (k.get(i, i), k.get(j, j), q(i, j));

        if y[i] != y[j] {
            let quad = positive_or_tau(qii + qjj + 2.0 * qij);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let quad = positive_or_tau(qii + qjj - 2.0 * qij);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        if trace {
            // exact change of -f for a two-coordinate step
            let gi = grad[i];
            let gj = grad[j];
            let df = gi * di + gj * dj + 0.5 * (qii * di * di + qjj * dj * dj) + q(i, j) * di * dj;
            objective -= df;
            stats.objective_trace.push(objective);
        }
        let (yi, yj) = (y[i], y[j]);
        let (ri, rj) = (k.row(i), k.row(j));
        for t in 0..n {
            grad[t] += y[t] * (yi * ri[t] * di + yj * rj[t] * dj);
        }
    }
    if !stats.converged {
        warn!("SMO stopped after {} iterations without reaching tol {}", stats.iterations, params.tol);
    }

    let bias = -rho(y, &alpha, &grad, &cost);
    let support = (0..n).filter(|&i| alpha[i] > 0.0).collect();
    let gram_id = Provenance::of_f64s(k.as_slice());
    let model = SvmModel {
        alpha,
        y: y.to_vec(),
        bias,
        support,
        c: params.c,
        positive: "+1".into(),
        negative: "-1".into(),
        gram_id,
    };
    Ok((model, stats))
}

fn positive_or_tau(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        TAU
    }
}

fn in_up(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

fn in_low(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

/// Maximal violating pair with second-order selection of the second index.
/// `None` once the violation is within `tol`.
fn select_working_set(
    k: &Matrix,
    y: &[f64],
    alpha: &[f64],
    grad: &[f64],
    cost: &[f64],
    tol: f64,
) -> Option<(usize, usize)> {
    let n = y.len();
    let mut gmax = f64::NEG_INFINITY;
    let mut i = usize::MAX;
    for t in 0..n {
        if in_up(y[t], alpha[t], cost[t]) {
            let v = -y[t] * grad[t];
            if v > gmax {
                gmax = v;
                i = t;
            }
        }
    }
    if i == usize::MAX {
        return None;
    }
    let mut gmax2 = f64::NEG_INFINITY;
    let mut j = usize::MAX;
    let mut best = f64::INFINITY;
    let ki = k.row(i);
    for t in 0..n {
        if !in_low(y[t], alpha[t], cost[t]) {
            continue;
        }
        let v = y[t] * grad[t];
        gmax2 = gmax2.max(v);
        let b = gmax + v;
        if b > 0.0 {
            let a = positive_or_tau(k.get(i, i) + k.get(t, t) - 2.0 * ki[t]);
            let score = -(b * b) / a;
            if score <= best {
                best = score;
                j = t;
            }
        }
    }
    if gmax + gmax2 < tol || j == usize::MAX {
        None
    } else {
        Some((i, j))
    }
}

/// Offset `rho` with decision `sum a_i y_i K_i - rho`: the mean of
/// `y_i grad_i` over free vectors, else the midpoint of the feasible range.
fn rho(y: &[f64], alpha: &[f64], grad: &[f64], cost: &[f64]) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum, mut free) = (0.0, 0usize);
    for t in 0..y.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= cost[t] {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    if free > 0 {
        sum / free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// One binary model per category, in category order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModel {
    pub models: Vec<(String, SvmModel)>,
}

impl MultiModel {
    /// Decision score of every category for one kernel row.
    pub fn scores(&self, k_row: &[f64]) -> Result<Vec<f64>> {
        self.models.iter().map(|(_, m)| m.decision(k_row)).collect()
    }

    /// Indices of the categories with a non-negative score; may be empty.
    pub fn predict(&self, k_row: &[f64]) -> Result<Vec<usize>> {
        Ok(self
            .scores(k_row)?
            .into_iter()
            .enumerate()
            .filter(|(_, s)| *s >= 0.0)
            .map(|(i, _)| i)
            .collect())
    }

    pub fn write<W: Write>(&self, w: &mut W, provenance: &Provenance) -> Result<()> {
        artifact::write_header(w, MODEL_MAGIC, MODEL_VERSION + 1, provenance)?;
        w.write_u32::<LittleEndian>(self.models.len() as u32)?;
        for (cat, m) in &self.models {
            artifact::write_str(w, cat)?;
            write_model_body(w, m)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<(Self, Provenance)> {
        let provenance = artifact::read_header(r, MODEL_MAGIC, MODEL_VERSION + 1)?;
        let count = r.read_u32::<LittleEndian>().map_err(artifact::truncated("model count"))?;
        let mut models = Vec::new();
        for _ in 0..count {
            let cat = artifact::read_str(r)?;
            models.push((cat, read_model_body(r)?));
        }
        Ok((MultiModel { models }, provenance))
    }
}

/// Train one binary model per category: positives are the documents whose
/// label set contains it, negatives all the others. `labels[d]` lists the
/// category indices of document `d`.
pub fn train_one_vs_rest(
    k: &Matrix,
    labels: &[Vec<usize>],
    categories: &[String],
    params: &SvmParams,
) -> Result<MultiModel> {
    if labels.len() != k.rows() {
        return Err(Error::DimensionMismatch {
            expected: k.rows(),
            found: labels.len(),
        });
    }
    let models = categories
        .par_iter()
        .enumerate()
        .map(|(c, name)| {
            let y: Vec<f64> = labels.iter().map(|ls| if ls.contains(&c) { 1.0 } else { -1.0 }).collect();
            let mut m = train_binary(k, &y, params).map_err(|e| match e {
                Error::InvalidInput(msg) => Error::InvalidInput(format!("category {name}: {msg}")),
                e => e,
            })?;
            m.positive = name.clone();
            m.negative = format!("not {name}");
            Ok((name.clone(), m))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiModel { models })
}
