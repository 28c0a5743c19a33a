//! Euclidean embedding of network travel costs by multidimensional scaling.
//!
//! `classical_mds` double-centers the squared (symmetrized) distance matrix
//! and keeps the top eigenpairs. `metric_mds` then refines the coordinates by
//! gradient descent on the normalized squared-distance stress
//!
//! ```text
//! Σ_{i<j} (d_ij² − ‖x_i − x_j‖²)² / Σ_{i<j} d_ij⁴
//! ```

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::DistanceMatrix;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding dimension {m} out of range 1..={max} for {n} points")]
    DimensionOutOfRange { m: usize, n: usize, max: usize },
    #[error("distance matrix contains a non-finite entry at ({i}, {j})")]
    NonFinite { i: usize, j: usize },
    #[error("embedding has {got} points but the distance matrix has {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("initial embedding has dimension {got}, expected {expected}")]
    InitDimension { expected: usize, got: usize },
    #[error("dimensions must be sorted ascending")]
    UnsortedDimensions,
    #[error("embedding file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `n` points in `R^m`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    n: usize,
    m: usize,
    x: Vec<f64>,
}

impl Embedding {
    pub fn new(n: usize, m: usize, x: Vec<f64>) -> Self {
        assert_eq!(x.len(), n * m, "embedding buffer must hold n * m values");
        Self { n, m, x }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let m = rows.first().map_or(0, |r| r.as_ref().len());
        let mut x = Vec::with_capacity(rows.len() * m);
        for r in rows {
            assert_eq!(r.as_ref().len(), m, "ragged rows");
            x.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), m, x)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.x[i * self.m..(i + 1) * self.m]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.m.max(1)).take(self.n)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.x
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        squared_distance(self.point(i), self.point(j)).sqrt()
    }

    /// Appends `extra` zero coordinates to every point.
    pub fn padded(&self, extra: usize) -> Self {
        let m = self.m + extra;
        let mut x = Vec::with_capacity(self.n * m);
        for p in self.points() {
            x.extend_from_slice(p);
            x.extend(std::iter::repeat_n(0.0, extra));
        }
        Self::new(self.n, m, x)
    }

    /// Maps every point through `f`, e.g. a rotation plus translation.
    pub fn map_points(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        let rows: Vec<Vec<f64>> = self.points().map(&mut f).collect();
        Self::from_rows(&rows)
    }

    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.n, self.m)?;
        for p in self.points() {
            let line: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read(reader: impl BufRead) -> Result<Self, EmbedError> {
        let mut lines = reader.lines().enumerate();
        let parse_err = |line: usize, msg: String| EmbedError::Parse { line, msg };
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing `n m` header".into()))?;
        let header = header?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| parse_err(1, format!("{e}"))))
            .collect::<Result<_, _>>()?;
        let [n, m] = dims[..] else {
            return Err(parse_err(1, "header must be `n m`".into()));
        };
        let mut x = Vec::with_capacity(n * m);
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|e| parse_err(idx + 1, format!("{e}"))))
                .collect::<Result<_, _>>()?;
            if row.len() != m {
                return Err(parse_err(idx + 1, format!("expected {m} values, got {}", row.len())));
            }
            x.extend(row);
        }
        if x.len() != n * m {
            return Err(parse_err(0, format!("expected {n} points, got {}", x.len() / m.max(1))));
        }
        Ok(Self::new(n, m, x))
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Accuracy of an embedding at one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub dimension: usize,
    /// Normalized squared-distance stress of the returned embedding.
    pub stress: f64,
    /// Stress of the classical-MDS starting point.
    pub initial_stress: f64,
    pub mape: f64,
    /// Mean and standard deviation of `|d_ij − ‖x_i − x_j‖|` over pairs, seconds.
    pub error_mean: f64,
    pub error_std: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `(D + Dᵀ) / 2` as a dense symmetric matrix, rejecting non-finite input.
pub fn symmetrize(d: &DistanceMatrix) -> Result<DMatrix<f64>, EmbedError> {
    let n = d.len();
    for i in 0..n {
        for j in 0..n {
            if !d.get(i, j).is_finite() {
                return Err(EmbedError::NonFinite { i, j });
            }
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| 0.5 * (d.get(i, j) + d.get(j, i))))
}

/// Double-centered Gram matrix `−½ J D⁽²⁾ J` with `J = I − 𝟙𝟙ᵀ/n`.
pub fn gram_matrix(sym: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sym.nrows();
    let sq = sym.map(|v| v * v);
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    DMatrix::from_fn(n, n, |i, j| {
        -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand)
    })
}

fn check_dimension(n: usize, m: usize) -> Result<(), EmbedError> {
    let max = n.saturating_sub(1);
    if m == 0 || m > max {
        return Err(EmbedError::DimensionOutOfRange { m, n, max });
    }
    Ok(())
}

/// Classical MDS on the symmetrized distances. Eigenvalues that come out
/// negative among the top `m` (non-Euclidean input) contribute zero coordinates.
pub fn classical_mds(d: &DistanceMatrix, m: usize) -> Result<Embedding, EmbedError> {
    check_dimension(d.len(), m)?;
    let sym = symmetrize(d)?;
    Ok(classical_from_symmetric(&sym, m))
}

fn classical_from_symmetric(sym: &DMatrix<f64>, m: usize) -> Embedding {
    let n = sym.nrows();
    let eig = SymmetricEigen::new(gram_matrix(sym));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut x = vec![0.0; n * m];
    for (k, &idx) in order.iter().take(m).enumerate() {
        let lambda = eig.eigenvalues[idx];
        if lambda <= 0.0 {
            continue;
        }
        let scale = lambda.sqrt();
        let u = eig.eigenvectors.column(idx);
        // Fix the sign so the largest-magnitude entry is positive.
        let pivot = u.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            x[i * m + k] = sign * scale * u[i];
        }
    }
    Embedding::new(n, m, x)
}

/// Target squared distances and the stress normalizer, precomputed once.
struct StressTarget {
    n: usize,
    sq: Vec<f64>,
    denom: f64,
}

impl StressTarget {
    fn new(sym: &DMatrix<f64>) -> Self {
        let n = sym.nrows();
        let mut sq = vec![0.0; n * n];
        let mut denom = 0.0;
        for i in 0..n {
            for j in 0..n {
                let s = sym[(i, j)] * sym[(i, j)];
                sq[i * n + j] = s;
                if i < j {
                    denom += s * s;
                }
            }
        }
        Self { n, sq, denom }
    }

    fn stress(&self, e: &Embedding) -> f64 {
        if self.denom == 0.0 {
            return 0.0;
        }
        let n = self.n;
        let total: f64 = (0..n)
            .into_par_iter()
            .map(|i| {
                let pi = e.point(i);
                let mut acc = 0.0;
                for j in (i + 1)..n {
                    let r2 = squared_distance(pi, e.point(j));
                    let err = self.sq[i * n + j] - r2;
                    acc += err * err;
                }
                acc
            })
            .sum();
        total / self.denom
    }

    fn gradient(&self, e: &Embedding) -> Vec<f64> {
        let (n, m) = (self.n, e.dim());
        if self.denom == 0.0 {
            return vec![0.0; n * m];
        }
        let scale = -4.0 / self.denom;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let pi = e.point(i);
                let mut g = vec![0.0; m];
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let pj = e.point(j);
                    let err = self.sq[i * n + j] - squared_distance(pi, pj);
                    for k in 0..m {
                        g[k] += scale * err * (pi[k] - pj[k]);
                    }
                }
                g
            })
            .collect();
        rows.concat()
    }
}

/// Normalized stress of `e` against the symmetrized `d`.
pub fn stress(d: &DistanceMatrix, e: &Embedding) -> Result<f64, EmbedError> {
    check_size(d, e)?;
    Ok(StressTarget::new(&symmetrize(d)?).stress(e))
}

/// Analytic gradient of the normalized stress, row-major `n x m`.
pub fn stress_gradient(d: &DistanceMatrix, e: &Embedding) -> Result<Vec<f64>, EmbedError> {
    check_size(d, e)?;
    Ok(StressTarget::new(&symmetrize(d)?).gradient(e))
}

fn check_size(d: &DistanceMatrix, e: &Embedding) -> Result<(), EmbedError> {
    if d.len() != e.len() {
        return Err(EmbedError::SizeMismatch {
            expected: d.len(),
            got: e.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOptions {
    pub max_iterations: usize,
    /// Stop once an accepted step improves stress by less than this fraction.
    pub rel_tolerance: f64,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            rel_tolerance: 1e-9,
        }
    }
}

/// Result of a metric-MDS refinement including the accepted stress sequence.
#[derive(Debug, Clone)]
pub struct MetricMdsRun {
    pub embedding: Embedding,
    pub report: StressReport,
    pub stress_trace: Vec<f64>,
}

/// Steepest descent with Armijo backtracking from `init`.
///
/// Hitting the iteration budget is not an error; the report's `converged`
/// flag is false and the best embedding found is returned.
pub fn metric_mds(
    d: &DistanceMatrix,
    m: usize,
    init: &Embedding,
    options: DescentOptions,
) -> Result<(Embedding, StressReport), EmbedError> {
    metric_mds_traced(d, m, init, options).map(|run| (run.embedding, run.report))
}

pub fn metric_mds_traced(
    d: &DistanceMatrix,
    m: usize,
    init: &Embedding,
    options: DescentOptions,
) -> Result<MetricMdsRun, EmbedError> {
    check_size(d, init)?;
    if init.dim() != m {
        return Err(EmbedError::InitDimension {
            expected: m,
            got: init.dim(),
        });
    }
    let sym = symmetrize(d)?;
    Ok(descend(&sym, init.clone(), options))
}

fn descend(sym: &DMatrix<f64>, init: Embedding, options: DescentOptions) -> MetricMdsRun {
    const ARMIJO: f64 = 1e-4;
    let target = StressTarget::new(sym);
    let (n, m) = (init.len(), init.dim());
    let mut x = init;
    let mut f = target.stress(&x);
    let initial_stress = f;
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;

    let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len().max(1) as f64).sqrt();
    let mut step = 0.0;

    while iterations < options.max_iterations {
        let g = target.gradient(&x);
        let g_norm2: f64 = g.iter().map(|v| v * v).sum();
        if f == 0.0 || g_norm2 == 0.0 {
            converged = true;
            break;
        }
        if step == 0.0 {
            // First trial step moves points by about 10% of their spread.
            step = 0.1 * rms(x.as_slice()).max(1e-12) / rms(&g);
        }
        let mut accepted = None;
        while step > 0.0 && step.is_finite() {
            let trial: Vec<f64> = x.as_slice().iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let trial = Embedding::new(n, m, trial);
            let f_trial = target.stress(&trial);
            if f_trial <= f - ARMIJO * step * g_norm2 {
                accepted = Some((trial, f_trial));
                break;
            }
            step *= 0.5;
            if step * g_norm2.sqrt() <= f64::EPSILON * rms(x.as_slice()).max(1e-300) {
                break;
            }
        }
        iterations += 1;
        let Some((next, f_next)) = accepted else {
            // No descent possible at machine precision: stationary point.
            converged = true;
            break;
        };
        let improvement = (f - f_next) / f;
        x = next;
        f = f_next;
        trace.push(f);
        if improvement < options.rel_tolerance {
            converged = true;
            break;
        }
        step *= 2.0;
    }

    let report = build_report(sym, &x, f, initial_stress, iterations, converged);
    MetricMdsRun {
        embedding: x,
        report,
        stress_trace: trace,
    }
}

fn build_report(
    sym: &DMatrix<f64>,
    e: &Embedding,
    stress: f64,
    initial_stress: f64,
    iterations: usize,
    converged: bool,
) -> StressReport {
    let errors = pair_errors(sym, e);
    let count = errors.abs.len().max(1) as f64;
    let error_mean = errors.abs.iter().sum::<f64>() / count;
    let error_std = (errors
        .abs
        .iter()
        .map(|v| (v - error_mean) * (v - error_mean))
        .sum::<f64>()
        / count)
        .sqrt();
    StressReport {
        dimension: e.dim(),
        stress,
        initial_stress,
        mape: errors.mape(),
        error_mean,
        error_std,
        iterations,
        converged,
    }
}

struct PairErrors {
    abs: Vec<f64>,
    relative_sum: f64,
    relative_count: usize,
}

impl PairErrors {
    fn mape(&self) -> f64 {
        if self.relative_count == 0 {
            0.0
        } else {
            self.relative_sum / self.relative_count as f64
        }
    }
}

fn pair_errors(sym: &DMatrix<f64>, e: &Embedding) -> PairErrors {
    let n = sym.nrows();
    let mut abs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    let mut relative_sum = 0.0;
    let mut relative_count = 0;
    let mut zero_pairs = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let target = sym[(i, j)];
            let err = (target - e.distance(i, j)).abs();
            abs.push(err);
            if target > 0.0 {
                relative_sum += err / target;
                relative_count += 1;
            } else {
                zero_pairs += 1;
            }
        }
    }
    if zero_pairs > 0 {
        log::warn!("MAPE skipped {zero_pairs} point pairs at zero distance");
    }
    PairErrors {
        abs,
        relative_sum,
        relative_count,
    }
}

/// Mean absolute percentage error of embedded distances against the
/// symmetrized `d`, as a fraction. Pairs at zero distance are skipped.
pub fn mape(d: &DistanceMatrix, e: &Embedding) -> Result<f64, EmbedError> {
    check_size(d, e)?;
    Ok(pair_errors(&symmetrize(d)?, e).mape())
}

/// Classical initialization followed by metric refinement at dimension `m`.
pub fn embed(
    d: &DistanceMatrix,
    m: usize,
    options: DescentOptions,
) -> Result<(Embedding, StressReport), EmbedError> {
    check_dimension(d.len(), m)?;
    let sym = symmetrize(d)?;
    let init = classical_from_symmetric(&sym, m);
    let run = descend(&sym, init, options);
    Ok((run.embedding, run.report))
}

/// One `StressReport` per requested dimension; dimensions run in parallel.
pub fn dimension_sweep(
    d: &DistanceMatrix,
    dims: &[usize],
    options: DescentOptions,
) -> Result<Vec<StressReport>, EmbedError> {
    if dims.windows(2).any(|w| w[0] > w[1]) {
        return Err(EmbedError::UnsortedDimensions);
    }
    for &m in dims {
        check_dimension(d.len(), m)?;
    }
    let sym = symmetrize(d)?;
    Ok(dims
        .par_iter()
        .map(|&m| descend(&sym, classical_from_symmetric(&sym, m), options).report)
        .collect())
}
