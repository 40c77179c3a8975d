//! Exact recovery in the noise-free case.
//!
//! Queries are rows `[1, a, a^2, ..., a^(n-1)]` for `2k` values of `a` packed
//! into one randomly chosen subinterval of (0, 1] of width `1/(k^2 L^2)`.
//! Distinct hidden vectors produce distinct response values on such rows
//! except on a bounded number of subintervals, and the response ordering is
//! the same for every row in the subinterval, so sorting the deduplicated
//! responses of each batch lines the hidden vectors up across rows. Each
//! sorted column is then decoded as the unique k-sparse solution of its
//! geometric linear system.

use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use thiserror::Error;

use crate::combi::Subsets;
use crate::model::{match_and_score, ModelError, RecoveryReport};
use crate::oracle::{Oracle, OracleError};

#[derive(Debug, Error)]
pub enum NoiselessError {
    #[error("batch produced {got} distinct values, expected {want}")]
    MissedComponent { got: usize, want: usize },
    #[error("batch produced {got} distinct values for {want} hidden vectors")]
    TooManyValues { got: usize, want: usize },
    #[error("no support of size <= k fits the column values")]
    NoConsistentSupport,
    #[error("noiseless recovery requires sigma = 0, oracle has sigma = {0}")]
    SigmaNonzero(f64),
    #[error("invalid parameter: {0}")]
    BadParams(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The `2k` query points packed into one width-`gamma` subinterval of (0, 1].
#[derive(Debug, Clone)]
pub struct AlphaGrid {
    t: u64,
    gamma: f64,
    alphas: Vec<f64>,
}

impl AlphaGrid {
    /// Grid for subinterval index `t` in `0..k^2 L^2`: point `j` (1-based,
    /// `j = 1..=2k`) sits at `(2kt + j) / (2 k^3 L^2)`.
    pub fn new(k: usize, l: usize, t: u64) -> Result<Self, NoiselessError> {
        if k == 0 || l == 0 {
            return Err(NoiselessError::BadParams("k and L must be positive".into()));
        }
        let intervals = (k * k * l * l) as u64;
        if t >= intervals {
            return Err(NoiselessError::BadParams(format!(
                "t = {t} outside 0..{intervals}"
            )));
        }
        let denom = 2.0 * (k * k * k) as f64 * (l * l) as f64;
        let alphas: Vec<f64> = (1..=2 * k)
            .map(|j| ((2 * k) as u64 * t + j as u64) as f64 / denom)
            .collect();
        Ok(AlphaGrid { t, gamma: 1.0 / intervals as f64, alphas })
    }

    /// Draw the subinterval index uniformly.
    pub fn sample<R: Rng>(k: usize, l: usize, rng: &mut R) -> Result<Self, NoiselessError> {
        if k == 0 || l == 0 {
            return Err(NoiselessError::BadParams("k and L must be positive".into()));
        }
        let intervals = (k * k * l * l) as u64;
        let t = rng.gen_range(0..intervals);
        AlphaGrid::new(k, l, t)
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
}

/// `[1, a, a^2, ..., a^(n-1)]`.
pub fn vandermonde_row(alpha: f64, n: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(n);
    let mut p = 1.0;
    for _ in 0..n {
        row.push(p);
        p *= alpha;
    }
    row
}

/// Sort a batch of noiseless responses and collapse duplicates. With zero
/// tolerance (the default entry point) only bitwise-equal responses collapse,
/// which is the correct notion here: identical hidden vectors produce
/// identical noiseless responses.
pub fn process_batch(samples: &[f64], l: usize) -> Result<Vec<f64>, NoiselessError> {
    process_batch_with_tol(samples, l, 0.0)
}

/// Like [`process_batch`] but collapsing values within `rel_tol` relative
/// distance of their predecessor.
pub fn process_batch_with_tol(
    samples: &[f64],
    l: usize,
    rel_tol: f64,
) -> Result<Vec<f64>, NoiselessError> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut uniq: Vec<f64> = Vec::with_capacity(l);
    for v in sorted {
        match uniq.last() {
            Some(&prev) => {
                let scale = prev.abs().max(v.abs()).max(1.0);
                if v != prev && (v - prev).abs() > rel_tol * scale {
                    uniq.push(v);
                }
            }
            None => uniq.push(v),
        }
    }
    if uniq.len() < l {
        return Err(NoiselessError::MissedComponent { got: uniq.len(), want: l });
    }
    if uniq.len() > l {
        return Err(NoiselessError::TooManyValues { got: uniq.len(), want: l });
    }
    Ok(uniq)
}

/// Relative residual tolerance of the support search.
const DECODE_RESIDUAL_TOL: f64 = 1e-7;
/// Singular values below this times the largest are treated as zero.
const SVD_EPS: f64 = 1e-13;

/// Find a vector with at most `k` nonzeros satisfying
/// `<vandermonde_row(alpha_i, n), beta> = column_values[i]` for every grid
/// point. Supports are enumerated by size then lexicographically; among the
/// supports whose least-squares residual has infinity norm at most
/// `1e-7 * max |column_value|`, the smallest residual wins (earliest
/// support on ties), and only an exactly zero residual ends the search
/// early.
pub fn decode_sparse(
    grid: &AlphaGrid,
    column_values: &[f64],
    n: usize,
    k: usize,
) -> Result<Vec<f64>, NoiselessError> {
    let rows = grid.alphas.len();
    if column_values.len() != rows {
        return Err(NoiselessError::BadParams(format!(
            "expected {rows} column values, got {}",
            column_values.len()
        )));
    }
    if k > n {
        return Err(NoiselessError::BadParams(format!("k = {k} exceeds n = {n}")));
    }
    let max_abs = column_values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max_abs == 0.0 {
        return Ok(vec![0.0; n]);
    }
    // The tolerance scales with the column, not with 1: responses shrink
    // like alpha^i and can sit far below 1e-7 while still carrying full
    // relative precision.
    let tol = DECODE_RESIDUAL_TOL * max_abs;
    let y = DVector::from_column_slice(column_values);

    // Precompute the full 2k x n power matrix once.
    let powers: Vec<Vec<f64>> =
        grid.alphas.iter().map(|&a| vandermonde_row(a, n)).collect();

    // Pure argmin over every support of size up to k. A smaller support can
    // reproduce the column down to rounding noise whenever a dropped index
    // contributes below the working precision, so stopping at the first
    // sub-tolerance fit would routinely return subsets of the truth; the
    // full sweep lets the exact support win whenever it fits even slightly
    // better. The runner-up residual decides whether the win is clear.
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut runner_up = f64::INFINITY;
    for size in 1..=k {
        for support in Subsets::new(n, size) {
            let resid = projection_residual(&powers, column_values, &support);
            if resid > tol {
                continue;
            }
            match &mut best {
                Some((b, s)) => {
                    if resid < *b {
                        runner_up = *b;
                        *b = resid;
                        *s = support;
                    } else if resid < runner_up {
                        runner_up = resid;
                    }
                }
                None => best = Some((resid, support)),
            }
        }
    }
    let Some((best_resid, support)) = best else {
        return Err(NoiselessError::NoConsistentSupport);
    };

    // Competitors inside the rounding blur of the best fit are not really
    // separated by f64 residuals: the sweep's winner may be a subset of the
    // truth that absorbed a tiny genuine index. Re-rank the contenders with
    // exact rational least squares on the exact rational values of the f64
    // data; this resolves everything the rounded responses still encode.
    if runner_up <= best_resid * AMBIGUITY_FACTOR {
        if let Some(beta) = exact_rerank(&powers, column_values, n, k, tol, best_resid) {
            return Ok(beta);
        }
    }

    // Re-solve the winning support with iterative refinement: the clustered
    // grid points leave the system ill-conditioned enough that the plain
    // solution can be several digits short of the working precision.
    let (scales, mat) = equilibrate(&powers, &support);
    let svd = mat.clone().svd(true, true);
    let smax = svd.singular_values.amax();
    let mut coef = svd
        .solve(&y, SVD_EPS * smax)
        .map_err(|_| NoiselessError::NoConsistentSupport)?;
    for _ in 0..2 {
        let r = &y - &mat * &coef;
        match svd.solve(&r, SVD_EPS * smax) {
            Ok(d) => coef += d,
            Err(_) => break,
        }
    }
    let mut beta = vec![0.0; n];
    for (c, &idx) in support.iter().enumerate() {
        beta[idx] = coef[c] / scales[c];
    }
    Ok(beta)
}

/// Residuals within this factor of the best are inside the f64 rounding
/// blur and go to the exact re-rank.
const AMBIGUITY_FACTOR: f64 = 32.0;
/// Largest number of contenders the exact re-rank will price.
const EXACT_POOL_CAP: usize = 256;

/// Re-rank every support whose sweep residual sits inside the rounding blur
/// of the best one, using exact rational least squares. Every f64 power and
/// response is an exact rational, so the Gram system, its solution, and the
/// squared residual are computed without any rounding; the support with the
/// exactly smallest residual wins. Returns `None` only if no contender
/// yields a solvable system.
fn exact_rerank(
    powers: &[Vec<f64>],
    column_values: &[f64],
    n: usize,
    k: usize,
    tol: f64,
    best_resid: f64,
) -> Option<Vec<f64>> {
    let cutoff = (best_resid * AMBIGUITY_FACTOR).max(f64::MIN_POSITIVE).min(tol);
    let mut pool: Vec<(f64, Vec<usize>)> = Vec::new();
    for size in 1..=k {
        for support in Subsets::new(n, size) {
            let resid = projection_residual(powers, column_values, &support);
            if resid <= cutoff {
                pool.push((resid, support));
            }
        }
    }
    // Stable sort keeps enumeration order among equal residuals, so the
    // truncation and any exact ties stay deterministic.
    pool.sort_by(|a, b| a.0.total_cmp(&b.0));
    pool.truncate(EXACT_POOL_CAP);

    let y: Vec<BigRational> = column_values
        .iter()
        .map(|v| BigRational::from_float(*v))
        .collect::<Option<_>>()?;
    let mut best: Option<(BigRational, Vec<usize>, Vec<BigRational>)> = None;
    for (_, support) in &pool {
        let Some((r2, coef)) = exact_least_squares(powers, &y, support) else {
            continue;
        };
        if best.as_ref().map_or(true, |(b, _, _)| r2 < *b) {
            best = Some((r2, support.clone(), coef));
        }
    }
    let (_, support, coef) = best?;
    let mut beta = vec![0.0; n];
    for (c, &idx) in support.iter().enumerate() {
        beta[idx] = coef[c].to_f64()?;
    }
    Some(beta)
}

/// Exact least squares of `y` against the support columns, both taken as
/// the exact rationals of their f64 values. Returns the squared residual
/// and the coefficients, or `None` for an exactly singular system.
fn exact_least_squares(
    powers: &[Vec<f64>],
    y: &[BigRational],
    support: &[usize],
) -> Option<(BigRational, Vec<BigRational>)> {
    let rows = y.len();
    let s = support.len();
    let cols: Vec<Vec<BigRational>> = support
        .iter()
        .map(|&idx| {
            (0..rows)
                .map(|r| BigRational::from_float(powers[r][idx]))
                .collect::<Option<Vec<_>>>()
        })
        .collect::<Option<Vec<_>>>()?;
    let zero = BigRational::zero();
    let mut gram = vec![vec![zero.clone(); s]; s];
    for i in 0..s {
        for j in i..s {
            let mut acc = zero.clone();
            for r in 0..rows {
                acc += &cols[i][r] * &cols[j][r];
            }
            gram[i][j] = acc.clone();
            gram[j][i] = acc;
        }
    }
    let mut rhs = Vec::with_capacity(s);
    for col in &cols {
        let mut acc = zero.clone();
        for (a, b) in col.iter().zip(y) {
            acc += a * b;
        }
        rhs.push(acc);
    }
    let coef = solve_exact(gram, rhs.clone())?;
    let mut yty = zero.clone();
    for v in y {
        yty += v * v;
    }
    let mut fit = zero;
    for (a, c) in rhs.iter().zip(&coef) {
        fit += a * c;
    }
    Some((yty - fit, coef))
}

/// Gaussian elimination with exact rational arithmetic; `None` on an
/// exactly singular matrix.
fn solve_exact(
    mut m: Vec<Vec<BigRational>>,
    mut b: Vec<BigRational>,
) -> Option<Vec<BigRational>> {
    let s = b.len();
    for i in 0..s {
        let piv = (i..s).find(|&r| !m[r][i].is_zero())?;
        if piv != i {
            m.swap(i, piv);
            b.swap(i, piv);
        }
        for r in (i + 1)..s {
            if m[r][i].is_zero() {
                continue;
            }
            let f = &m[r][i] / &m[i][i];
            for c in i..s {
                let t = &f * &m[i][c];
                m[r][c] -= t;
            }
            let t = &f * &b[i];
            b[r] -= t;
        }
    }
    let mut x = vec![BigRational::zero(); s];
    for i in (0..s).rev() {
        let mut acc = b[i].clone();
        for c in (i + 1)..s {
            let t = &m[i][c] * &x[c];
            acc -= t;
        }
        x[i] = acc / &m[i][i];
    }
    Some(x)
}

/// Sup norm of `y` minus its orthogonal projection onto the span of the
/// support columns (scaled to unit sup norm first), via Gram-Schmidt with
/// one reorthogonalization pass. This is the least-squares residual without
/// the cost of producing coefficients, cheap enough to sweep every support.
fn projection_residual(powers: &[Vec<f64>], y: &[f64], support: &[usize]) -> f64 {
    let rows = y.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(support.len());
    for &idx in support {
        let mut col: Vec<f64> = (0..rows).map(|r| powers[r][idx]).collect();
        let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if scale == 0.0 {
            continue;
        }
        col.iter_mut().for_each(|v| *v /= scale);
        for _ in 0..2 {
            for q in &basis {
                let dot: f64 = q.iter().zip(&col).map(|(a, b)| a * b).sum();
                col.iter_mut().zip(q).for_each(|(c, a)| *c -= dot * a);
            }
        }
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        // A direction this far inside the existing span adds nothing the
        // final truncated solve would keep.
        if norm > 1e-13 {
            col.iter_mut().for_each(|v| *v /= norm);
            basis.push(col);
        }
    }
    let mut r: Vec<f64> = y.to_vec();
    for _ in 0..2 {
        for q in &basis {
            let dot: f64 = q.iter().zip(&r).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(c, a)| *c -= dot * a);
        }
    }
    r.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Scale each support column to unit sup norm: raw powers span a huge
/// dynamic range and would otherwise push entire singular spectra below any
/// fixed relative cutoff.
fn equilibrate(powers: &[Vec<f64>], support: &[usize]) -> (Vec<f64>, DMatrix<f64>) {
    let rows = powers.len();
    let scales: Vec<f64> = support
        .iter()
        .map(|&idx| {
            let s = (0..rows).fold(0.0f64, |a, r| a.max(powers[r][idx].abs()));
            if s == 0.0 {
                1.0
            } else {
                s
            }
        })
        .collect();
    let mat = DMatrix::from_fn(rows, support.len(), |r, c| powers[r][support[c]] / scales[c]);
    (scales, mat)
}

/// Options for [`recover_noiseless`].
#[derive(Debug, Clone)]
pub struct NoiselessOptions {
    /// Stretch factor on the per-point batch size, for stress runs. The
    /// default of 1 keeps the stated budget of `ceil(L ln(L k^2))` queries
    /// per grid point.
    pub batch_multiplier: f64,
}

impl Default for NoiselessOptions {
    fn default() -> Self {
        NoiselessOptions { batch_multiplier: 1.0 }
    }
}

/// Per-point batch size: `ceil(L ln(L k^2) * multiplier)`, natural log.
pub fn noiseless_batch_size(k: usize, l: usize, multiplier: f64) -> usize {
    let raw = (l as f64) * ((l as f64) * (k * k) as f64).ln() * multiplier;
    raw.ceil().max(1.0) as usize
}

/// Run the full noiseless pipeline against an oracle with `sigma = 0`:
/// draw a query grid, take one batch per grid point, sort and deduplicate
/// each batch, and decode each cross-batch column as a k-sparse vector.
/// Total queries: exactly `2k * ceil(L ln(L k^2) * multiplier)`.
pub fn recover_noiseless<R: Rng>(
    oracle: &mut Oracle,
    rng: &mut R,
    opts: &NoiselessOptions,
) -> Result<RecoveryReport, NoiselessError> {
    if oracle.sigma() != 0.0 {
        return Err(NoiselessError::SigmaNonzero(oracle.sigma()));
    }
    let n = oracle.signals().n();
    let k = oracle.signals().k();
    let l = oracle.signals().l();
    let batch = noiseless_batch_size(k, l, opts.batch_multiplier);
    let start = oracle.query_count();

    let grid = AlphaGrid::sample(k, l, rng)?;
    // Non-adaptive: the full query budget is spent before any batch is
    // inspected, so the count is exact even when a batch turns out bad.
    oracle.mark_design("vandermonde");
    let mut raw: Vec<Vec<f64>> = Vec::with_capacity(2 * k);
    for &alpha in grid.alphas() {
        raw.push(oracle.query_batch(&vandermonde_row(alpha, n), batch)?);
    }
    let mut processed: Vec<Vec<f64>> = Vec::with_capacity(2 * k);
    for samples in &raw {
        processed.push(process_batch(samples, l)?);
    }

    let mut estimates = Vec::with_capacity(l);
    for col in 0..l {
        let column: Vec<f64> = processed.iter().map(|p| p[col]).collect();
        estimates.push(decode_sparse(&grid, &column, n, k)?);
    }

    let mut report = match_and_score(oracle.signals(), &estimates)?;
    report.queries_used = oracle.query_count() - start;
    Ok(report)
}
