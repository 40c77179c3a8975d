//! Sign-pattern sensing matrices, empirical restricted-isometry audits, and
//! an equality/ball-constrained basis pursuit solver.
//!
//! Rows are stored unnormalized with entries in {-1, +1}; every computation
//! that needs near-isometry works with the column-normalized matrix
//! `A = Phi / sqrt(m)`. Basis pursuit runs ADMM on the graph form
//! `min ||z||_1 + ball(w)  s.t.  z = x, w = A x`, which keeps both proximal
//! steps closed-form. When the system has full column rank the feasible set
//! is (up to the ball radius) a single point, so a least-squares solve
//! replaces the iteration.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::combi::{binomial, Subsets};

/// Supports enumerated by the restricted-isometry audit at most.
pub const RIP_SUPPORT_CAP: u128 = 1_000_000;

const ADMM_MAX_ITERS: usize = 50_000;
const ADMM_EPS_ABS: f64 = 1e-10;
const ADMM_EPS_REL: f64 = 1e-8;
const SVD_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CsError {
    #[error("invalid parameter: {0}")]
    BadParams(String),
    #[error("expected {want} entries, got {got}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("sensing rows must have entries in {{-1, +1}}")]
    NotSignPattern,
    #[error("{count} supports of size {k} exceed the audit cap {cap}")]
    SupportCap { count: u128, k: usize, cap: u128 },
}

/// A sign-pattern measurement ensemble with `m` rows in dimension `n`.
#[derive(Debug, Clone)]
pub struct SensingSystem {
    m: usize,
    n: usize,
    phi: DMatrix<f64>,
}

impl SensingSystem {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CsError> {
        let m = rows.len();
        if m == 0 {
            return Err(CsError::BadParams("need at least one row".into()));
        }
        let n = rows[0].len();
        if n == 0 {
            return Err(CsError::BadParams("need at least one column".into()));
        }
        for row in rows {
            if row.len() != n {
                return Err(CsError::DimensionMismatch { got: row.len(), want: n });
            }
            if row.iter().any(|&v| v != 1.0 && v != -1.0) {
                return Err(CsError::NotSignPattern);
            }
        }
        let phi = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
        Ok(SensingSystem { m, n, phi })
    }

    /// Wrap an arbitrary real matrix; for tests of the solver on ensembles
    /// that are not sign patterns.
    pub fn from_matrix_unchecked(phi: DMatrix<f64>) -> Self {
        SensingSystem { m: phi.nrows(), n: phi.ncols(), phi }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.phi.row(i).iter().copied().collect()
    }

    /// Column-normalized matrix `Phi / sqrt(m)`.
    pub fn normalized(&self) -> DMatrix<f64> {
        &self.phi / (self.m as f64).sqrt()
    }

    /// Apply the unnormalized ensemble to a vector.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, CsError> {
        if x.len() != self.n {
            return Err(CsError::DimensionMismatch { got: x.len(), want: self.n });
        }
        let v = DVector::from_column_slice(x);
        Ok((&self.phi * v).iter().copied().collect())
    }

    /// Apply the normalized matrix `Phi / sqrt(m)`, producing measurements
    /// in the scale [`SensingSystem::basis_pursuit`] expects.
    pub fn apply_normalized(&self, x: &[f64]) -> Result<Vec<f64>, CsError> {
        let scale = (self.m as f64).sqrt();
        Ok(self.apply(x)?.into_iter().map(|v| v / scale).collect())
    }

    /// Largest restricted-isometry defect over all supports of size `k`:
    /// `max_S max(s_max^2 - 1, 1 - s_min^2)` for the singular values of the
    /// normalized submatrix on `S`.
    pub fn empirical_rip_delta(&self, k: usize) -> Result<f64, CsError> {
        if k == 0 || k > self.n {
            return Err(CsError::BadParams(format!(
                "support size {k} out of range for {} columns",
                self.n
            )));
        }
        let count = binomial(self.n as u64, k as u64);
        if count > RIP_SUPPORT_CAP {
            return Err(CsError::SupportCap { count, k, cap: RIP_SUPPORT_CAP });
        }
        let a = self.normalized();
        let mut delta: f64 = 0.0;
        for support in Subsets::new(self.n, k) {
            let sub = a.select_columns(support.iter());
            let sv = sub.singular_values();
            let smax = sv.max();
            let smin = if k > self.m { 0.0 } else { sv.min() };
            delta = delta.max(smax * smax - 1.0).max(1.0 - smin * smin);
        }
        Ok(delta)
    }

    /// Minimize `||x||_1` subject to `||A x - y||_2 <= tol` for the
    /// normalized matrix `A = Phi / sqrt(m)`; `y` is given in that
    /// normalized scale. `tol = 0` demands equality.
    pub fn basis_pursuit(&self, y: &[f64], tol: f64) -> Result<BpSolution, CsError> {
        self.basis_pursuit_impl(y, tol, false)
    }

    #[cfg(test)]
    pub(crate) fn basis_pursuit_iterative(
        &self,
        y: &[f64],
        tol: f64,
    ) -> Result<BpSolution, CsError> {
        self.basis_pursuit_impl(y, tol, true)
    }

    fn basis_pursuit_impl(
        &self,
        y: &[f64],
        tol: f64,
        force_iterative: bool,
    ) -> Result<BpSolution, CsError> {
        if y.len() != self.m {
            return Err(CsError::DimensionMismatch { got: y.len(), want: self.m });
        }
        if !(tol >= 0.0) {
            return Err(CsError::BadParams("tolerance must be nonnegative".into()));
        }
        let a = self.normalized();
        let b = DVector::from_column_slice(y);

        if !force_iterative && self.m >= self.n {
            let svd = a.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let rank = svd.singular_values.iter().filter(|&&s| s > SVD_EPS * smax).count();
            if rank == self.n {
                // Full column rank: the constraint pins x down entirely.
                let x = svd.solve(&b, SVD_EPS).expect("svd computed");
                return Ok(BpSolution {
                    beta: x.iter().copied().collect(),
                    converged: true,
                    iterations: 0,
                });
            }
        }

        self.admm(&a, &b, tol)
    }

    fn admm(&self, a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Result<BpSolution, CsError> {
        let (m, n) = (self.m, self.n);
        let at = a.transpose();

        // x-update solves (I + A^T A) x = rhs; factor once, on the smaller
        // Gram matrix via the push-through identity when m < n.
        enum Factor {
            Direct(nalgebra::Cholesky<f64, nalgebra::Dyn>),
            Woodbury(nalgebra::Cholesky<f64, nalgebra::Dyn>),
        }
        let factor = if n <= m {
            let gram = DMatrix::identity(n, n) + &at * a;
            Factor::Direct(
                nalgebra::Cholesky::new(gram)
                    .ok_or_else(|| CsError::BadParams("gram factorization failed".into()))?,
            )
        } else {
            let gram = DMatrix::identity(m, m) + a * &at;
            Factor::Woodbury(
                nalgebra::Cholesky::new(gram)
                    .ok_or_else(|| CsError::BadParams("gram factorization failed".into()))?,
            )
        };
        let solve = |rhs: &DVector<f64>| -> DVector<f64> {
            match &factor {
                Factor::Direct(ch) => ch.solve(rhs),
                Factor::Woodbury(ch) => rhs - &at * ch.solve(&(a * rhs)),
            }
        };

        let mut x = DVector::zeros(n);
        let mut z = DVector::zeros(n);
        let mut w = b.clone();
        let mut uz = DVector::zeros(n);
        let mut uw = DVector::zeros(m);
        let mut converged = false;
        let mut iterations = ADMM_MAX_ITERS;

        for it in 0..ADMM_MAX_ITERS {
            let rhs = (&z - &uz) + &at * (&w - &uw);
            x = solve(&rhs);
            let ax = a * &x;

            let z_prev = z.clone();
            let w_prev = w.clone();
            z = (&x + &uz).map(|v| soft(v, 1.0));
            w = project_ball(&(&ax + &uw), b, tol);
            uz += &x - &z;
            uw += &ax - &w;

            let primal =
                ((&x - &z).norm_squared() + (&ax - &w).norm_squared()).sqrt();
            let dual = ((&z - &z_prev).norm_squared()
                + (&at * (&w - &w_prev)).norm_squared())
            .sqrt();
            let scale = (x.norm_squared() + ax.norm_squared())
                .sqrt()
                .max((z.norm_squared() + w.norm_squared()).sqrt());
            let eps_primal = ADMM_EPS_ABS * ((n + m) as f64).sqrt() + ADMM_EPS_REL * scale;
            let dual_scale = (uz.norm_squared() + (&at * &uw).norm_squared()).sqrt();
            let eps_dual = ADMM_EPS_ABS * (n as f64).sqrt() + ADMM_EPS_REL * dual_scale;
            if primal <= eps_primal && dual <= eps_dual {
                converged = true;
                iterations = it + 1;
                break;
            }
        }

        // The z iterate carries exact zeros; small survivors are dust.
        let thr = 10.0 * tol;
        let support: Vec<usize> =
            (0..n).filter(|&i| z[i].abs() > thr).collect();
        let beta = if support.is_empty() {
            vec![0.0; n]
        } else if support.len() <= m {
            let sub = a.select_columns(support.iter());
            let ls = sub.svd(true, true).solve(b, SVD_EPS).expect("svd computed");
            let mut full = vec![0.0; n];
            for (pos, &i) in support.iter().enumerate() {
                full[i] = ls[pos];
            }
            full
        } else {
            x.iter().copied().collect()
        };
        Ok(BpSolution { beta, converged, iterations })
    }
}

fn soft(v: f64, kappa: f64) -> f64 {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}

/// Project onto the ball of radius `tol` around `b`.
fn project_ball(v: &DVector<f64>, b: &DVector<f64>, tol: f64) -> DVector<f64> {
    let d = v - b;
    let norm = d.norm();
    if norm <= tol {
        v.clone()
    } else if tol == 0.0 {
        b.clone()
    } else {
        b + d * (tol / norm)
    }
}

/// Draw a sign-pattern ensemble with independent uniform entries.
pub fn sample_pm1<R: Rng>(m: usize, n: usize, rng: &mut R) -> SensingSystem {
    let phi = DMatrix::from_fn(m, n, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 });
    SensingSystem { m, n, phi }
}

/// Basis pursuit output: the estimate after support thresholding and
/// least-squares debiasing, whether the iteration met its tolerances, and
/// how many iterations ran (0 for the direct full-rank path).
#[derive(Debug, Clone)]
pub struct BpSolution {
    pub beta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rows_are_validated() {
        assert!(SensingSystem::from_rows(&[vec![1.0, -1.0]]).is_ok());
        assert!(matches!(
            SensingSystem::from_rows(&[vec![1.0, 0.5]]),
            Err(CsError::NotSignPattern)
        ));
        assert!(matches!(
            SensingSystem::from_rows(&[vec![1.0, 1.0], vec![1.0]]),
            Err(CsError::DimensionMismatch { .. })
        ));
        assert!(SensingSystem::from_rows(&[]).is_err());
    }

    #[test]
    fn sampling_is_seeded_and_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s1 = sample_pm1(50, 40, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s2 = sample_pm1(50, 40, &mut rng);
        assert_eq!(s1.phi, s2.phi);
        let mean: f64 = s1.phi.iter().sum::<f64>() / 2000.0;
        assert!(mean.abs() < 0.05, "sign imbalance {mean}");
        assert!(s1.phi.iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn rip_delta_exact_small_cases() {
        // Orthogonal rows: A^T A = I, so every defect vanishes.
        let ortho = SensingSystem::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        assert!(ortho.empirical_rip_delta(1).unwrap().abs() < 1e-12);
        assert!(ortho.empirical_rip_delta(2).unwrap().abs() < 1e-12);
        // Repeated row: the pair support has Gram eigenvalues {0, 2}.
        let flat = SensingSystem::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(flat.empirical_rip_delta(1).unwrap().abs() < 1e-12);
        assert!((flat.empirical_rip_delta(2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rip_delta_matches_gram_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sys = sample_pm1(12, 10, &mut rng);
        let k = 2;
        let via_svd = sys.empirical_rip_delta(k).unwrap();
        // Independent method: extremal eigenvalues of each A_S^T A_S.
        let a = sys.normalized();
        let mut via_eig: f64 = 0.0;
        for support in Subsets::new(10, k) {
            let sub = a.select_columns(support.iter());
            let gram = sub.transpose() * sub;
            let eig = gram.symmetric_eigen().eigenvalues;
            via_eig = via_eig.max(eig.max() - 1.0).max(1.0 - eig.min());
        }
        assert!((via_svd - via_eig).abs() < 1e-10);
    }

    #[test]
    fn rip_audit_refuses_huge_enumerations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sys = sample_pm1(4, 40, &mut rng);
        assert!(matches!(
            sys.empirical_rip_delta(10),
            Err(CsError::SupportCap { .. })
        ));
        assert!(sys.empirical_rip_delta(0).is_err());
        assert!(sys.empirical_rip_delta(41).is_err());
    }

    #[test]
    fn full_rank_square_system_is_solved_directly() {
        let sys = SensingSystem::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let x0 = [0.75, -2.0];
        let y = sys.apply_normalized(&x0).unwrap();
        let sol = sys.basis_pursuit(&y, 0.0).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.converged);
        for (got, want) in sol.beta.iter().zip(x0) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_test_double_returns_measurements_verbatim() {
        // Matrix chosen so the normalized system is exactly the identity.
        let m = 3usize;
        let phi = DMatrix::from_diagonal_element(m, m, (m as f64).sqrt());
        let sys = SensingSystem::from_matrix_unchecked(phi);
        let y = [0.25, -1.5, 3.0];
        let sol = sys.basis_pursuit(&y, 0.0).unwrap();
        for (got, want) in sol.beta.iter().zip(y) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn solutions_scale_with_the_measurements() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let sys = sample_pm1(7, 14, &mut rng);
        let mut x0 = vec![0.0; 14];
        x0[2] = 1.0;
        x0[9] = -0.25;
        let y = sys.apply_normalized(&x0).unwrap();
        let base = sys.basis_pursuit(&y, 0.0).unwrap();
        for c in [3.0, -0.5] {
            let scaled: Vec<f64> = y.iter().map(|v| c * v).collect();
            let sol = sys.basis_pursuit(&scaled, 0.0).unwrap();
            for (got, want) in sol.beta.iter().zip(&base.beta) {
                assert!((got - c * want).abs() < 1e-6, "scaling broke: {got} vs {}", c * want);
            }
        }
    }

    #[test]
    fn zero_measurements_give_zero_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sys = sample_pm1(6, 12, &mut rng);
        let sol = sys.basis_pursuit(&vec![0.0; 6], 0.0).unwrap();
        assert!(sol.beta.iter().all(|&v| v == 0.0));
    }

    /// Exhaustive sparse oracle: over all supports of size <= kmax whose
    /// columns are independent and fit y exactly, the candidate with the
    /// smallest l1 norm.
    fn sparse_l1_oracle(sys: &SensingSystem, y: &[f64], kmax: usize) -> Option<Vec<f64>> {
        let a = sys.normalized();
        let b = DVector::from_column_slice(y);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for k in 1..=kmax {
            for support in Subsets::new(sys.n(), k) {
                let sub = a.select_columns(support.iter());
                let svd = sub.clone().svd(true, true);
                let Ok(xs) = svd.solve(&b, 1e-12) else { continue };
                if ((sub * &xs) - &b).norm() > 1e-9 {
                    continue;
                }
                let l1: f64 = xs.iter().map(|v| v.abs()).sum();
                if best.as_ref().map_or(true, |(c, _)| l1 < *c - 1e-12) {
                    let mut full = vec![0.0; sys.n()];
                    for (pos, &i) in support.iter().enumerate() {
                        full[i] = xs[pos];
                    }
                    best = Some((l1, full));
                }
            }
        }
        best.map(|(_, v)| v)
    }

    #[test]
    fn admm_matches_exhaustive_oracle_on_underdetermined_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut checked = 0;
        for trial in 0..6 {
            let sys = sample_pm1(6, 9, &mut rng);
            let mut x0 = vec![0.0; 9];
            x0[(trial * 2) % 9] = 1.5;
            let y = sys.apply_normalized(&x0).unwrap();
            let oracle = sparse_l1_oracle(&sys, &y, 2).unwrap();
            // Only judge the solver when the sparse candidate is the true
            // optimum: it must be at least as cheap as the planted vector.
            let sol = sys.basis_pursuit(&y, 0.0).unwrap();
            assert!(sol.converged, "admm hit the iteration cap");
            let l1_sol: f64 = sol.beta.iter().map(|v| v.abs()).sum();
            let l1_oracle: f64 = oracle.iter().map(|v| v.abs()).sum();
            assert!(l1_sol <= l1_oracle + 1e-6, "solver worse than sparse oracle");
            if (l1_sol - l1_oracle).abs() <= 1e-6 {
                for (got, want) in sol.beta.iter().zip(&oracle) {
                    assert!(
                        (got - want).abs() < 1e-6,
                        "solution differs from equally cheap oracle"
                    );
                }
                checked += 1;
            }
        }
        assert!(checked >= 4, "too few instances had a sparse optimum: {checked}");
    }

    #[test]
    fn iterative_path_agrees_with_direct_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sys = sample_pm1(10, 6, &mut rng);
        let mut x0 = vec![0.0; 6];
        x0[1] = 2.0;
        x0[4] = -0.5;
        let y = sys.apply_normalized(&x0).unwrap();
        let direct = sys.basis_pursuit(&y, 0.0).unwrap();
        let iterative = sys.basis_pursuit_iterative(&y, 0.0).unwrap();
        assert_eq!(direct.iterations, 0);
        assert!(iterative.iterations > 0);
        assert!(iterative.converged);
        for (d, i) in direct.beta.iter().zip(&iterative.beta) {
            assert!((d - i).abs() < 1e-6, "paths disagree: {d} vs {i}");
        }
    }

    #[test]
    fn ball_constraint_absorbs_small_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let sys = sample_pm1(8, 12, &mut rng);
        let mut x0 = vec![0.0; 12];
        x0[3] = 1.0;
        let mut y = sys.apply_normalized(&x0).unwrap();
        for v in &mut y {
            *v += 1e-4;
        }
        let sol = sys.basis_pursuit(&y, 1e-3).unwrap();
        assert!(sol.converged);
        // The planted spike should dominate the estimate.
        let mut idx: Vec<usize> = (0..12).collect();
        idx.sort_by(|&i, &j| sol.beta[j].abs().total_cmp(&sol.beta[i].abs()));
        assert_eq!(idx[0], 3);
        assert!((sol.beta[3] - 1.0).abs() < 0.05);
    }
}
