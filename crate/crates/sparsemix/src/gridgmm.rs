//! Mean estimation for uniform Gaussian mixtures with means on a known grid.
//!
//! Batches of noisy oracle responses are samples from a uniform mixture of
//! `L` Gaussians sharing a known standard deviation, with every mean an
//! integer multiple of a known pitch. Estimators here return the mean
//! multiset as grid indices, so downstream alignment can compare means
//! exactly in integer arithmetic.
//!
//! The workhorse is a minimum-distance estimator: enumerate candidate mean
//! multisets inside a data-driven window and keep the candidate whose mixture
//! CDF is closest to the empirical CDF in Kolmogorov-Smirnov distance. A
//! brute-force exact log-likelihood maximizer over the same candidate set
//! serves as a cross-check, and a snapped Lloyd iteration provides a fast
//! path for windows too large to enumerate.

use rand::Rng;
use statrs::function::erf::erf;
use thiserror::Error;

use crate::combi::binomial;

/// Candidate multisets the enumerating estimators will consider at most.
pub const MIN_DISTANCE_CAP: u128 = 2_000_000;
/// Default candidate cap for the brute-force likelihood estimator.
pub const BRUTE_CAP_DEFAULT: u128 = 100_000;

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("invalid parameter: {0}")]
    BadParams(String),
    #[error("window of {points} grid points yields {candidates} candidate multisets, over the cap {cap}")]
    WindowTooLarge { points: u64, candidates: u128, cap: u128 },
    #[error("estimator needs at least one sample")]
    NoSamples,
}

/// A uniform mixture of `l` Gaussians with shared deviation and means on the
/// grid `epsilon * Z`, stored as sorted grid indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMixture {
    l: usize,
    sigma: f64,
    epsilon: f64,
    mean_idx: Vec<i64>,
}

impl GridMixture {
    pub fn new(sigma: f64, epsilon: f64, mut mean_idx: Vec<i64>) -> Result<Self, GmmError> {
        if mean_idx.is_empty() {
            return Err(GmmError::BadParams("a mixture needs at least one mean".into()));
        }
        if !(epsilon > 0.0) || !(sigma >= 0.0) {
            return Err(GmmError::BadParams("epsilon must be positive, sigma nonnegative".into()));
        }
        mean_idx.sort_unstable();
        Ok(GridMixture { l: mean_idx.len(), sigma, epsilon, mean_idx })
    }

    /// Snap real means to the grid; each must lie within 1e-9 of a grid point.
    pub fn from_means(means: &[f64], sigma: f64, epsilon: f64) -> Result<Self, GmmError> {
        let mut idx = Vec::with_capacity(means.len());
        for &m in means {
            let i = (m / epsilon).round();
            if (m - i * epsilon).abs() > 1e-9 {
                return Err(GmmError::BadParams(format!(
                    "mean {m} is not a multiple of epsilon = {epsilon}"
                )));
            }
            idx.push(i as i64);
        }
        GridMixture::new(sigma, epsilon, idx)
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mean_idx(&self) -> &[i64] {
        &self.mean_idx
    }

    pub fn means(&self) -> Vec<f64> {
        self.mean_idx.iter().map(|&i| i as f64 * self.epsilon).collect()
    }

    /// Mixture CDF at `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for &i in &self.mean_idx {
            acc += normal_cdf((x - i as f64 * self.epsilon) / self.sigma);
        }
        acc / self.l as f64
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Batch size prescribed for exact mean identification:
/// `ceil(c * L^2 * ln(n) * exp((sigma/epsilon)^(2/3)))`. `n` is accepted as a
/// real so calibration sweeps can probe fractional scales.
pub fn required_batch_size(
    sigma: f64,
    epsilon: f64,
    l: usize,
    n: f64,
    c: f64,
) -> Result<usize, GmmError> {
    if !(epsilon > 0.0) || !(sigma >= 0.0) || !(c > 0.0) || !(n > 1.0) || l == 0 {
        return Err(GmmError::BadParams(
            "need epsilon > 0, sigma >= 0, c > 0, n > 1, L >= 1".into(),
        ));
    }
    let ratio = sigma / epsilon;
    let t = c * (l * l) as f64 * n.ln() * ratio.powf(2.0 / 3.0).exp();
    Ok(t.ceil().max(1.0) as usize)
}

/// Grid-aligned index window guaranteed to contain every mean that produced
/// at least one sample: four deviations beyond the observed extremes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidateWindow {
    pub lo: i64,
    pub hi: i64,
}

impl CandidateWindow {
    pub fn points(&self) -> u64 {
        (self.hi - self.lo + 1).max(0) as u64
    }
}

pub fn make_window(samples: &[f64], sigma: f64, epsilon: f64) -> Result<CandidateWindow, GmmError> {
    if samples.is_empty() {
        return Err(GmmError::NoSamples);
    }
    if !(epsilon > 0.0) || !(sigma >= 0.0) {
        return Err(GmmError::BadParams("epsilon must be positive, sigma nonnegative".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &s in samples {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    Ok(CandidateWindow {
        lo: ((lo - 4.0 * sigma) / epsilon).floor() as i64,
        hi: ((hi + 4.0 * sigma) / epsilon).ceil() as i64,
    })
}

/// Iterate weakly increasing index multisets of size `l` over `[lo, hi]`.
struct Multisets {
    hi: i64,
    cur: Vec<i64>,
    done: bool,
}

impl Multisets {
    fn new(lo: i64, hi: i64, l: usize) -> Self {
        Multisets { hi, cur: vec![lo; l], done: hi < lo || l == 0 }
    }
}

impl Iterator for Multisets {
    type Item = Vec<i64>;

    fn next(&mut self) -> Option<Vec<i64>> {
        if self.done {
            return None;
        }
        let out = self.cur.clone();
        let l = self.cur.len();
        let mut i = l;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.cur[i] < self.hi {
                let v = self.cur[i] + 1;
                for j in i..l {
                    self.cur[j] = v;
                }
                break;
            }
        }
        Some(out)
    }
}

fn candidate_count(window: &CandidateWindow, l: usize) -> u128 {
    let w = window.points();
    if w == 0 {
        return 0;
    }
    binomial(w + l as u64 - 1, l as u64)
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `sorted` and the
/// candidate mixture CDF given per-sample per-grid-point CDF values.
fn ks_from_table(table: &[Vec<f64>], cand: &[i64], lo: i64, t_count: usize) -> f64 {
    let l = cand.len();
    let inv_t = 1.0 / t_count as f64;
    let inv_l = 1.0 / l as f64;
    let mut worst: f64 = 0.0;
    for t in 0..t_count {
        let mut f = 0.0;
        for &g in cand {
            f += table[(g - lo) as usize][t];
        }
        f *= inv_l;
        let below = f - t as f64 * inv_t;
        let above = (t + 1) as f64 * inv_t - f;
        worst = worst.max(below).max(above);
    }
    worst
}

/// Minimum-distance estimate: the candidate mean multiset whose mixture CDF
/// is KS-closest to the empirical CDF. Candidates are enumerated in
/// lexicographic order and ties keep the earliest, so the estimate is
/// deterministic. Errors when the window holds more than
/// [`MIN_DISTANCE_CAP`] multisets.
pub fn min_distance_estimate(
    samples: &[f64],
    l: usize,
    sigma: f64,
    epsilon: f64,
    window: &CandidateWindow,
) -> Result<GridMixture, GmmError> {
    enumerated_estimate(samples, l, sigma, epsilon, window, MIN_DISTANCE_CAP, Objective::Ks)
}

/// Exact log-likelihood maximizer over the same candidate set as
/// [`min_distance_estimate`], as an independent cross-check. Candidate cap
/// defaults to [`BRUTE_CAP_DEFAULT`] in callers that do not tune it.
pub fn brute_likelihood_estimate(
    samples: &[f64],
    l: usize,
    sigma: f64,
    epsilon: f64,
    window: &CandidateWindow,
    cap: u128,
) -> Result<GridMixture, GmmError> {
    enumerated_estimate(samples, l, sigma, epsilon, window, cap, Objective::LogLik)
}

enum Objective {
    Ks,
    LogLik,
}

fn enumerated_estimate(
    samples: &[f64],
    l: usize,
    sigma: f64,
    epsilon: f64,
    window: &CandidateWindow,
    cap: u128,
    objective: Objective,
) -> Result<GridMixture, GmmError> {
    if samples.is_empty() {
        return Err(GmmError::NoSamples);
    }
    if l == 0 || !(epsilon > 0.0) || !(sigma > 0.0) {
        return Err(GmmError::BadParams(
            "need L >= 1, epsilon > 0 and sigma > 0 for distribution fitting".into(),
        ));
    }
    let count = candidate_count(window, l);
    if count == 0 {
        return Err(GmmError::BadParams("empty candidate window".into()));
    }
    if count > cap {
        return Err(GmmError::WindowTooLarge { points: window.points(), candidates: count, cap });
    }

    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let t_count = sorted.len();

    match objective {
        Objective::Ks => {
            // One CDF column per window grid point, shared by all candidates.
            let table: Vec<Vec<f64>> = (window.lo..=window.hi)
                .map(|g| {
                    let mu = g as f64 * epsilon;
                    sorted.iter().map(|&x| normal_cdf((x - mu) / sigma)).collect()
                })
                .collect();
            let mut best: Option<(f64, Vec<i64>)> = None;
            for cand in Multisets::new(window.lo, window.hi, l) {
                let d = ks_from_table(&table, &cand, window.lo, t_count);
                if best.as_ref().map_or(true, |(b, _)| d < *b) {
                    best = Some((d, cand));
                }
            }
            let (_, idx) = best.unwrap();
            GridMixture::new(sigma, epsilon, idx)
        }
        Objective::LogLik => {
            let inv_two_var = 1.0 / (2.0 * sigma * sigma);
            let mut best: Option<(f64, Vec<i64>)> = None;
            for cand in Multisets::new(window.lo, window.hi, l) {
                let mut ll = 0.0;
                for &x in &sorted {
                    // log-sum-exp over components; constants shared across
                    // candidates are dropped.
                    let mut m = f64::NEG_INFINITY;
                    for &g in &cand {
                        let d = x - g as f64 * epsilon;
                        m = m.max(-d * d * inv_two_var);
                    }
                    if m == f64::NEG_INFINITY {
                        ll = f64::NEG_INFINITY;
                        break;
                    }
                    let mut s = 0.0;
                    for &g in &cand {
                        let d = x - g as f64 * epsilon;
                        s += (-d * d * inv_two_var - m).exp();
                    }
                    ll += m + s.ln();
                }
                if best.as_ref().map_or(true, |(b, _)| ll > *b) {
                    best = Some((ll, cand));
                }
            }
            let (_, idx) = best.unwrap();
            GridMixture::new(sigma, epsilon, idx)
        }
    }
}

/// Lloyd iteration with `l` centers snapped to the grid: the fast path when
/// the candidate window is too large to enumerate. Ten seeded restarts, at
/// most 100 iterations each, stopping early once no center moves by
/// `epsilon / 100`; the restart with the smallest within-cluster squared
/// distance wins, and its centers are rounded to grid indices.
pub fn lloyd_snap<R: Rng>(
    samples: &[f64],
    l: usize,
    sigma: f64,
    epsilon: f64,
    rng: &mut R,
) -> Result<GridMixture, GmmError> {
    if samples.is_empty() {
        return Err(GmmError::NoSamples);
    }
    if l == 0 || !(epsilon > 0.0) {
        return Err(GmmError::BadParams("need L >= 1 and epsilon > 0".into()));
    }
    let t = samples.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..10 {
        let mut centers: Vec<f64> = if t >= l {
            rand::seq::index::sample(rng, t, l).iter().map(|i| samples[i]).collect()
        } else {
            (0..l).map(|_| samples[rng.gen_range(0..t)]).collect()
        };
        let mut assign = vec![0usize; t];
        for _ in 0..100 {
            for (i, &x) in samples.iter().enumerate() {
                let mut bi = 0;
                let mut bd = f64::INFINITY;
                for (c, &mu) in centers.iter().enumerate() {
                    let d = (x - mu) * (x - mu);
                    if d < bd {
                        bd = d;
                        bi = c;
                    }
                }
                assign[i] = bi;
            }
            let mut movement = 0.0f64;
            for c in 0..l {
                let mut sum = 0.0;
                let mut cnt = 0usize;
                for (i, &x) in samples.iter().enumerate() {
                    if assign[i] == c {
                        sum += x;
                        cnt += 1;
                    }
                }
                if cnt > 0 {
                    let mu = sum / cnt as f64;
                    movement = movement.max((mu - centers[c]).abs());
                    centers[c] = mu;
                }
            }
            if movement < epsilon / 100.0 {
                break;
            }
        }
        let obj: f64 = samples
            .iter()
            .map(|&x| {
                centers.iter().map(|&mu| (x - mu) * (x - mu)).fold(f64::INFINITY, f64::min)
            })
            .sum();
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, centers));
        }
    }
    let (_, centers) = best.unwrap();
    let idx: Vec<i64> = centers.iter().map(|&c| (c / epsilon).round() as i64).collect();
    GridMixture::new(sigma, epsilon, idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn draw_mixture<R: Rng>(
        means: &[f64],
        sigma: f64,
        t: usize,
        rng: &mut R,
    ) -> Vec<f64> {
        (0..t)
            .map(|_| {
                let j = rng.gen_range(0..means.len());
                let z: f64 = rng.sample(StandardNormal);
                means[j] + sigma * z
            })
            .collect()
    }

    #[test]
    fn batch_size_formula() {
        // sigma/eps = 1, n = e so ln n = 1, c = 10, L = 2: ceil(40 e) = 109.
        let t = required_batch_size(1.0, 1.0, 2, std::f64::consts::E, 10.0).unwrap();
        assert_eq!(t, 109);
        // sigma = 0 drops the exponential factor.
        let t0 = required_batch_size(0.0, 1.0, 1, std::f64::consts::E, 2.0).unwrap();
        assert_eq!(t0, 2);
        assert!(required_batch_size(1.0, 0.0, 2, 10.0, 1.0).is_err());
        assert!(required_batch_size(1.0, 1.0, 2, 1.0, 1.0).is_err());
    }

    #[test]
    fn batch_size_matches_direct_reimplementation() {
        for &(sigma, eps, l, n, c) in &[
            (0.5f64, 1.0f64, 3usize, 48.0f64, 4.0f64),
            (8.0, 1.0, 2, 100.0, 4.0),
            (1.5, 0.5, 2, 64.0, 24.0),
        ] {
            let got = required_batch_size(sigma, eps, l, n, c).unwrap();
            let expect =
                (c * (l as f64).powi(2) * n.ln() * ((sigma / eps).powf(2.0 / 3.0)).exp())
                    .ceil() as usize;
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn window_bounds_are_grid_aligned() {
        let w = make_window(&[0.1, -0.2], 0.1, 1.0).unwrap();
        assert_eq!(w, CandidateWindow { lo: -1, hi: 1 });
        assert_eq!(w.points(), 3);
        assert!(make_window(&[], 0.1, 1.0).is_err());
    }

    #[test]
    fn multisets_enumerate_weakly_increasing() {
        let all: Vec<Vec<i64>> = Multisets::new(-1, 1, 2).collect();
        assert_eq!(
            all,
            vec![
                vec![-1, -1],
                vec![-1, 0],
                vec![-1, 1],
                vec![0, 0],
                vec![0, 1],
                vec![1, 1]
            ]
        );
        assert_eq!(candidate_count(&CandidateWindow { lo: -1, hi: 1 }, 2), 6);
    }

    #[test]
    fn min_distance_recovers_well_separated_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let samples = draw_mixture(&[-1.0, 2.0], 0.2, 400, &mut rng);
        let w = make_window(&samples, 0.2, 1.0).unwrap();
        let est = min_distance_estimate(&samples, 2, 0.2, 1.0, &w).unwrap();
        assert_eq!(est.mean_idx(), &[-1, 2]);
        assert_eq!(est.means(), vec![-1.0, 2.0]);
    }

    #[test]
    fn min_distance_handles_duplicate_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let samples = draw_mixture(&[0.0, 0.0], 0.15, 300, &mut rng);
        let w = make_window(&samples, 0.15, 1.0).unwrap();
        let est = min_distance_estimate(&samples, 2, 0.15, 1.0, &w).unwrap();
        let brute = brute_likelihood_estimate(&samples, 2, 0.15, 1.0, &w, BRUTE_CAP_DEFAULT)
            .unwrap();
        assert_eq!(est.mean_idx(), &[0, 0]);
        assert_eq!(brute.mean_idx(), &[0, 0]);
    }

    #[test]
    fn window_cap_is_enforced() {
        let w = CandidateWindow { lo: 0, hi: 4_000_000 };
        let err = min_distance_estimate(&[0.0], 1, 1.0, 1.0, &w).unwrap_err();
        assert!(matches!(err, GmmError::WindowTooLarge { .. }));
    }

    #[test]
    fn brute_likelihood_sigma_to_zero_picks_empirical_support() {
        // Samples sitting exactly on grid points with vanishing sigma: the
        // likelihood concentrates on the support actually observed.
        let samples = [1.0, 1.0, -2.0, 1.0];
        let w = CandidateWindow { lo: -3, hi: 3 };
        let est =
            brute_likelihood_estimate(&samples, 2, 1e-6, 1.0, &w, BRUTE_CAP_DEFAULT).unwrap();
        assert_eq!(est.mean_idx(), &[-2, 1]);
    }

    #[test]
    fn estimators_are_shift_equivariant_on_dyadic_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Dyadic samples and pitch keep all arithmetic exact, so the shifted
        // run must produce exactly the shifted estimate.
        let base: Vec<f64> = (0..64).map(|_| {
            let j = if rng.gen::<bool>() { 0.0 } else { 2.0 };
            j + (rng.gen_range(-8..=8) as f64) * 0.03125
        }).collect();
        let eps = 0.5;
        let sigma = 0.25;
        for shift_steps in [-3i64, 2, 7] {
            let shift = shift_steps as f64 * eps;
            let shifted: Vec<f64> = base.iter().map(|x| x + shift).collect();
            let w0 = make_window(&base, sigma, eps).unwrap();
            let w1 = make_window(&shifted, sigma, eps).unwrap();
            assert_eq!(w1.lo, w0.lo + shift_steps);
            assert_eq!(w1.hi, w0.hi + shift_steps);
            let e0 = min_distance_estimate(&base, 2, sigma, eps, &w0).unwrap();
            let e1 = min_distance_estimate(&shifted, 2, sigma, eps, &w1).unwrap();
            let moved: Vec<i64> = e0.mean_idx().iter().map(|i| i + shift_steps).collect();
            assert_eq!(e1.mean_idx(), &moved[..]);
        }
    }

    #[test]
    fn estimators_commute_with_negation() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let samples = draw_mixture(&[-1.0, 0.5], 0.2, 256, &mut rng);
        let eps = 0.5;
        let w = make_window(&samples, 0.2, eps).unwrap();
        let est = min_distance_estimate(&samples, 2, 0.2, eps, &w).unwrap();
        let negated: Vec<f64> = samples.iter().map(|x| -x).collect();
        let wn = make_window(&negated, 0.2, eps).unwrap();
        let estn = min_distance_estimate(&negated, 2, 0.2, eps, &wn).unwrap();
        let mirrored: Vec<i64> = est.mean_idx().iter().rev().map(|i| -i).collect();
        assert_eq!(estn.mean_idx(), &mirrored[..]);
    }

    #[test]
    fn lloyd_snap_matches_enumeration_when_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let samples = draw_mixture(&[-2.0, 1.0, 3.0], 0.2, 600, &mut rng);
        let w = make_window(&samples, 0.2, 1.0).unwrap();
        let slow = min_distance_estimate(&samples, 3, 0.2, 1.0, &w).unwrap();
        let mut krng = ChaCha8Rng::seed_from_u64(1);
        let fast = lloyd_snap(&samples, 3, 0.2, 1.0, &mut krng).unwrap();
        assert_eq!(slow.mean_idx(), fast.mean_idx());
        assert_eq!(slow.mean_idx(), &[-2, 1, 3]);
    }

    #[test]
    fn lloyd_snap_collapses_duplicate_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Two true clusters, three centers: the split cluster must still snap
        // onto the same grid point twice.
        let samples = draw_mixture(&[0.0, 4.0], 0.1, 500, &mut rng);
        let mut krng = ChaCha8Rng::seed_from_u64(2);
        let est = lloyd_snap(&samples, 3, 0.1, 1.0, &mut krng).unwrap();
        let idx = est.mean_idx();
        assert!(idx == [0, 0, 4] || idx == [0, 4, 4], "got {idx:?}");
    }

    #[test]
    fn mixture_cdf_is_monotone_and_normalized() {
        let m = GridMixture::new(0.5, 1.0, vec![-1, 2]).unwrap();
        assert!(m.cdf(-10.0) < 1e-6);
        assert!(m.cdf(10.0) > 1.0 - 1e-6);
        let mut prev = 0.0;
        for i in -40..=40 {
            let c = m.cdf(i as f64 * 0.25);
            assert!(c >= prev);
            prev = c;
        }
    }
}
