//! Hidden signal sets and recovery scoring.
//!
//! A signal set holds the `L` distinct k-sparse vectors a simulation hides
//! behind the oracle. Scoring compares an estimate list against the hidden
//! vectors under the best permutation and reports per-signal l1 error ratios
//! relative to the best k-term approximation.

use rand::Rng;
use thiserror::Error;

use crate::combi::binomial;

/// Absolute tolerance for entry equality and grid membership checks.
pub const ENTRY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("impossible parameters: {0}")]
    ImpossibleParams(String),
    #[error("invalid signal set: {0}")]
    InvalidSignals(String),
    #[error("malformed signal file: {0}")]
    Parse(String),
}

/// The hidden vectors behind an oracle.
///
/// Invariants (checked by [`SignalSet::new`]): every vector has length `n`
/// and at most `k` nonzero entries, vectors are pairwise distinct, and when
/// `epsilon` is present every entry is an integer multiple of it (absolute
/// tolerance [`ENTRY_TOL`]).
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSet {
    n: usize,
    k: usize,
    l: usize,
    vectors: Vec<Vec<f64>>,
    epsilon: Option<f64>,
}

impl SignalSet {
    pub fn new(
        n: usize,
        k: usize,
        vectors: Vec<Vec<f64>>,
        epsilon: Option<f64>,
    ) -> Result<Self, ModelError> {
        let l = vectors.len();
        if n == 0 || k == 0 || l == 0 {
            return Err(ModelError::InvalidSignals(
                "n, k and the vector count must all be positive".into(),
            ));
        }
        if k > n {
            return Err(ModelError::InvalidSignals(format!("k = {k} exceeds n = {n}")));
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != n {
                return Err(ModelError::InvalidSignals(format!(
                    "vector {i} has length {} instead of {n}",
                    v.len()
                )));
            }
            let nnz = v.iter().filter(|e| **e != 0.0).count();
            if nnz > k {
                return Err(ModelError::InvalidSignals(format!(
                    "vector {i} has {nnz} nonzeros, more than k = {k}"
                )));
            }
            if let Some(eps) = epsilon {
                if eps <= 0.0 {
                    return Err(ModelError::InvalidSignals("epsilon must be positive".into()));
                }
                for (j, e) in v.iter().enumerate() {
                    let snapped = (e / eps).round() * eps;
                    if (e - snapped).abs() > ENTRY_TOL {
                        return Err(ModelError::InvalidSignals(format!(
                            "entry ({i},{j}) = {e} is not a multiple of epsilon = {eps}"
                        )));
                    }
                }
            }
        }
        for i in 0..l {
            for j in i + 1..l {
                if vectors[i] == vectors[j] {
                    return Err(ModelError::InvalidSignals(format!(
                        "vectors {i} and {j} are identical"
                    )));
                }
            }
        }
        Ok(SignalSet { n, k, l, vectors, epsilon })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    /// Smallest l2 norm over the hidden vectors, squared.
    pub fn min_norm_sq(&self) -> f64 {
        self.vectors
            .iter()
            .map(|v| v.iter().map(|e| e * e).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    /// Serialize to the plain-text exchange format: a literal header line
    /// `n k L epsilon`, one line of the four values (`-` for a missing
    /// epsilon), then one line of `n` entries per vector.
    pub fn to_text(&self) -> String {
        let mut out = String::from("n k L epsilon\n");
        let eps = match self.epsilon {
            Some(e) => format!("{e}"),
            None => "-".into(),
        };
        out.push_str(&format!("{} {} {} {}\n", self.n, self.k, self.l, eps));
        for v in &self.vectors {
            let row: Vec<String> = v.iter().map(|e| format!("{e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parse the format produced by [`SignalSet::to_text`].
    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| ModelError::Parse("empty input".into()))?;
        if header.trim() != "n k L epsilon" {
            return Err(ModelError::Parse(format!("unexpected header line: {header:?}")));
        }
        let meta = lines.next().ok_or_else(|| ModelError::Parse("missing size line".into()))?;
        let fields: Vec<&str> = meta.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(ModelError::Parse(format!("size line needs 4 fields, got {meta:?}")));
        }
        let n: usize = fields[0].parse().map_err(|_| ModelError::Parse("bad n".into()))?;
        let k: usize = fields[1].parse().map_err(|_| ModelError::Parse("bad k".into()))?;
        let l: usize = fields[2].parse().map_err(|_| ModelError::Parse("bad L".into()))?;
        let epsilon = if fields[3] == "-" {
            None
        } else {
            Some(fields[3].parse::<f64>().map_err(|_| ModelError::Parse("bad epsilon".into()))?)
        };
        let mut vectors = Vec::with_capacity(l);
        for _ in 0..l {
            let row = lines.next().ok_or_else(|| ModelError::Parse("missing vector row".into()))?;
            let entries: Result<Vec<f64>, _> =
                row.split_whitespace().map(|t| t.parse::<f64>()).collect();
            let entries = entries.map_err(|_| ModelError::Parse("bad vector entry".into()))?;
            vectors.push(entries);
        }
        if lines.next().is_some() {
            return Err(ModelError::Parse("trailing content after vector rows".into()));
        }
        SignalSet::new(n, k, vectors, epsilon)
    }
}

/// Draw a signal set with exactly `k` nonzeros per vector, supports uniform
/// over size-`k` subsets, and entries drawn as nonzero integer multiples of
/// `epsilon` no larger than `amp_max` in magnitude. Vectors are redrawn until
/// pairwise distinct, up to 1000 rejections.
pub fn generate_signal_set<R: Rng>(
    n: usize,
    k: usize,
    l: usize,
    epsilon: f64,
    amp_max: f64,
    rng: &mut R,
) -> Result<SignalSet, ModelError> {
    if n == 0 || k == 0 || l == 0 {
        return Err(ModelError::ImpossibleParams("n, k, L must be positive".into()));
    }
    if k > n {
        return Err(ModelError::ImpossibleParams(format!("k = {k} exceeds n = {n}")));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(ModelError::ImpossibleParams("epsilon must be positive".into()));
    }
    if amp_max + ENTRY_TOL < epsilon {
        return Err(ModelError::ImpossibleParams(
            "amp_max must be at least epsilon so a nonzero entry exists".into(),
        ));
    }
    let levels = ((amp_max / epsilon) + 1e-9).floor() as i64;
    // Distinct vectors available: C(n,k) supports times (2*levels)^k sign-magnitude choices.
    let supports = binomial(n as u64, k as u64);
    let mut total = supports;
    for _ in 0..k {
        total = total.saturating_mul(2 * levels as u128);
    }
    if total < l as u128 {
        return Err(ModelError::ImpossibleParams(format!(
            "only {total} distinct vectors exist, fewer than L = {l}"
        )));
    }

    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(l);
    let mut rejections = 0usize;
    while vectors.len() < l {
        let support = rand::seq::index::sample(rng, n, k).into_vec();
        let mut v = vec![0.0; n];
        for &idx in &support {
            let mag = rng.gen_range(1..=levels) as f64 * epsilon;
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            v[idx] = sign * mag;
        }
        if vectors.iter().any(|u| *u == v) {
            rejections += 1;
            if rejections > 1000 {
                return Err(ModelError::ImpossibleParams(
                    "rejection cap hit while drawing distinct vectors".into(),
                ));
            }
            continue;
        }
        vectors.push(v);
    }
    SignalSet::new(n, k, vectors, Some(epsilon))
}

/// Best k-term approximation: keep the `k` largest-magnitude entries (ties
/// broken toward the lowest index) and zero the rest.
pub fn best_k_approx(v: &[f64], k: usize) -> Vec<f64> {
    if k >= v.len() {
        return v.to_vec();
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| {
        v[b].abs().partial_cmp(&v[a].abs()).unwrap().then(a.cmp(&b))
    });
    let mut out = vec![0.0; v.len()];
    for &i in idx.iter().take(k) {
        out[i] = v[i];
    }
    out
}

/// Result of scoring a list of estimates against a hidden signal set.
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    /// Estimates as passed in, one per hidden vector.
    pub estimates: Vec<Vec<f64>>,
    /// `assignment[i]` is the estimate index matched to hidden vector `i`.
    pub assignment: Vec<usize>,
    /// l1 distance to the matched estimate divided by the l1 distance to the
    /// best k-term approximation; 0 when the estimate is exact, infinite when
    /// the hidden vector is exactly k-sparse but the estimate is not exact.
    pub per_signal_l1_ratio: Vec<f64>,
    /// Whether the matched estimate agrees entrywise within [`ENTRY_TOL`].
    pub exact: Vec<bool>,
    /// Oracle queries spent producing the estimates (filled by pipelines).
    pub queries_used: u64,
    /// Analytic signal-to-noise ratio of the issued designs (noisy pipelines).
    pub snr: Option<f64>,
}

impl RecoveryReport {
    pub fn all_exact(&self) -> bool {
        self.exact.iter().all(|e| *e)
    }

    /// Largest entrywise deviation over all matched pairs.
    pub fn max_abs_error(&self, truth: &SignalSet) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, v) in truth.vectors().iter().enumerate() {
            let est = &self.estimates[self.assignment[i]];
            for (a, b) in v.iter().zip(est.iter()) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }
}

fn l1_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
}

fn linf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn permutations(l: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..l).collect();
    heap_permute(l, &mut cur, &mut out);
    out
}

fn heap_permute(m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if m <= 1 {
        out.push(cur.clone());
        return;
    }
    for i in 0..m {
        heap_permute(m - 1, cur, out);
        if m % 2 == 0 {
            cur.swap(i, m - 1);
        } else {
            cur.swap(0, m - 1);
        }
    }
}

/// Match estimates to hidden vectors by the permutation minimizing total l1
/// distance, then score each pair. `estimates` must have exactly `L` entries
/// of length `n`.
pub fn match_and_score(truth: &SignalSet, estimates: &[Vec<f64>]) -> Result<RecoveryReport, ModelError> {
    let l = truth.l();
    if estimates.len() != l {
        return Err(ModelError::InvalidSignals(format!(
            "expected {l} estimates, got {}",
            estimates.len()
        )));
    }
    for (i, e) in estimates.iter().enumerate() {
        if e.len() != truth.n() {
            return Err(ModelError::InvalidSignals(format!(
                "estimate {i} has length {} instead of {}",
                e.len(),
                truth.n()
            )));
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(l) {
        let cost: f64 = truth
            .vectors()
            .iter()
            .enumerate()
            .map(|(i, v)| l1_dist(v, &estimates[perm[i]]))
            .sum();
        let better = match &best {
            None => true,
            Some((c, _)) => cost < *c,
        };
        if better {
            best = Some((cost, perm));
        }
    }
    let (_, assignment) = best.unwrap();

    let mut ratios = Vec::with_capacity(l);
    let mut exact = Vec::with_capacity(l);
    for (i, v) in truth.vectors().iter().enumerate() {
        let est = &estimates[assignment[i]];
        let is_exact = linf_dist(v, est) <= ENTRY_TOL;
        let num = l1_dist(v, est);
        let denom = l1_dist(v, &best_k_approx(v, truth.k()));
        let ratio = if denom == 0.0 {
            if is_exact {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            num / denom
        };
        ratios.push(ratio);
        exact.push(is_exact);
    }
    Ok(RecoveryReport {
        estimates: estimates.to_vec(),
        assignment,
        per_signal_l1_ratio: ratios,
        exact,
        queries_used: 0,
        snr: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn best_k_keeps_largest_with_low_index_ties() {
        assert_eq!(best_k_approx(&[2.0, -2.0, 0.0], 1), vec![2.0, 0.0, 0.0]);
        assert_eq!(best_k_approx(&[1.0, -3.0, 2.0], 2), vec![0.0, -3.0, 2.0]);
        assert_eq!(best_k_approx(&[1.0, 2.0], 5), vec![1.0, 2.0]);
    }

    #[test]
    fn best_k_is_idempotent_and_l1_optimal_small() {
        // Exhaustively verify on a grid of small vectors: no support of size k
        // gives a strictly smaller l1 residual than the chosen one.
        let vals = [-2.0, -1.0, 0.0, 1.5];
        for a in vals {
            for b in vals {
                for c in vals {
                    for d in vals {
                        let v = [a, b, c, d];
                        for k in 1..=3usize {
                            let approx = best_k_approx(&v, k);
                            let again = best_k_approx(&approx, k);
                            assert_eq!(approx, again);
                            let res: f64 =
                                v.iter().zip(&approx).map(|(x, y)| (x - y).abs()).sum();
                            for support in crate::combi::Subsets::new(4, k) {
                                let mut alt = [0.0; 4];
                                for &i in &support {
                                    alt[i] = v[i];
                                }
                                let alt_res: f64 =
                                    v.iter().zip(alt.iter()).map(|(x, y)| (x - y).abs()).sum();
                                assert!(res <= alt_res + 1e-12);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn generate_respects_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = generate_signal_set(20, 3, 3, 0.25, 2.0, &mut rng).unwrap();
        assert_eq!(s.n(), 20);
        assert_eq!(s.l(), 3);
        for v in s.vectors() {
            let nnz = v.iter().filter(|e| **e != 0.0).count();
            assert_eq!(nnz, 3);
            for e in v.iter().filter(|e| **e != 0.0) {
                let m = e / 0.25;
                assert!((m - m.round()).abs() < 1e-12);
                assert!(e.abs() <= 2.0 + 1e-12);
                assert!(e.abs() >= 0.25 - 1e-12);
            }
        }
    }

    #[test]
    fn generate_is_deterministic_per_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(123);
        let mut b = ChaCha8Rng::seed_from_u64(123);
        let s1 = generate_signal_set(16, 2, 4, 0.5, 2.0, &mut a).unwrap();
        let s2 = generate_signal_set(16, 2, 4, 0.5, 2.0, &mut b).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn generate_rejects_impossible_parameter_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // n = k = 1 with amp = epsilon leaves two possible vectors; L = 3 cannot work.
        let err = generate_signal_set(1, 1, 3, 1.0, 1.0, &mut rng).unwrap_err();
        assert!(matches!(err, ModelError::ImpossibleParams(_)));
        let err = generate_signal_set(4, 5, 1, 1.0, 1.0, &mut rng).unwrap_err();
        assert!(matches!(err, ModelError::ImpossibleParams(_)));
    }

    #[test]
    fn signal_set_rejects_duplicates_and_bad_grid() {
        let v = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        assert!(SignalSet::new(2, 1, v, Some(1.0)).is_err());
        let v = vec![vec![0.3, 0.0]];
        assert!(SignalSet::new(2, 1, v, Some(0.25)).is_err());
        let v = vec![vec![0.3, 0.1]];
        assert!(SignalSet::new(2, 1, v, None).is_err()); // two nonzeros, k = 1
    }

    #[test]
    fn text_roundtrip_preserves_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = generate_signal_set(12, 2, 3, 0.5, 1.5, &mut rng).unwrap();
        let text = s.to_text();
        let back = SignalSet::from_text(&text).unwrap();
        assert_eq!(s, back);
        // And without epsilon.
        let s2 = SignalSet::new(3, 2, vec![vec![0.1, 0.2, 0.0]], None).unwrap();
        let back2 = SignalSet::from_text(&s2.to_text()).unwrap();
        assert_eq!(s2, back2);
    }

    #[test]
    fn match_and_score_finds_the_right_permutation() {
        let truth = SignalSet::new(
            3,
            1,
            vec![vec![1.0, 0.0, 0.0], vec![0.0, -2.0, 0.0]],
            None,
        )
        .unwrap();
        // Estimates given in swapped order.
        let ests = vec![vec![0.0, -2.0, 0.0], vec![1.0, 0.0, 0.0]];
        let report = match_and_score(&truth, &ests).unwrap();
        assert_eq!(report.assignment, vec![1, 0]);
        assert!(report.all_exact());
        assert_eq!(report.per_signal_l1_ratio, vec![0.0, 0.0]);
    }

    #[test]
    fn ratio_semantics_for_sparse_truth() {
        // Validated truths are at most k-sparse, so the denominator (distance
        // to the best k-term approximation) is always zero and the ratio is
        // either 0 (exact) or infinite (any miss), never in between.
        let truth = SignalSet::new(2, 1, vec![vec![1.0, 0.0]], None).unwrap();
        let report = match_and_score(&truth, &[vec![1.0, 0.5]]).unwrap();
        assert!(report.per_signal_l1_ratio[0].is_infinite());
        assert!(!report.exact[0]);
        // Deviations within the entry tolerance still count as exact.
        let report2 = match_and_score(&truth, &[vec![1.0 + 1e-12, 0.0]]).unwrap();
        assert!(report2.exact[0]);
        assert_eq!(report2.per_signal_l1_ratio, vec![0.0]);
    }

    #[test]
    fn scoring_is_permutation_invariant_under_reordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let truth = generate_signal_set(8, 2, 3, 0.5, 2.0, &mut rng).unwrap();
        let mut ests: Vec<Vec<f64>> = truth.vectors().to_vec();
        ests.rotate_left(1);
        let report = match_and_score(&truth, &ests).unwrap();
        assert!(report.all_exact());
        assert_eq!(report.per_signal_l1_ratio, vec![0.0, 0.0, 0.0]);
    }
}
