//! Cross-batch alignment of per-component means, plus the scheme constants.
//!
//! Every response mean handled here is an exact integer: means of queries
//! built from sign vectors live on the grid `epsilon * Z` (index units), and
//! means of half-sum or half-difference queries live on `epsilon/2 * Z`
//! (half-pitch units). Working in indices makes every goodness check and
//! every join exact, with no float comparisons.
//!
//! The core question alignment answers: given unlabeled mean multisets from
//! several query batches, which value in batch A and which in batch B belong
//! to the same mixture component? Sum batches tie them together because the
//! component seen by a sum query is the same draw as in its constituents'
//! ideal responses, so the sum multiset must decompose over the operand
//! multisets by a perfect matching.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("invalid parameter: {0}")]
    BadParams(String),
    #[error("mean multisets do not form a good triplet")]
    NotGood,
    #[error("direction mean {y} is not divisible by q - 1 = {qm1}")]
    DivisibilityFailed { y: i64, qm1: i64 },
    #[error("candidate is not matching-good with respect to the reference")]
    NotMatchingGood,
    #[error("both pairings are consistent with the sum and difference means")]
    AmbiguousPairing,
    #[error("no pairing is consistent with the sum and difference means")]
    NoPairing,
}

/// Constants governing batch counts and the composite-query multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConstants {
    pub delta: f64,
    pub c_prime: u64,
    pub alpha_star: f64,
    pub z_star: u64,
}

/// Derive the scheme constants from the restricted-isometry budget `delta`.
///
/// `c_prime` is the least integer making the concentration margin
/// `delta^2/16 - delta^3/48 - 1/c'` positive. Without an override,
/// `alpha_star` is the root of `a*ln(a) - (a-1)*ln(a-1) = margin` in (1, 2],
/// which makes the oversampled candidate pool survive pruning; an override
/// trades query budget for a much smaller composite multiplier. `z_star` is
/// the least z >= 1 whose composite-query collision bound keeps the good-row
/// rate at `1/sqrt(alpha_star)`.
pub fn compute_constants(
    delta: f64,
    l: usize,
    alpha_override: Option<f64>,
) -> Result<AlignConstants, AlignError> {
    let delta_max = std::f64::consts::SQRT_2 - 1.0;
    if !(delta > 0.0 && delta < delta_max) {
        return Err(AlignError::BadParams(format!(
            "delta must lie strictly between 0 and sqrt(2)-1, got {delta}"
        )));
    }
    if l == 0 {
        return Err(AlignError::BadParams("L must be at least 1".into()));
    }
    let gap = delta * delta / 16.0 - delta * delta * delta / 48.0;
    // Least integer c' with gap - 1/c' > 0; gap < 1 so c' >= 2.
    let c_prime = (1.0 / gap).floor() as u64 + 1;
    let margin = gap - 1.0 / c_prime as f64;
    debug_assert!(margin > 0.0);

    let alpha_star = match alpha_override {
        Some(a) => {
            if !(a > 1.0) {
                return Err(AlignError::BadParams(format!(
                    "alpha override must exceed 1, got {a}"
                )));
            }
            a
        }
        None => {
            // f(a) = a*ln(a) - (a-1)*ln(a-1) increases from 0 on (1, 2], and
            // margin < f(2) = 2 ln 2 always, so bisection is safe.
            let f = |a: f64| {
                let u = a - 1.0;
                let left = a * a.ln();
                if u <= 0.0 {
                    left
                } else {
                    left - u * u.ln()
                }
            };
            let mut lo = 1.0f64;
            let mut hi = 2.0f64;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) < margin {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    };

    // Least z with L^3 * (3/(4z+1) - 1/(4z+1)^2) <= 1 - 1/sqrt(alpha_star).
    // Comparing the two deficits from 1 keeps precision when alpha_star is
    // barely above 1. The left side decreases in z, so binary search works.
    let budget = 1.0 - 1.0 / alpha_star.sqrt();
    if !(budget > 0.0) {
        return Err(AlignError::BadParams("alpha_star leaves no collision budget".into()));
    }
    let l3 = (l * l * l) as f64;
    let ok = |z: u64| {
        let w = (4 * z + 1) as f64;
        l3 * (3.0 / w - 1.0 / (w * w)) <= budget
    };
    let mut hi = 1u64;
    while !ok(hi) {
        hi = hi.checked_mul(2).ok_or_else(|| {
            AlignError::BadParams("no feasible z below u64 range".into())
        })?;
    }
    let mut lo = 0u64; // invariant: lo fails (z = 0 is never allowed), hi passes
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if mid >= 1 && ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(AlignConstants { delta, c_prime, alpha_star, z_star: hi })
}

pub fn all_distinct(values: &[i64]) -> bool {
    let mut v = values.to_vec();
    v.sort_unstable();
    v.windows(2).all(|w| w[0] != w[1])
}

/// A two-component mean pair can anchor alignment exactly when its values
/// differ: only then does the pairing of other batches become identifiable.
pub fn is_good_pair(means: &[i64]) -> bool {
    means.len() == 2 && means[0] != means[1]
}

/// Unique decomposition of `c` as `x + y` over `ma x mb`, if there is
/// exactly one by value. Returns the index pair into (ma, mb).
fn unique_decomposition(ma: &[i64], mb: &[i64], c: i64) -> Option<(usize, usize)> {
    let mut found: Option<(usize, usize)> = None;
    for (i, &x) in ma.iter().enumerate() {
        for (j, &y) in mb.iter().enumerate() {
            if x + y == c {
                if let Some((pi, pj)) = found {
                    // Same values at different indices are the same
                    // decomposition; distinct values make it ambiguous.
                    if ma[pi] != x || mb[pj] != y {
                        return None;
                    }
                } else {
                    found = Some((i, j));
                }
            }
        }
    }
    found
}

/// Whether `mc` is the componentwise sum of `ma` and `mb` for a unique
/// hidden component pairing: all three multisets have fully distinct values,
/// every value of `mc` splits as `x + y` over `ma x mb` in exactly one way,
/// and those splits use each value of `ma` and of `mb` exactly once.
pub fn is_good_triplet(ma: &[i64], mb: &[i64], mc: &[i64]) -> bool {
    let l = ma.len();
    if l == 0 || mb.len() != l || mc.len() != l {
        return false;
    }
    if !(all_distinct(ma) && all_distinct(mb) && all_distinct(mc)) {
        return false;
    }
    let mut used_a = vec![false; l];
    let mut used_b = vec![false; l];
    for &c in mc {
        match unique_decomposition(ma, mb, c) {
            Some((i, j)) => {
                if used_a[i] || used_b[j] {
                    return false;
                }
                used_a[i] = true;
                used_b[j] = true;
            }
            None => return false,
        }
    }
    true
}

/// Estimated mean multisets (index units) for one row's three batches:
/// queries `v + r`, `(q-1) r`, and `v + q r` for a base direction `v`, an
/// auxiliary direction `r`, and the row's composite multiplier `q`.
#[derive(Debug, Clone)]
pub struct TripletRecord {
    pub q: u64,
    pub means_vr: Vec<i64>,
    pub means_qm1r: Vec<i64>,
    pub means_vqr: Vec<i64>,
}

impl TripletRecord {
    /// The identity `<v + q r> = <v + r> + <(q-1) r>` holds per component,
    /// so a row is usable exactly when its three multisets form a good
    /// triplet.
    pub fn is_good(&self) -> bool {
        is_good_triplet(&self.means_vr, &self.means_qm1r, &self.means_vqr)
    }
}

/// One mixture component as seen by a row: its auxiliary-direction mean and
/// its base-direction mean, both in index units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub r_mean: i64,
    pub base_mean: i64,
}

/// Split a good triplet into per-component `(r, v)` means.
///
/// Each value `c` of the `v + q r` multiset decomposes uniquely as
/// `x + y` with `x` from `v + r` and `y` from `(q-1) r`; then the component's
/// auxiliary mean is `y / (q-1)` (which must divide exactly, or the
/// estimates were wrong) and its base mean is `x - y/(q-1)`. Components come
/// back ordered by ascending `v + q r` value.
pub fn derive_base_means(rec: &TripletRecord) -> Result<Vec<Component>, AlignError> {
    if rec.q < 2 {
        return Err(AlignError::BadParams(format!("q must be at least 2, got {}", rec.q)));
    }
    if !rec.is_good() {
        return Err(AlignError::NotGood);
    }
    let qm1 = (rec.q - 1) as i64;
    let mut cs = rec.means_vqr.clone();
    cs.sort_unstable();
    let mut out = Vec::with_capacity(cs.len());
    for &c in &cs {
        let (i, j) = unique_decomposition(&rec.means_vr, &rec.means_qm1r, c)
            .expect("good triplet decomposes");
        let x = rec.means_vr[i];
        let y = rec.means_qm1r[j];
        if y % qm1 != 0 {
            return Err(AlignError::DivisibilityFailed { y, qm1 });
        }
        let r_mean = y / qm1;
        out.push(Component { r_mean, base_mean: x - r_mean });
    }
    Ok(out)
}

/// Attach reference labels to a candidate row's components.
///
/// Both rows are split into per-component `(r, v)` means; `mr_sum` holds the
/// means of the cross batch `r_cand + r_ref`. The cross multiset must form a
/// good triplet with the two auxiliary-mean multisets; its matching then
/// joins each candidate component (keyed by its `r` mean) to the reference
/// mean of the same hidden component. Returns
/// `(reference r mean, candidate base mean)` pairs sorted by the reference
/// mean, so ranking by reference mean keys components consistently across
/// candidates.
pub fn label_with_reference(
    reference: &TripletRecord,
    cand: &TripletRecord,
    mr_sum: &[i64],
) -> Result<Vec<(i64, i64)>, AlignError> {
    let ref_comps = derive_base_means(reference)?;
    let means_r_star: Vec<i64> = ref_comps.iter().map(|c| c.r_mean).collect();
    let comps = derive_base_means(cand)?;
    let means_r_cand: Vec<i64> = comps.iter().map(|c| c.r_mean).collect();
    if !is_good_triplet(&means_r_cand, &means_r_star, mr_sum) {
        return Err(AlignError::NotMatchingGood);
    }
    let mut out = Vec::with_capacity(comps.len());
    for &s in mr_sum {
        let (i, j) = unique_decomposition(&means_r_cand, &means_r_star, s)
            .expect("good triplet decomposes");
        out.push((means_r_star[j], comps[i].base_mean));
    }
    out.sort_unstable();
    Ok(out)
}

/// Match the two components of a candidate mean pair against a reference
/// mean pair using sum and difference batches.
///
/// `ma` are the reference means (index units, distinct), `mb` the candidate
/// means, and `msum`/`mdiff` the means of the half-sum and half-difference
/// batches in half-pitch units, where component consistency demands
/// `a + b` in `msum` and `a - b` in `mdiff` for each matched pair. Returns
/// the matched `(reference, candidate)` pairs in reference order.
pub fn align_pair(
    ma: &[i64],
    mb: &[i64],
    msum: &[i64],
    mdiff: &[i64],
) -> Result<[(i64, i64); 2], AlignError> {
    if ma.len() != 2 || mb.len() != 2 {
        return Err(AlignError::BadParams("pair alignment needs exactly two means".into()));
    }
    if ma[0] == ma[1] {
        return Err(AlignError::BadParams("reference means must be distinct".into()));
    }
    let passes = |pairs: &[(i64, i64); 2]| {
        pairs.iter().all(|&(a, b)| msum.contains(&(a + b)) && mdiff.contains(&(a - b)))
    };
    let p1 = [(ma[0], mb[0]), (ma[1], mb[1])];
    let p2 = [(ma[0], mb[1]), (ma[1], mb[0])];
    match (passes(&p1), passes(&p2)) {
        (true, true) => {
            if mb[0] == mb[1] {
                Ok(p1)
            } else {
                Err(AlignError::AmbiguousPairing)
            }
        }
        (true, false) => Ok(p1),
        (false, true) => Ok(p2),
        (false, false) => Err(AlignError::NoPairing),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constants_for_default_delta() {
        let c = compute_constants(0.4, 3, None).unwrap();
        assert_eq!(c.c_prime, 116);
        assert!(c.alpha_star > 1.0 && c.alpha_star < 1.001);
        // The bisection target is the concentration margin.
        let margin = 0.4f64.powi(2) / 16.0 - 0.4f64.powi(3) / 48.0 - 1.0 / 116.0;
        let f = c.alpha_star * c.alpha_star.ln()
            - (c.alpha_star - 1.0) * (c.alpha_star - 1.0).ln();
        assert!((f - margin).abs() < 1e-12, "root residual {}", f - margin);
    }

    #[test]
    fn constants_with_alpha_override() {
        let c3 = compute_constants(0.4, 3, Some(4.0)).unwrap();
        assert_eq!(c3.alpha_star, 4.0);
        assert_eq!(c3.z_star, 41);
        let c2 = compute_constants(0.4, 2, Some(4.0)).unwrap();
        assert_eq!(c2.z_star, 12);
    }

    #[test]
    fn z_star_is_minimal() {
        for (l, alpha) in [(2usize, 4.0f64), (3, 4.0), (3, 2.0), (4, 9.0)] {
            let c = compute_constants(0.4, l, Some(alpha)).unwrap();
            let budget = 1.0 - 1.0 / alpha.sqrt();
            let deficit = |z: u64| {
                let w = (4 * z + 1) as f64;
                (l * l * l) as f64 * (3.0 / w - 1.0 / (w * w))
            };
            assert!(deficit(c.z_star) <= budget);
            if c.z_star > 1 {
                assert!(deficit(c.z_star - 1) > budget);
            }
        }
    }

    #[test]
    fn delta_domain_is_open() {
        assert!(compute_constants(0.0, 2, None).is_err());
        assert!(compute_constants(std::f64::consts::SQRT_2 - 1.0, 2, None).is_err());
        assert!(compute_constants(0.42, 2, None).is_err());
        assert!(compute_constants(0.1, 2, None).is_ok());
    }

    #[test]
    fn smaller_delta_needs_larger_c_prime() {
        let loose = compute_constants(0.4, 2, None).unwrap();
        let tight = compute_constants(0.2, 2, None).unwrap();
        assert!(tight.c_prime > loose.c_prime);
    }

    #[test]
    fn good_triplet_examples() {
        assert!(is_good_triplet(&[1, 2], &[0, 10], &[1, 12]));
        // 11 = 1 + 10 and 12 = 2 + 10 reuse the same right value.
        assert!(!is_good_triplet(&[1, 2], &[0, 10], &[11, 12]));
        // Ambiguous split: 1 = 0 + 1 = 1 + 0.
        assert!(!is_good_triplet(&[0, 1], &[0, 1], &[1, 3]));
        assert!(is_good_triplet(&[0, 1], &[0, 1], &[0, 2]));
        // Repeated values disqualify a multiset outright.
        assert!(!is_good_triplet(&[1, 1], &[0, 10], &[1, 11]));
        assert!(!is_good_triplet(&[1, 2], &[0, 10], &[1, 12, 3]));
        assert!(is_good_triplet(&[7], &[-2], &[5]));
    }

    #[test]
    fn goodness_matches_the_component_indexed_definition() {
        // Oracle: with per-component values a_i, b_i and c_i = a_i + b_i,
        // goodness means a_i + b_j != c_k for every index triple that is not
        // (i, i, i). The multiset test must agree on every instance.
        let mut rng = rand::rngs::StdRng::seed_from_u64(424242);
        let mut seen_good = 0;
        let mut seen_bad = 0;
        for _ in 0..4000 {
            let l = rng.gen_range(1..=3usize);
            let a: Vec<i64> = (0..l).map(|_| rng.gen_range(-4..=4)).collect();
            let b: Vec<i64> = (0..l).map(|_| rng.gen_range(-4..=4)).collect();
            let c: Vec<i64> = (0..l).map(|i| a[i] + b[i]).collect();
            let mut indexed_good = true;
            'outer: for i in 0..l {
                for j in 0..l {
                    for k in 0..l {
                        if (i == j && j == k) || a[i] + b[j] != c[k] {
                            continue;
                        }
                        indexed_good = false;
                        break 'outer;
                    }
                }
            }
            if indexed_good {
                seen_good += 1;
            } else {
                seen_bad += 1;
            }
            assert_eq!(is_good_triplet(&a, &b, &c), indexed_good, "a={a:?} b={b:?} c={c:?}");
        }
        assert!(seen_good > 100 && seen_bad > 100, "oracle exercised both outcomes");
    }

    #[test]
    fn good_pair_requires_two_distinct_means() {
        assert!(is_good_pair(&[3, -1]));
        assert!(!is_good_pair(&[0, 0]));
        assert!(!is_good_pair(&[1, 1]));
        assert!(!is_good_pair(&[1]));
        assert!(!is_good_pair(&[1, 2, 3]));
    }

    #[test]
    fn derive_base_means_recovers_truth() {
        // Components: (v, r) = (3, 2) and (-1, 5) with q = 3.
        let rec = TripletRecord {
            q: 3,
            means_vr: vec![4, 5],
            means_qm1r: vec![4, 10],
            means_vqr: vec![9, 14],
        };
        let comps = derive_base_means(&rec).unwrap();
        assert_eq!(
            comps,
            vec![
                Component { r_mean: 2, base_mean: 3 },
                Component { r_mean: 5, base_mean: -1 }
            ]
        );
    }

    #[test]
    fn derive_base_means_single_component() {
        // <v, b> = 1, <r, b> = 2, q = 3: x = 3, y = 4, base = 3 - 4/2 = 1.
        let rec = TripletRecord {
            q: 3,
            means_vr: vec![3],
            means_qm1r: vec![4],
            means_vqr: vec![7],
        };
        let comps = derive_base_means(&rec).unwrap();
        assert_eq!(comps, vec![Component { r_mean: 2, base_mean: 1 }]);
    }

    #[test]
    fn derive_base_means_rejects_bad_rows() {
        let not_good = TripletRecord {
            q: 3,
            means_vr: vec![1, 2],
            means_qm1r: vec![0, 10],
            means_vqr: vec![11, 12],
        };
        assert!(matches!(derive_base_means(&not_good), Err(AlignError::NotGood)));
        // 9 = 4 + 5 forces y = 5, not divisible by q - 1 = 2.
        let indivisible = TripletRecord {
            q: 3,
            means_vr: vec![0, 4],
            means_qm1r: vec![5, 20],
            means_vqr: vec![9, 20],
        };
        assert!(matches!(
            derive_base_means(&indivisible),
            Err(AlignError::DivisibilityFailed { y: 5, qm1: 2 })
        ));
    }

    /// Reference row with auxiliary means {1, 7}, base means {0, 5}, q = 2.
    fn reference_fixture() -> TripletRecord {
        TripletRecord {
            q: 2,
            means_vr: vec![1, 12],
            means_qm1r: vec![1, 7],
            means_vqr: vec![2, 19],
        }
    }

    #[test]
    fn labeling_joins_on_the_shared_component() {
        // Truth: component A has r* = 1, r' = 2, base 3; component B has
        // r* = 7, r' = 5, base -1. Candidate row uses q = 3.
        let cand = TripletRecord {
            q: 3,
            means_vr: vec![4, 5],
            means_qm1r: vec![4, 10],
            means_vqr: vec![9, 14],
        };
        let labeled = label_with_reference(&reference_fixture(), &cand, &[3, 12]).unwrap();
        assert_eq!(labeled, vec![(1, 3), (7, -1)]);
    }

    #[test]
    fn labeling_rejects_inconsistent_cross_batch() {
        let cand = TripletRecord {
            q: 3,
            means_vr: vec![4, 5],
            means_qm1r: vec![4, 10],
            means_vqr: vec![9, 14],
        };
        // Cross means that no matching explains.
        let err = label_with_reference(&reference_fixture(), &cand, &[4, 11]).unwrap_err();
        assert!(matches!(err, AlignError::NotMatchingGood));
    }

    #[test]
    fn pair_alignment_picks_the_consistent_matching() {
        // Truth: 5 pairs with 4, -3 pairs with 1.
        let got = align_pair(&[5, -3], &[1, 4], &[9, -2], &[1, -4]).unwrap();
        assert_eq!(got, [(5, 4), (-3, 1)]);
        // Identity pairing consistent.
        let got = align_pair(&[5, -3], &[1, 4], &[6, 1], &[4, -7]).unwrap();
        assert_eq!(got, [(5, 1), (-3, 4)]);
        // Reference {3, -1} against {2, 4}: half-sum means {2.5, 1.5} and
        // half-difference means {0.5, -2.5} become indices {5, 3} and
        // {1, -5} on the half-pitch grid.
        let got = align_pair(&[3, -1], &[2, 4], &[5, 3], &[1, -5]).unwrap();
        assert_eq!(got, [(3, 2), (-1, 4)]);
    }

    #[test]
    fn pair_alignment_handles_degenerate_candidate() {
        let got = align_pair(&[5, -3], &[2, 2], &[7, -1], &[3, -5]).unwrap();
        assert_eq!(got, [(5, 2), (-3, 2)]);
    }

    #[test]
    fn pair_alignment_error_cases() {
        assert!(matches!(
            align_pair(&[0, 1], &[0, 1], &[10], &[10]),
            Err(AlignError::NoPairing)
        ));
        // A three-value sum multiset can make both pairings pass; with two
        // honest values it cannot, so this only exercises the defense.
        assert!(matches!(
            align_pair(&[0, 2], &[0, 2], &[0, 2, 4], &[-2, 0, 2]),
            Err(AlignError::AmbiguousPairing)
        ));
        assert!(align_pair(&[1, 1], &[0, 2], &[1, 3], &[1, -1]).is_err());
    }
}
