//! End-to-end noisy recovery: query scheduling, batch denoising, alignment,
//! aggregation, and basis-pursuit decoding.
//!
//! Both pipelines are non-adaptive: every query vector is drawn before any
//! response is inspected. Batches of noisy responses are denoised into grid
//! index multisets (exact integers), alignment transfers component labels
//! across batches in integer arithmetic, and each per-component linear
//! system is decoded by basis pursuit on the ±1 base vectors.
//!
//! The two-component pipeline pairs every base vector against a good
//! reference via half-sum and half-difference batches, which live on the
//! half-pitch grid. The general pipeline attaches an auxiliary direction
//! and a composite multiplier to every row; triplet goodness and cross
//! batches against a reference row transfer labels instead.

use rand::Rng;

use crate::align::{
    align_pair, compute_constants, derive_base_means, is_good_pair, label_with_reference,
    AlignConstants, AlignError, TripletRecord,
};
use crate::cs::{CsError, SensingSystem};
use crate::gridgmm::{
    lloyd_snap, make_window, min_distance_estimate, GmmError,
};
use crate::model::{match_and_score, ModelError, RecoveryReport, SignalSet};
use crate::oracle::{analytic_snr, Oracle, OracleError, QueryDesign};

/// Equality-constrained decode tolerance: responses are denoised exactly, so
/// the ball radius only absorbs solver arithmetic.
const DECODE_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid parameter: {0}")]
    BadParams(String),
    #[error("no good reference among the candidates")]
    NoGoodReference,
    #[error("only {got} matching-good rows, need {want}")]
    InsufficientMatchingGood { got: usize, want: usize },
    #[error(transparent)]
    Denoise(#[from] GmmError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Decode(#[from] CsError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which batch-denoising estimator a pipeline uses. Enumeration is exact but
/// only feasible for narrow windows; the general pipeline's composite
/// queries spread means over windows far past the enumeration cap, so it
/// defaults to the snapped Lloyd iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    MinDistance,
    LloydSnap,
}

/// Inputs of one noisy recovery run.
#[derive(Debug, Clone)]
pub struct NoisyRunConfig {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub sigma: f64,
    pub epsilon: f64,
    /// Sensing row-count constant: m = ceil(c_s * k * ln(n/k)) rows.
    pub c_s: f64,
    /// Batch-size constant in the denoising batch formula.
    pub c2: f64,
    /// Restricted-isometry budget handed to the alignment constants.
    pub delta: f64,
    /// Direct choice of the oversampling ratio; None solves the margin
    /// equation instead, which lands barely above 1 and demands an
    /// impractically large composite multiplier.
    pub alpha_override: Option<f64>,
    pub estimator: Estimator,
}

impl NoisyRunConfig {
    pub fn new(n: usize, k: usize, l: usize, sigma: f64, epsilon: f64) -> Self {
        NoisyRunConfig {
            n,
            k,
            l,
            sigma,
            epsilon,
            c_s: 6.0,
            c2: 24.0,
            delta: 0.4,
            alpha_override: Some(4.0),
            estimator: if l == 2 { Estimator::MinDistance } else { Estimator::LloydSnap },
        }
    }

    fn validate(&self, oracle: &Oracle) -> Result<(), PipelineError> {
        let s = oracle.signals();
        if s.n() != self.n || s.l() != self.l || s.k() != self.k {
            return Err(PipelineError::BadParams(format!(
                "config ({}, {}, {}) does not match the oracle's signals ({}, {}, {})",
                self.n,
                self.k,
                self.l,
                s.n(),
                s.k(),
                s.l()
            )));
        }
        if self.k == 0 || self.n <= self.k {
            return Err(PipelineError::BadParams("need n > k >= 1".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(PipelineError::BadParams("noisy pipelines need sigma > 0".into()));
        }
        if (oracle.sigma() - self.sigma).abs() > 0.0 {
            return Err(PipelineError::BadParams("config sigma differs from oracle sigma".into()));
        }
        match s.epsilon() {
            Some(e) if (e - self.epsilon).abs() <= 1e-12 => {}
            _ => {
                return Err(PipelineError::BadParams(
                    "signals must carry the same grid pitch as the config".into(),
                ))
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(PipelineError::BadParams("epsilon must be positive".into()));
        }
        if !(self.c_s >= 1.0) || !(self.c2 >= 1.0) {
            return Err(PipelineError::BadParams("c_s and c2 must be at least 1".into()));
        }
        Ok(())
    }
}

/// Batch counts for the two-component pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct L2Schedule {
    /// Base ±1 vectors, m = ceil(c_s * k * ln(n/k)).
    pub m: usize,
    /// Reference candidates: the first ceil(ln n) base vectors.
    pub r: usize,
    /// Batch size T = ceil(c2 * ln(n) * exp((sigma/epsilon)^(2/3))).
    pub t: usize,
}

pub fn l2_schedule(cfg: &NoisyRunConfig) -> Result<L2Schedule, PipelineError> {
    if cfg.n <= cfg.k || cfg.k == 0 {
        return Err(PipelineError::BadParams("need n > k >= 1".into()));
    }
    let n = cfg.n as f64;
    let m = (cfg.c_s * cfg.k as f64 * (n / cfg.k as f64).ln()).ceil() as usize;
    let r = (n.ln().ceil() as usize).min(m).max(1);
    let t = (cfg.c2 * n.ln() * ((cfg.sigma / cfg.epsilon).powf(2.0 / 3.0)).exp()).ceil() as usize;
    Ok(L2Schedule { m, r, t: t.max(1) })
}

/// Exact oracle query total for the two-component pipeline: one batch per
/// base vector plus sum and difference batches for every
/// (reference candidate, other base vector) pair.
pub fn l2_query_total(s: &L2Schedule) -> u64 {
    (s.m as u64 + 2 * s.r as u64 * (s.m as u64 - 1)) * s.t as u64
}

/// Batch counts for the general pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralSchedule {
    /// Reference triplets: ceil(sqrt(alpha*) * ln n).
    pub r_refs: usize,
    /// Candidate triplets: ceil(c' * alpha* * k * ln(n/k)).
    pub m_cands: usize,
    /// Matching-good rows kept for decoding: ceil(c' * k * ln(n/k)).
    pub m_keep: usize,
    /// Batch size T = ceil(c2 * L^2 * ln(n) * exp((sigma/epsilon)^(2/3))).
    pub t: usize,
    pub constants: AlignConstants,
}

pub fn general_schedule(cfg: &NoisyRunConfig) -> Result<GeneralSchedule, PipelineError> {
    if cfg.n <= cfg.k || cfg.k == 0 {
        return Err(PipelineError::BadParams("need n > k >= 1".into()));
    }
    let constants = compute_constants(cfg.delta, cfg.l, cfg.alpha_override)?;
    let n = cfg.n as f64;
    let lnnk = (n / cfg.k as f64).ln();
    let r_refs = (constants.alpha_star.sqrt() * n.ln()).ceil() as usize;
    let m_cands =
        (constants.c_prime as f64 * constants.alpha_star * cfg.k as f64 * lnnk).ceil() as usize;
    let m_keep = (constants.c_prime as f64 * cfg.k as f64 * lnnk).ceil() as usize;
    let t = crate::gridgmm::required_batch_size(cfg.sigma, cfg.epsilon, cfg.l, n, cfg.c2)?;
    Ok(GeneralSchedule { r_refs: r_refs.max(1), m_cands, m_keep, t, constants })
}

/// Exact oracle query total for one attempt of the general pipeline: three
/// batches per triplet plus one cross batch per (reference, candidate) pair.
pub fn general_query_total(s: &GeneralSchedule) -> u64 {
    (3 * (s.r_refs as u64 + s.m_cands as u64) + s.r_refs as u64 * s.m_cands as u64) * s.t as u64
}

/// A finished noisy run, with enough structure kept for white-box audits.
#[derive(Debug)]
pub struct NoisyOutcome {
    pub report: RecoveryReport,
    /// Batch size every mean estimate was computed from.
    pub batch_size: usize,
    /// The ±1 base vectors whose responses were aggregated, in row order.
    pub rows: Vec<Vec<f64>>,
    /// Per recovered component: (row index, denoised mean as a grid index).
    pub clusters: Vec<Vec<(usize, i64)>>,
    /// Position of the chosen reference within the reference block.
    pub reference: usize,
}

/// Whether every cluster's denoised means agree with a single hidden
/// component of `signals` across all of its rows. This is the white-box
/// purity audit: it reads the ground truth, so it is diagnostic only.
pub fn clusters_are_pure(outcome: &NoisyOutcome, signals: &SignalSet, epsilon: f64) -> bool {
    outcome.clusters.iter().all(|cluster| {
        signals.vectors().iter().any(|beta| {
            cluster.iter().all(|&(row, idx)| {
                let truth: f64 =
                    outcome.rows[row].iter().zip(beta).map(|(x, b)| x * b).sum();
                (truth - idx as f64 * epsilon).abs() < 1e-6
            })
        })
    })
}

fn draw_pm1<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect()
}

fn denoise<R: Rng>(
    samples: &[f64],
    l: usize,
    sigma: f64,
    pitch: f64,
    estimator: Estimator,
    rng: &mut R,
) -> Result<Vec<i64>, PipelineError> {
    let means = match estimator {
        Estimator::MinDistance => {
            let window = make_window(samples, sigma, pitch)?;
            min_distance_estimate(samples, l, sigma, pitch, &window)?
        }
        Estimator::LloydSnap => lloyd_snap(samples, l, sigma, pitch, rng)?,
    };
    Ok(means.mean_idx().to_vec())
}

/// Recover both components of a two-vector mixture.
///
/// Draws m base vectors, denoises one batch per vector, issues half-sum and
/// half-difference batches against every reference candidate, picks the
/// first candidate with two distinct means, aligns every other row's mean
/// pair against it, and decodes the two aggregated systems.
pub fn recover_noisy_l2<R: Rng>(
    oracle: &mut Oracle,
    cfg: &NoisyRunConfig,
    rng: &mut R,
) -> Result<NoisyOutcome, PipelineError> {
    if cfg.l != 2 {
        return Err(PipelineError::BadParams("this pipeline handles exactly two components".into()));
    }
    cfg.validate(oracle)?;
    let sched = l2_schedule(cfg)?;
    let (m, r, t) = (sched.m, sched.r, sched.t);
    let start = oracle.query_count();

    let rows: Vec<Vec<f64>> = (0..m).map(|_| draw_pm1(cfg.n, rng)).collect();

    oracle.mark_design("pm1");
    let mut base_means = Vec::with_capacity(m);
    for row in &rows {
        let batch = oracle.query_batch(row, t)?;
        base_means.push(denoise(&batch, 2, cfg.sigma, cfg.epsilon, cfg.estimator, rng)?);
    }

    // Sum and difference batches live on the half-pitch grid; their means in
    // half-pitch units are exactly the sums/differences of the base indices.
    let half = cfg.epsilon / 2.0;
    let mut sums: Vec<Vec<Option<(Vec<i64>, Vec<i64>)>>> = vec![vec![None; m]; r];
    for j in 0..r {
        for i in 0..m {
            if i == j {
                continue;
            }
            let sum_vec: Vec<f64> =
                rows[j].iter().zip(&rows[i]).map(|(a, b)| (a + b) / 2.0).collect();
            let diff_vec: Vec<f64> =
                rows[j].iter().zip(&rows[i]).map(|(a, b)| (a - b) / 2.0).collect();
            oracle.mark_design("half-sum");
            let sbatch = oracle.query_batch(&sum_vec, t)?;
            let msum = denoise(&sbatch, 2, cfg.sigma, half, cfg.estimator, rng)?;
            oracle.mark_design("half-diff");
            let dbatch = oracle.query_batch(&diff_vec, t)?;
            let mdiff = denoise(&dbatch, 2, cfg.sigma, half, cfg.estimator, rng)?;
            sums[j][i] = Some((msum, mdiff));
        }
    }
    debug_assert_eq!(oracle.query_count() - start, l2_query_total(&sched));

    let reference = (0..r)
        .find(|&j| is_good_pair(&base_means[j]))
        .ok_or(PipelineError::NoGoodReference)?;
    let anchor = base_means[reference].clone();

    let mut clusters: Vec<Vec<(usize, i64)>> = vec![
        vec![(reference, anchor[0])],
        vec![(reference, anchor[1])],
    ];
    for i in 0..m {
        if i == reference {
            continue;
        }
        let (msum, mdiff) = sums[reference][i].as_ref().expect("cross batch populated");
        let pairs = align_pair(&anchor, &base_means[i], msum, mdiff)?;
        clusters[0].push((i, pairs[0].1));
        clusters[1].push((i, pairs[1].1));
    }

    let outcome = decode_clusters(oracle, cfg, rows, clusters, reference, t, start)?;
    Ok(outcome)
}

/// Recover all components of a general mixture.
///
/// Every row is a triplet (v, r, q): base vector, auxiliary grid direction,
/// and composite multiplier, measured through batches for v+r, (q-1)r, and
/// v+qr, plus cross batches pairing each reference row's direction with each
/// candidate's. The first reference whose triplet splits cleanly anchors the
/// labels; matching-good candidates are kept until the decoder has enough
/// rows. One full redraw is attempted when too few candidates survive.
pub fn recover_noisy_general<R: Rng>(
    oracle: &mut Oracle,
    cfg: &NoisyRunConfig,
    rng: &mut R,
) -> Result<NoisyOutcome, PipelineError> {
    if cfg.l < 2 {
        return Err(PipelineError::BadParams("need at least two components".into()));
    }
    cfg.validate(oracle)?;
    let sched = general_schedule(cfg)?;
    match general_attempt(oracle, cfg, &sched, rng) {
        Err(PipelineError::InsufficientMatchingGood { .. }) => {
            general_attempt(oracle, cfg, &sched, rng)
        }
        other => other,
    }
}

struct Triplet {
    v: Vec<f64>,
    r: Vec<f64>,
    q: u64,
}

fn general_attempt<R: Rng>(
    oracle: &mut Oracle,
    cfg: &NoisyRunConfig,
    sched: &GeneralSchedule,
    rng: &mut R,
) -> Result<NoisyOutcome, PipelineError> {
    let l = cfg.l;
    let z = sched.constants.z_star as i64;
    let start = oracle.query_count();

    let total = sched.r_refs + sched.m_cands;
    let triplets: Vec<Triplet> = (0..total)
        .map(|_| Triplet {
            v: draw_pm1(cfg.n, rng),
            // Auxiliary directions range over {-2z*,...,2z*}; q skips 1 so
            // the direction batch (q-1)r is never the zero vector.
            r: (0..cfg.n).map(|_| rng.gen_range(-2 * z..=2 * z) as f64).collect(),
            q: rng.gen_range(2..=4 * sched.constants.z_star + 1),
        })
        .collect();

    let mut records = Vec::with_capacity(total);
    for tr in &triplets {
        let q = tr.q as f64;
        let vr: Vec<f64> = tr.v.iter().zip(&tr.r).map(|(a, b)| a + b).collect();
        let qm1r: Vec<f64> = tr.r.iter().map(|b| (q - 1.0) * b).collect();
        let vqr: Vec<f64> = tr.v.iter().zip(&tr.r).map(|(a, b)| a + q * b).collect();
        oracle.mark_design("base-plus-direction");
        let b1 = oracle.query_batch(&vr, sched.t)?;
        let means_vr = denoise(&b1, l, cfg.sigma, cfg.epsilon, cfg.estimator, rng)?;
        oracle.mark_design("scaled-direction");
        let b2 = oracle.query_batch(&qm1r, sched.t)?;
        let means_qm1r = denoise(&b2, l, cfg.sigma, cfg.epsilon, cfg.estimator, rng)?;
        oracle.mark_design("composite");
        let b3 = oracle.query_batch(&vqr, sched.t)?;
        let means_vqr = denoise(&b3, l, cfg.sigma, cfg.epsilon, cfg.estimator, rng)?;
        records.push(TripletRecord { q: tr.q, means_vr, means_qm1r, means_vqr });
    }

    oracle.mark_design("direction-cross");
    let mut cross: Vec<Vec<Vec<i64>>> = Vec::with_capacity(sched.r_refs);
    for jr in 0..sched.r_refs {
        let mut row = Vec::with_capacity(sched.m_cands);
        for jc in 0..sched.m_cands {
            let cand = &triplets[sched.r_refs + jc];
            let qvec: Vec<f64> =
                triplets[jr].r.iter().zip(&cand.r).map(|(a, b)| a + b).collect();
            let batch = oracle.query_batch(&qvec, sched.t)?;
            row.push(denoise(&batch, l, cfg.sigma, cfg.epsilon, cfg.estimator, rng)?);
        }
        cross.push(row);
    }
    debug_assert_eq!(oracle.query_count() - start, general_query_total(sched));

    // A usable reference must split into per-component (r, v) means, which
    // also requires the divisibility of its direction means.
    let reference = (0..sched.r_refs)
        .find(|&jr| derive_base_means(&records[jr]).is_ok())
        .ok_or(PipelineError::NoGoodReference)?;

    let mut rows = Vec::with_capacity(sched.m_keep);
    let mut clusters: Vec<Vec<(usize, i64)>> = vec![Vec::new(); l];
    for jc in 0..sched.m_cands {
        if rows.len() == sched.m_keep {
            break;
        }
        let rec = &records[sched.r_refs + jc];
        let Ok(labeled) = label_with_reference(&records[reference], rec, &cross[reference][jc])
        else {
            continue;
        };
        let row_idx = rows.len();
        rows.push(triplets[sched.r_refs + jc].v.clone());
        for (cluster, (_, base)) in labeled.into_iter().enumerate() {
            clusters[cluster].push((row_idx, base));
        }
    }
    if rows.len() < sched.m_keep {
        return Err(PipelineError::InsufficientMatchingGood {
            got: rows.len(),
            want: sched.m_keep,
        });
    }

    decode_clusters(oracle, cfg, rows, clusters, reference, sched.t, start)
}

fn decode_clusters(
    oracle: &Oracle,
    cfg: &NoisyRunConfig,
    rows: Vec<Vec<f64>>,
    clusters: Vec<Vec<(usize, i64)>>,
    reference: usize,
    batch_size: usize,
    start_queries: u64,
) -> Result<NoisyOutcome, PipelineError> {
    let m = rows.len();
    let scale = 1.0 / (m as f64).sqrt();
    let system = SensingSystem::from_rows(&rows)?;
    let mut estimates = Vec::with_capacity(clusters.len());
    for cluster in &clusters {
        let mut y = vec![0.0; m];
        for &(row, idx) in cluster {
            y[row] = idx as f64 * cfg.epsilon * scale;
        }
        let sol = system.basis_pursuit(&y, DECODE_TOL)?;
        estimates.push(sol.beta);
    }

    let mut report = match_and_score(oracle.signals(), &estimates)?;
    report.queries_used = oracle.query_count() - start_queries;
    let design = if cfg.l == 2 {
        QueryDesign::Pm1
    } else {
        let z = general_schedule(cfg)?.constants.z_star;
        QueryDesign::Composite { z, q: 4 * z + 1 }
    };
    report.snr = Some(analytic_snr(&design, oracle.signals(), cfg.sigma));
    Ok(NoisyOutcome { report, batch_size, rows, clusters, reference })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l2_cfg() -> NoisyRunConfig {
        NoisyRunConfig::new(64, 4, 2, 0.25, 0.5)
    }

    #[test]
    fn l2_schedule_matches_direct_arithmetic() {
        let cfg = l2_cfg();
        let s = l2_schedule(&cfg).unwrap();
        let m = (6.0 * 4.0 * (64.0f64 / 4.0).ln()).ceil();
        let t = (24.0 * 64.0f64.ln() * (0.5f64.powf(2.0 / 3.0)).exp()).ceil();
        assert_eq!(s.m, m as usize);
        assert_eq!(s.r, (64.0f64.ln().ceil()) as usize);
        assert_eq!(s.t, t as usize);
        assert_eq!(s.m, 67);
        assert_eq!(s.r, 5);
        assert_eq!(
            l2_query_total(&s),
            (s.m + 2 * s.r * (s.m - 1)) as u64 * s.t as u64
        );
    }

    #[test]
    fn general_schedule_matches_direct_arithmetic() {
        let mut cfg = NoisyRunConfig::new(48, 3, 3, 0.25, 0.5);
        cfg.estimator = Estimator::LloydSnap;
        let s = general_schedule(&cfg).unwrap();
        assert_eq!(s.constants.c_prime, 116);
        assert_eq!(s.constants.z_star, 41);
        let lnnk = (48.0f64 / 3.0).ln();
        assert_eq!(s.r_refs, (2.0 * 48.0f64.ln()).ceil() as usize);
        assert_eq!(s.m_cands, (116.0 * 4.0 * 3.0 * lnnk).ceil() as usize);
        assert_eq!(s.m_keep, (116.0 * 3.0 * lnnk).ceil() as usize);
        assert!(s.m_keep >= 48, "decoder should be overdetermined here");
        assert_eq!(
            general_query_total(&s),
            (3 * (s.r_refs + s.m_cands) + s.r_refs * s.m_cands) as u64 * s.t as u64
        );
    }

    #[test]
    fn config_validation_rejects_mismatches() {
        use crate::model::generate_signal_set;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let signals = generate_signal_set(16, 2, 2, 0.5, 2.0, &mut rng).unwrap();
        let mut oracle = Oracle::new(signals, 0.25, 7).unwrap();

        let mut bad_l = NoisyRunConfig::new(16, 2, 3, 0.25, 0.5);
        bad_l.estimator = Estimator::MinDistance;
        assert!(recover_noisy_l2(&mut oracle, &bad_l, &mut rng).is_err());

        let bad_sigma = NoisyRunConfig::new(16, 2, 2, 0.5, 0.5);
        assert!(matches!(
            recover_noisy_l2(&mut oracle, &bad_sigma, &mut rng),
            Err(PipelineError::BadParams(_))
        ));

        let bad_eps = NoisyRunConfig::new(16, 2, 2, 0.25, 0.25);
        assert!(matches!(
            recover_noisy_l2(&mut oracle, &bad_eps, &mut rng),
            Err(PipelineError::BadParams(_))
        ));

        let mut bad_cs = NoisyRunConfig::new(16, 2, 2, 0.25, 0.5);
        bad_cs.c_s = 0.5;
        assert!(matches!(
            recover_noisy_l2(&mut oracle, &bad_cs, &mut rng),
            Err(PipelineError::BadParams(_))
        ));
    }

    #[test]
    fn schedules_reject_degenerate_shapes() {
        let cfg = NoisyRunConfig::new(4, 4, 2, 0.25, 0.5);
        assert!(l2_schedule(&cfg).is_err());
        assert!(general_schedule(&cfg).is_err());
    }
}
