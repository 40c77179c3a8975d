//! Deterministic experiment driver shared by the command-line front end and
//! the integration suites: seed fan-out, parallel trial execution, CSV row
//! formatting, summary statistics, and the coupon-collector bench.
//!
//! Every experiment derives one root seed per trial from the master seed, and
//! every random object inside a trial (signals, oracle, pipeline) gets its
//! own stream derived from that root. Trials therefore run independently,
//! fan out across threads, and merge in trial order, so output files are
//! byte-identical across repeats and thread counts.

use std::io;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::cs::{sample_pm1, CsError};
use crate::gridgmm::{
    brute_likelihood_estimate, lloyd_snap, min_distance_estimate, CandidateWindow, GmmError,
};
use crate::model::{generate_signal_set, ModelError};
use crate::noiseless::{recover_noiseless, NoiselessOptions};
use crate::oracle::{analytic_snr, Oracle, OracleError, QueryDesign};
use crate::pipeline::{
    general_query_total, general_schedule, l2_query_total, l2_schedule, recover_noisy_general,
    recover_noisy_l2, Estimator, NoisyRunConfig, PipelineError,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Cs(#[from] CsError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Stream tags separating the random objects inside one trial.
mod stream {
    pub const ROOT: u64 = 0;
    pub const SIGNALS: u64 = 1;
    pub const ORACLE: u64 = 2;
    pub const PIPELINE: u64 = 3;
    pub const BENCH: u64 = 4;
}

/// Mix a master seed with a stream tag and an index into an independent
/// 64-bit seed (splitmix64 finalizer).
pub fn derive_seed(master: u64, stream_tag: u64, index: u64) -> u64 {
    let mut z = master
        ^ stream_tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Root seed of one trial; streams inside the trial derive from it.
pub fn trial_root(master: u64, trial: u64) -> u64 {
    derive_seed(master, stream::ROOT, trial)
}

/// Write header plus rows with trailing newline, as one atomic buffer.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> io::Result<()> {
    let mut out = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    std::fs::write(path, out)
}

fn join_semicolon<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

pub fn estimator_name(e: Estimator) -> &'static str {
    match e {
        Estimator::MinDistance => "min-distance",
        Estimator::LloydSnap => "lloyd-snap",
    }
}

pub fn parse_estimator(name: &str) -> Option<Estimator> {
    match name {
        "min-distance" => Some(Estimator::MinDistance),
        "lloyd-snap" => Some(Estimator::LloydSnap),
        _ => None,
    }
}

// ---------------------------------------------------------------- noiseless

pub const NOISELESS_HEADER: &str = "seed,n,k,L,queries,success,max_abs_error";
pub const TRACE_HEADER: &str = "trial,query_index,design_kind,response";

#[derive(Debug, Clone)]
pub struct NoiselessParams {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub epsilon: f64,
    pub amp: f64,
    pub trials: usize,
    pub seed: u64,
    pub batch_multiplier: f64,
    /// Record per-query trace rows (design label and response).
    pub trace: bool,
}

#[derive(Debug, Clone)]
pub struct NoiselessRow {
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub queries: u64,
    pub success: bool,
    pub max_abs_error: f64,
}

impl NoiselessRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.seed, self.n, self.k, self.l, self.queries, self.success, self.max_abs_error
        )
    }
}

#[derive(Debug)]
pub struct NoiselessRun {
    pub rows: Vec<NoiselessRow>,
    pub trace_rows: Vec<String>,
    pub success_rate: f64,
    pub mean_queries: f64,
}

pub fn run_noiseless(p: &NoiselessParams) -> Result<NoiselessRun, HarnessError> {
    if p.trials == 0 {
        return Err(HarnessError::BadConfig("trials must be at least 1".into()));
    }
    let per_trial: Vec<(NoiselessRow, Vec<String>)> = (0..p.trials as u64)
        .into_par_iter()
        .map(|t| noiseless_trial(p, t))
        .collect::<Result<_, HarnessError>>()?;
    let rows: Vec<NoiselessRow> = per_trial.iter().map(|(r, _)| r.clone()).collect();
    let trace_rows = per_trial.into_iter().flat_map(|(_, t)| t).collect();
    let success_rate =
        rows.iter().filter(|r| r.success).count() as f64 / rows.len() as f64;
    let mean_queries =
        rows.iter().map(|r| r.queries as f64).sum::<f64>() / rows.len() as f64;
    Ok(NoiselessRun { rows, trace_rows, success_rate, mean_queries })
}

fn noiseless_trial(
    p: &NoiselessParams,
    trial: u64,
) -> Result<(NoiselessRow, Vec<String>), HarnessError> {
    let root = trial_root(p.seed, trial);
    let mut sig_rng = ChaCha8Rng::seed_from_u64(derive_seed(root, stream::SIGNALS, 0));
    let signals = generate_signal_set(p.n, p.k, p.l, p.epsilon, p.amp, &mut sig_rng)?;
    let mut oracle = Oracle::new(signals, 0.0, derive_seed(root, stream::ORACLE, 0))?;
    if p.trace {
        oracle.enable_trace();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(root, stream::PIPELINE, 0));
    let opts = NoiselessOptions { batch_multiplier: p.batch_multiplier };
    let row = match recover_noiseless(&mut oracle, &mut rng, &opts) {
        Ok(report) => NoiselessRow {
            seed: root,
            n: p.n,
            k: p.k,
            l: p.l,
            queries: report.queries_used,
            success: report.all_exact(),
            max_abs_error: report.max_abs_error(oracle.signals()),
        },
        // A failed decode is a legitimate random outcome, not a harness
        // error; it still spent its queries.
        Err(_) => NoiselessRow {
            seed: root,
            n: p.n,
            k: p.k,
            l: p.l,
            queries: oracle.query_count(),
            success: false,
            max_abs_error: f64::INFINITY,
        },
    };
    let trace = oracle
        .trace()
        .map(|rows| {
            rows.iter()
                .map(|r| format!("{},{},{},{}", trial, r.query_index, r.design, r.response))
                .collect()
        })
        .unwrap_or_default();
    Ok((row, trace))
}

// -------------------------------------------------------------------- noisy

pub const NOISY_HEADER: &str =
    "seed,n,k,L,sigma,epsilon,T,queries,snr,success_per_component,l1_ratio_per_component,wall_time_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoisyKind {
    TwoComponent,
    General,
}

#[derive(Debug, Clone)]
pub struct NoisyParams {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub sigma: f64,
    pub epsilon: f64,
    pub amp: f64,
    pub trials: usize,
    pub seed: u64,
    pub c_s: f64,
    pub c2: f64,
    pub delta: f64,
    pub alpha_override: Option<f64>,
    pub estimator: Estimator,
    /// Record wall-clock per trial; off by default so outputs stay
    /// byte-identical across machines.
    pub timing: bool,
}

impl NoisyParams {
    pub fn config(&self) -> NoisyRunConfig {
        let mut cfg = NoisyRunConfig::new(self.n, self.k, self.l, self.sigma, self.epsilon);
        cfg.c_s = self.c_s;
        cfg.c2 = self.c2;
        cfg.delta = self.delta;
        cfg.alpha_override = self.alpha_override;
        cfg.estimator = self.estimator;
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct NoisyRow {
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub sigma: f64,
    pub epsilon: f64,
    pub t: usize,
    pub queries: u64,
    pub snr: f64,
    pub success: Vec<bool>,
    pub l1_ratio: Vec<f64>,
    pub wall_ms: u64,
}

impl NoisyRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.n,
            self.k,
            self.l,
            self.sigma,
            self.epsilon,
            self.t,
            self.queries,
            self.snr,
            join_semicolon(&self.success),
            join_semicolon(&self.l1_ratio),
            self.wall_ms
        )
    }

    pub fn all_exact(&self) -> bool {
        self.success.iter().all(|s| *s)
    }
}

#[derive(Debug)]
pub struct NoisyRun {
    pub rows: Vec<NoisyRow>,
    pub batch_size: usize,
    /// Query total the schedule predicts for one attempt.
    pub expected_queries: u64,
    pub success_rate: f64,
    pub mean_queries: f64,
    pub mean_snr: f64,
}

pub fn run_noisy(kind: NoisyKind, p: &NoisyParams) -> Result<NoisyRun, HarnessError> {
    if p.trials == 0 {
        return Err(HarnessError::BadConfig("trials must be at least 1".into()));
    }
    let cfg = p.config();
    let (batch_size, expected_queries, design) = match kind {
        NoisyKind::TwoComponent => {
            let s = l2_schedule(&cfg)?;
            (s.t, l2_query_total(&s), QueryDesign::Pm1)
        }
        NoisyKind::General => {
            let s = general_schedule(&cfg)?;
            let z = s.constants.z_star;
            (s.t, general_query_total(&s), QueryDesign::Composite { z, q: 4 * z + 1 })
        }
    };
    let rows: Vec<NoisyRow> = (0..p.trials as u64)
        .into_par_iter()
        .map(|t| noisy_trial(kind, p, &cfg, &design, batch_size, t))
        .collect::<Result<_, HarnessError>>()?;
    let success_rate =
        rows.iter().filter(|r| r.all_exact()).count() as f64 / rows.len() as f64;
    let mean_queries =
        rows.iter().map(|r| r.queries as f64).sum::<f64>() / rows.len() as f64;
    let mean_snr = rows.iter().map(|r| r.snr).sum::<f64>() / rows.len() as f64;
    Ok(NoisyRun { rows, batch_size, expected_queries, success_rate, mean_queries, mean_snr })
}

fn noisy_trial(
    kind: NoisyKind,
    p: &NoisyParams,
    cfg: &NoisyRunConfig,
    design: &QueryDesign,
    batch_size: usize,
    trial: u64,
) -> Result<NoisyRow, HarnessError> {
    let root = trial_root(p.seed, trial);
    let mut sig_rng = ChaCha8Rng::seed_from_u64(derive_seed(root, stream::SIGNALS, 0));
    let signals = generate_signal_set(p.n, p.k, p.l, p.epsilon, p.amp, &mut sig_rng)?;
    let fallback_snr = analytic_snr(design, &signals, p.sigma);
    let mut oracle = Oracle::new(signals, p.sigma, derive_seed(root, stream::ORACLE, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(root, stream::PIPELINE, 0));

    let started = Instant::now();
    let result = match kind {
        NoisyKind::TwoComponent => recover_noisy_l2(&mut oracle, cfg, &mut rng),
        NoisyKind::General => recover_noisy_general(&mut oracle, cfg, &mut rng),
    };
    let wall_ms = if p.timing { started.elapsed().as_millis() as u64 } else { 0 };

    let row = match result {
        Ok(outcome) => NoisyRow {
            seed: root,
            n: p.n,
            k: p.k,
            l: p.l,
            sigma: p.sigma,
            epsilon: p.epsilon,
            t: batch_size,
            queries: outcome.report.queries_used,
            snr: outcome.report.snr.unwrap_or(fallback_snr),
            success: outcome.report.exact.clone(),
            l1_ratio: outcome.report.per_signal_l1_ratio.clone(),
            wall_ms,
        },
        // Alignment and decode failures are per-trial outcomes; queries were
        // still spent and the analytic SNR still describes the design.
        Err(_) => NoisyRow {
            seed: root,
            n: p.n,
            k: p.k,
            l: p.l,
            sigma: p.sigma,
            epsilon: p.epsilon,
            t: batch_size,
            queries: oracle.query_count(),
            snr: fallback_snr,
            success: vec![false; p.l],
            l1_ratio: vec![f64::INFINITY; p.l],
            wall_ms,
        },
    };
    Ok(row)
}

// -------------------------------------------------------------- mixture bench

pub const GMM_BENCH_HEADER: &str = "sigma_over_eps,T,trials,exact_rate,estimator";

#[derive(Debug, Clone)]
pub struct GmmBenchParams {
    pub l: usize,
    pub sigma: f64,
    pub epsilon: f64,
    /// True mean indices are drawn uniformly from `[mean_lo, mean_hi]`.
    pub mean_lo: i64,
    pub mean_hi: i64,
    pub t: usize,
    pub trials: usize,
    pub seed: u64,
    pub estimator: Estimator,
}

#[derive(Debug, Clone)]
pub struct GmmBenchRow {
    pub sigma_over_eps: f64,
    pub t: usize,
    pub trials: usize,
    pub exact_rate: f64,
    pub estimator: &'static str,
}

impl GmmBenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.sigma_over_eps, self.t, self.trials, self.exact_rate, self.estimator
        )
    }
}

pub fn run_gmm_bench(p: &GmmBenchParams) -> Result<GmmBenchRow, HarnessError> {
    if p.trials == 0 || p.t == 0 {
        return Err(HarnessError::BadConfig("trials and T must be at least 1".into()));
    }
    if p.mean_hi < p.mean_lo || p.l == 0 {
        return Err(HarnessError::BadConfig("empty mean range or L = 0".into()));
    }
    let exact: usize = (0..p.trials as u64)
        .into_par_iter()
        .map(|t| gmm_trial(p, t).map(usize::from))
        .collect::<Result<Vec<_>, HarnessError>>()?
        .into_iter()
        .sum();
    Ok(GmmBenchRow {
        sigma_over_eps: p.sigma / p.epsilon,
        t: p.t,
        trials: p.trials,
        exact_rate: exact as f64 / p.trials as f64,
        estimator: estimator_name(p.estimator),
    })
}

fn gmm_trial(p: &GmmBenchParams, trial: u64) -> Result<bool, HarnessError> {
    let root = trial_root(p.seed, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(root, stream::BENCH, 0));
    let mut truth: Vec<i64> = (0..p.l).map(|_| rng.gen_range(p.mean_lo..=p.mean_hi)).collect();
    let samples: Vec<f64> = (0..p.t)
        .map(|_| {
            let mu = truth[rng.gen_range(0..p.l)] as f64 * p.epsilon;
            let z: f64 = rng.sample(StandardNormal);
            mu + p.sigma * z
        })
        .collect();
    truth.sort_unstable();
    let estimate = match p.estimator {
        Estimator::MinDistance => {
            let window = crate::gridgmm::make_window(&samples, p.sigma, p.epsilon)?;
            min_distance_estimate(&samples, p.l, p.sigma, p.epsilon, &window)
        }
        Estimator::LloydSnap => lloyd_snap(&samples, p.l, p.sigma, p.epsilon, &mut rng),
    };
    match estimate {
        Ok(m) => Ok(m.mean_idx() == truth.as_slice()),
        // An oversized window is a per-trial miss, not a harness error.
        Err(GmmError::WindowTooLarge { .. }) => Ok(false),
        Err(e) => Err(e.into()),
    }
}

/// Smallest batch size whose exact-recovery rate reaches `target`: doubling
/// scan followed by bisection. Every probe reuses the same master seed, so
/// the search is deterministic.
pub fn minimal_t_for_rate(
    base: &GmmBenchParams,
    target: f64,
    t_cap: usize,
) -> Result<(usize, f64), HarnessError> {
    if !(0.0 < target && target <= 1.0) {
        return Err(HarnessError::BadConfig("target rate must be in (0, 1]".into()));
    }
    let rate_at = |t: usize| -> Result<f64, HarnessError> {
        let mut p = base.clone();
        p.t = t;
        Ok(run_gmm_bench(&p)?.exact_rate)
    };
    let mut hi = 2usize;
    let mut hi_rate = rate_at(hi)?;
    while hi_rate < target {
        if hi >= t_cap {
            return Err(HarnessError::BadConfig(format!(
                "target rate {target} not reached by T = {t_cap}"
            )));
        }
        hi = (hi * 2).min(t_cap);
        hi_rate = rate_at(hi)?;
    }
    let mut lo = hi / 2;
    if hi == 2 {
        lo = 1;
    }
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        let mid_rate = rate_at(mid)?;
        if mid_rate >= target {
            hi = mid;
            hi_rate = mid_rate;
        } else {
            lo = mid;
        }
    }
    Ok((hi, hi_rate))
}

/// Ordinary least squares of y on x: (slope, intercept, r_squared).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}

// ------------------------------------------------------- estimator crosscheck

#[derive(Debug, Clone)]
pub struct CrosscheckParams {
    pub l: usize,
    pub sigma: f64,
    pub epsilon: f64,
    pub mean_lo: i64,
    pub mean_hi: i64,
    /// Fixed candidate window handed to both estimators, chosen so the
    /// enumeration stays tiny.
    pub window: CandidateWindow,
    pub t: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug)]
pub struct CrosscheckRun {
    pub trials: usize,
    pub agreements: usize,
    /// One line per disagreement: trial seed and both estimates.
    pub disagreements: Vec<String>,
}

impl CrosscheckRun {
    pub fn agreement_rate(&self) -> f64 {
        self.agreements as f64 / self.trials as f64
    }
}

/// Run the distance-based and likelihood-based estimators on the same tiny
/// instances and report every disagreement verbatim.
pub fn run_estimator_crosscheck(p: &CrosscheckParams) -> Result<CrosscheckRun, HarnessError> {
    if p.trials == 0 || p.t == 0 {
        return Err(HarnessError::BadConfig("trials and T must be at least 1".into()));
    }
    if p.mean_lo < p.window.lo || p.mean_hi > p.window.hi {
        return Err(HarnessError::BadConfig("window must contain the mean range".into()));
    }
    let outcomes: Vec<Option<String>> = (0..p.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let root = trial_root(p.seed, trial);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(root, stream::BENCH, 0));
            let truth: Vec<i64> =
                (0..p.l).map(|_| rng.gen_range(p.mean_lo..=p.mean_hi)).collect();
            let samples: Vec<f64> = (0..p.t)
                .map(|_| {
                    let mu = truth[rng.gen_range(0..p.l)] as f64 * p.epsilon;
                    let z: f64 = rng.sample(StandardNormal);
                    mu + p.sigma * z
                })
                .collect();
            let a = min_distance_estimate(&samples, p.l, p.sigma, p.epsilon, &p.window)?;
            let b = brute_likelihood_estimate(
                &samples,
                p.l,
                p.sigma,
                p.epsilon,
                &p.window,
                crate::gridgmm::BRUTE_CAP_DEFAULT,
            )?;
            if a.mean_idx() == b.mean_idx() {
                Ok(None)
            } else {
                Ok(Some(format!(
                    "seed={} truth={:?} min_distance={:?} brute_likelihood={:?}",
                    root,
                    truth,
                    a.mean_idx(),
                    b.mean_idx()
                )))
            }
        })
        .collect::<Result<_, HarnessError>>()?;
    let disagreements: Vec<String> = outcomes.into_iter().flatten().collect();
    Ok(CrosscheckRun {
        trials: p.trials,
        agreements: p.trials - disagreements.len(),
        disagreements,
    })
}

// ---------------------------------------------------------------- rip check

pub const RIP_HEADER: &str = "seed,delta_hat";

#[derive(Debug, Clone)]
pub struct RipParams {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RipRow {
    pub seed: u64,
    pub delta_hat: f64,
}

impl RipRow {
    pub fn csv(&self) -> String {
        format!("{},{}", self.seed, self.delta_hat)
    }
}

#[derive(Debug)]
pub struct RipRun {
    pub rows: Vec<RipRow>,
    /// Fraction of seeds with delta below sqrt(2) - 1.
    pub pass_rate: f64,
}

/// Default row count m = ceil(6 k ln(n/k)).
pub fn default_rip_m(n: usize, k: usize) -> usize {
    (6.0 * k as f64 * (n as f64 / k as f64).ln()).ceil() as usize
}

pub fn run_rip_check(p: &RipParams) -> Result<RipRun, HarnessError> {
    if p.trials == 0 || p.m == 0 {
        return Err(HarnessError::BadConfig("trials and m must be at least 1".into()));
    }
    let rows: Vec<RipRow> = (0..p.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let root = trial_root(p.seed, trial);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(root, stream::BENCH, 0));
            let sys = sample_pm1(p.m, p.n, &mut rng);
            let delta_hat = sys.empirical_rip_delta(p.k)?;
            Ok(RipRow { seed: root, delta_hat })
        })
        .collect::<Result<_, HarnessError>>()?;
    let threshold = 2.0_f64.sqrt() - 1.0;
    let pass_rate =
        rows.iter().filter(|r| r.delta_hat < threshold).count() as f64 / rows.len() as f64;
    Ok(RipRun { rows, pass_rate })
}

// --------------------------------------------------------------- lower bound

pub const LOWERBOUND_HEADER: &str = "seed,draws";

#[derive(Debug)]
pub struct LowerboundRun {
    pub rows: Vec<(u64, u64)>,
    pub mean: f64,
    pub variance: f64,
}

/// Simulate the draw count until one fixed component has been seen 2k times
/// when each query picks a component uniformly among L. The count is a sum
/// of 2k geometric variables, so the mean is 2kL and the variance is
/// 2k(L^2 - L).
pub fn lowerbound_sim(l: usize, k: usize, trials: usize, seed: u64) -> Result<LowerboundRun, HarnessError> {
    if l == 0 || k == 0 || trials == 0 {
        return Err(HarnessError::BadConfig("L, k, trials must be at least 1".into()));
    }
    let rows: Vec<(u64, u64)> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let root = trial_root(seed, trial);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(root, stream::BENCH, 0));
            let mut hits = 0usize;
            let mut draws = 0u64;
            while hits < 2 * k {
                draws += 1;
                if rng.gen_range(0..l) == 0 {
                    hits += 1;
                }
            }
            (root, draws)
        })
        .collect();
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&(_, d)| d as f64).sum::<f64>() / n;
    let variance = if rows.len() < 2 {
        0.0
    } else {
        rows.iter().map(|&(_, d)| (d as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    Ok(LowerboundRun { rows, mean, variance })
}

// --------------------------------------------------------------------- plot

/// Minimal scatter plot with an optional fitted line, written as a small
/// standalone SVG. Cosmetic companion to the CSV output.
pub fn write_svg_scatter(
    path: &Path,
    points: &[(f64, f64)],
    fit: Option<(f64, f64)>,
    x_label: &str,
    y_label: &str,
) -> io::Result<()> {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 48.0;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if points.is_empty() || !(x0 < x1) {
        x0 = 0.0;
        x1 = 1.0;
    }
    if !(y0 < y1) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        PAD,
        H - PAD,
        W - PAD,
        H - PAD
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        PAD,
        PAD,
        PAD,
        H - PAD
    ));
    if let Some((slope, intercept)) = fit {
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"steelblue\"/>\n",
            sx(x0),
            sy(slope * x0 + intercept),
            sx(x1),
            sy(slope * x1 + intercept)
        ));
    }
    for &(x, y) in points {
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"crimson\"/>\n",
            sx(x),
            sy(y)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text>\n",
        W / 2.0 - 30.0,
        H - 12.0,
        x_label
    ));
    svg.push_str(&format!(
        "<text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12 {})\">{}</text>\n",
        H / 2.0,
        H / 2.0,
        y_label
    ));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)
}
