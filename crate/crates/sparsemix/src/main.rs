//! Command-line driver: one subcommand per experiment, flat key=value config
//! files with flag overrides, CSV artifacts, and threshold-based exit codes.
//!
//! Exit codes: 0 when every configured threshold is met, 1 when a threshold
//! fails, 2 for usage or configuration errors.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use sparsemix::harness::{
    self, default_rip_m, linear_fit, lowerbound_sim, minimal_t_for_rate, parse_estimator,
    run_gmm_bench, run_noiseless, run_noisy, run_rip_check, write_csv, write_svg_scatter,
    GmmBenchParams, NoiselessParams, NoisyKind, NoisyParams,
};
use sparsemix::gridgmm::required_batch_size;
use sparsemix::model::generate_signal_set;
use sparsemix::pipeline::Estimator;

#[derive(Parser)]
#[command(
    name = "sparsemix",
    version,
    about = "Query-oracle simulator and recovery pipelines for mixtures of sparse linear regressions"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Ambient dimension.
    #[arg(long)]
    n: Option<usize>,
    /// Sparsity per hidden vector.
    #[arg(long)]
    k: Option<usize>,
    /// Number of hidden vectors.
    #[arg(long = "L")]
    l: Option<usize>,
    /// Noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Grid pitch of signal entries.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Number of seeded trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed; mandatory, via flag or config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Sensing rows for rip-check.
    #[arg(long)]
    m: Option<usize>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a signal set and write it as a text file.
    Gen(Common),
    /// Exact recovery from noiseless batches on a geometric query grid.
    Noiseless(Common),
    /// Two-component noisy pipeline.
    Noisy2(Common),
    /// General noisy pipeline.
    #[command(name = "noisyL")]
    NoisyL(Common),
    /// Grid-mixture mean identification bench, single point or sweep.
    GmmBench(Common),
    /// Empirical restricted-isometry constants of sign matrices.
    RipCheck(Common),
    /// Draws until one fixed component is seen 2k times.
    Lowerbound(Common),
}

/// Resolved parameter source: config file entries overridden by flags.
struct Ctx {
    flags: Common,
    file: HashMap<String, String>,
}

impl Ctx {
    fn new(flags: Common) -> Result<Self, String> {
        let file = match &flags.config {
            Some(path) => parse_config_file(path)?,
            None => HashMap::new(),
        };
        Ok(Ctx { flags, file })
    }

    fn key<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| format!("config key {key} has unparsable value {raw}")),
        }
    }

    fn usize_of(&self, key: &str, flag: Option<usize>, default: usize) -> Result<usize, String> {
        Ok(flag.or(self.key(key)?).unwrap_or(default))
    }

    fn f64_of(&self, key: &str, flag: Option<f64>, default: f64) -> Result<f64, String> {
        Ok(flag.or(self.key(key)?).unwrap_or(default))
    }

    fn seed(&self) -> Result<u64, String> {
        self.flags
            .seed
            .or(self.key("seed")?)
            .ok_or_else(|| "a master seed is required (--seed or seed= in config)".to_string())
    }

    fn out(&self) -> Result<Option<PathBuf>, String> {
        Ok(self.flags.out.clone().or(self.key::<PathBuf>("out")?))
    }

    fn bool_key(&self, key: &str) -> Result<bool, String> {
        Ok(self.key::<bool>(key)?.unwrap_or(false))
    }

    fn estimator(&self, default: Estimator) -> Result<Estimator, String> {
        match self.file.get("estimator") {
            None => Ok(default),
            Some(name) => parse_estimator(name)
                .ok_or_else(|| format!("unknown estimator {name}, use min-distance or lloyd-snap")),
        }
    }
}

fn parse_config_file(path: &PathBuf) -> Result<HashMap<String, String>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut map = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {} is not key=value: {line}", idx + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// A threshold read from config: present means enforced.
fn check_min(ctx: &Ctx, key: &str, actual: f64, failures: &mut Vec<String>) -> Result<(), String> {
    if let Some(min) = ctx.key::<f64>(key)? {
        if actual < min {
            failures.push(format!("{key}: {actual} < {min}"));
        }
    }
    Ok(())
}

fn check_rel(
    ctx: &Ctx,
    target_key: &str,
    tol_key: &str,
    actual: f64,
    failures: &mut Vec<String>,
) -> Result<(), String> {
    if let (Some(target), Some(tol)) = (ctx.key::<f64>(target_key)?, ctx.key::<f64>(tol_key)?) {
        if (actual - target).abs() > tol * target.abs() {
            failures.push(format!(
                "{target_key}: {actual} deviates from {target} by more than {tol} relative"
            ));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Returns Ok(true) when all configured thresholds pass.
fn dispatch(cmd: Cmd) -> Result<bool, String> {
    match cmd {
        Cmd::Gen(c) => cmd_gen(Ctx::new(c)?),
        Cmd::Noiseless(c) => cmd_noiseless(Ctx::new(c)?),
        Cmd::Noisy2(c) => cmd_noisy(Ctx::new(c)?, NoisyKind::TwoComponent),
        Cmd::NoisyL(c) => cmd_noisy(Ctx::new(c)?, NoisyKind::General),
        Cmd::GmmBench(c) => cmd_gmm_bench(Ctx::new(c)?),
        Cmd::RipCheck(c) => cmd_rip_check(Ctx::new(c)?),
        Cmd::Lowerbound(c) => cmd_lowerbound(Ctx::new(c)?),
    }
}

fn cmd_gen(ctx: Ctx) -> Result<bool, String> {
    let n = ctx.usize_of("n", ctx.flags.n, 16)?;
    let k = ctx.usize_of("k", ctx.flags.k, 2)?;
    let l = ctx.usize_of("L", ctx.flags.l, 2)?;
    let epsilon = ctx.f64_of("epsilon", ctx.flags.epsilon, 0.5)?;
    let amp = ctx.f64_of("amp", None, 2.0)?;
    let seed = ctx.seed()?;
    let out = ctx.out()?.ok_or("gen needs --out for the signal file")?;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let signals =
        generate_signal_set(n, k, l, epsilon, amp, &mut rng).map_err(|e| e.to_string())?;
    std::fs::write(&out, signals.to_text()).map_err(|e| e.to_string())?;
    println!("wrote signals n={n} k={k} L={l} epsilon={epsilon} to {}", out.display());
    Ok(true)
}

fn cmd_noiseless(ctx: Ctx) -> Result<bool, String> {
    let started = Instant::now();
    let p = NoiselessParams {
        n: ctx.usize_of("n", ctx.flags.n, 40)?,
        k: ctx.usize_of("k", ctx.flags.k, 4)?,
        l: ctx.usize_of("L", ctx.flags.l, 3)?,
        epsilon: ctx.f64_of("epsilon", ctx.flags.epsilon, 1.0)?,
        amp: ctx.f64_of("amp", None, 2.0)?,
        trials: ctx.usize_of("trials", ctx.flags.trials, 200)?,
        seed: ctx.seed()?,
        batch_multiplier: ctx.f64_of("batch_multiplier", None, 1.0)?,
        trace: ctx.file.contains_key("trace"),
    };
    let run = run_noiseless(&p).map_err(|e| e.to_string())?;
    if let Some(out) = ctx.out()? {
        let rows: Vec<String> = run.rows.iter().map(|r| r.csv()).collect();
        write_csv(&out, harness::NOISELESS_HEADER, &rows).map_err(|e| e.to_string())?;
    }
    if let Some(trace_path) = ctx.file.get("trace") {
        write_csv(&PathBuf::from(trace_path), harness::TRACE_HEADER, &run.trace_rows)
            .map_err(|e| e.to_string())?;
    }
    println!(
        "summary cmd=noiseless trials={} success_rate={} mean_queries={} runtime_ms={}",
        p.trials,
        run.success_rate,
        run.mean_queries,
        started.elapsed().as_millis()
    );
    let mut failures = Vec::new();
    check_min(&ctx, "min_success", run.success_rate, &mut failures)?;
    report_failures(failures)
}

fn cmd_noisy(ctx: Ctx, kind: NoisyKind) -> Result<bool, String> {
    let started = Instant::now();
    let general = kind == NoisyKind::General;
    let p = NoisyParams {
        n: ctx.usize_of("n", ctx.flags.n, if general { 48 } else { 64 })?,
        k: ctx.usize_of("k", ctx.flags.k, if general { 3 } else { 4 })?,
        l: ctx.usize_of("L", ctx.flags.l, if general { 3 } else { 2 })?,
        sigma: ctx.f64_of("sigma", ctx.flags.sigma, 0.25)?,
        epsilon: ctx.f64_of("epsilon", ctx.flags.epsilon, 0.5)?,
        amp: ctx.f64_of("amp", None, 2.0)?,
        trials: ctx.usize_of("trials", ctx.flags.trials, if general { 10 } else { 20 })?,
        seed: ctx.seed()?,
        c_s: ctx.f64_of("c_s", None, 6.0)?,
        c2: ctx.f64_of("c2", None, 24.0)?,
        delta: ctx.f64_of("delta", None, 0.4)?,
        alpha_override: Some(ctx.f64_of("alpha_star", None, 4.0)?),
        estimator: ctx
            .estimator(if general { Estimator::LloydSnap } else { Estimator::MinDistance })?,
        timing: ctx.bool_key("timing")?,
    };
    let run = run_noisy(kind, &p).map_err(|e| e.to_string())?;
    if let Some(out) = ctx.out()? {
        let rows: Vec<String> = run.rows.iter().map(|r| r.csv()).collect();
        write_csv(&out, harness::NOISY_HEADER, &rows).map_err(|e| e.to_string())?;
    }
    let cmd = if general { "noisyL" } else { "noisy2" };
    println!(
        "summary cmd={} trials={} success_rate={} mean_queries={} mean_snr={} T={} \
         scheduled_queries={} runtime_ms={}",
        cmd,
        p.trials,
        run.success_rate,
        run.mean_queries,
        run.mean_snr,
        run.batch_size,
        run.expected_queries,
        started.elapsed().as_millis()
    );
    let mut failures = Vec::new();
    check_min(&ctx, "min_success", run.success_rate, &mut failures)?;
    report_failures(failures)
}

fn cmd_gmm_bench(ctx: Ctx) -> Result<bool, String> {
    let started = Instant::now();
    let l = ctx.usize_of("L", ctx.flags.l, 3)?;
    let epsilon = ctx.f64_of("epsilon", ctx.flags.epsilon, 1.0)?;
    let sigma = ctx.f64_of("sigma", ctx.flags.sigma, 0.5)?;
    let n = ctx.usize_of("n", ctx.flags.n, 100)?;
    let trials = ctx.usize_of("trials", ctx.flags.trials, 100)?;
    let seed = ctx.seed()?;
    let c = ctx.f64_of("c", None, 4.0)?;
    let mean_lo = ctx.key::<i64>("mean_lo")?.unwrap_or(-5);
    let mean_hi = ctx.key::<i64>("mean_hi")?.unwrap_or(5);
    let estimator = ctx.estimator(Estimator::MinDistance)?;
    let base = GmmBenchParams {
        l,
        sigma,
        epsilon,
        mean_lo,
        mean_hi,
        t: 0,
        trials,
        seed,
        estimator,
    };

    let mut rows = Vec::new();
    let mut points = Vec::new();
    match ctx.file.get("sweep") {
        None => {
            let mut p = base.clone();
            p.t = match ctx.key::<usize>("t")? {
                Some(t) => t,
                None => required_batch_size(sigma, epsilon, l, n as f64, c)
                    .map_err(|e| e.to_string())?,
            };
            rows.push(run_gmm_bench(&p).map_err(|e| e.to_string())?);
        }
        Some(spec) => {
            let target = ctx.key::<f64>("target")?.unwrap_or(0.95);
            let t_cap = ctx.key::<usize>("t_cap")?.unwrap_or(1 << 15);
            for ratio_text in spec.split(',') {
                let ratio: f64 = ratio_text
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad sweep entry {ratio_text}"))?;
                let mut p = base.clone();
                p.sigma = ratio * epsilon;
                let (t_star, rate) =
                    minimal_t_for_rate(&p, target, t_cap).map_err(|e| e.to_string())?;
                p.t = t_star;
                rows.push(harness::GmmBenchRow {
                    sigma_over_eps: ratio,
                    t: t_star,
                    trials,
                    exact_rate: rate,
                    estimator: harness::estimator_name(estimator),
                });
                points.push((ratio.powf(2.0 / 3.0), (t_star as f64).ln()));
            }
        }
    }

    if let Some(out) = ctx.out()? {
        let lines: Vec<String> = rows.iter().map(|r| r.csv()).collect();
        write_csv(&out, harness::GMM_BENCH_HEADER, &lines).map_err(|e| e.to_string())?;
    }
    let mut failures = Vec::new();
    if points.len() >= 2 {
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        let (slope, intercept, r2) = linear_fit(&xs, &ys);
        println!(
            "summary cmd=gmm-bench sweep_points={} slope={} intercept={} r2={} runtime_ms={}",
            points.len(),
            slope,
            intercept,
            r2,
            started.elapsed().as_millis()
        );
        if let Some(plot) = ctx.file.get("plot") {
            write_svg_scatter(
                &PathBuf::from(plot),
                &points,
                Some((slope, intercept)),
                "(sigma/eps)^(2/3)",
                "ln T*",
            )
            .map_err(|e| e.to_string())?;
        }
        check_min(&ctx, "min_r2", r2, &mut failures)?;
    } else {
        let row = &rows[0];
        println!(
            "summary cmd=gmm-bench T={} trials={} exact_rate={} estimator={} runtime_ms={}",
            row.t,
            row.trials,
            row.exact_rate,
            row.estimator,
            started.elapsed().as_millis()
        );
        check_min(&ctx, "min_exact_rate", row.exact_rate, &mut failures)?;
    }
    report_failures(failures)
}

fn cmd_rip_check(ctx: Ctx) -> Result<bool, String> {
    let started = Instant::now();
    let n = ctx.usize_of("n", ctx.flags.n, 24)?;
    let k = ctx.usize_of("k", ctx.flags.k, 2)?;
    let p = harness::RipParams {
        n,
        k,
        m: ctx.usize_of("m", ctx.flags.m, default_rip_m(n, k))?,
        trials: ctx.usize_of("trials", ctx.flags.trials, 50)?,
        seed: ctx.seed()?,
    };
    let run = run_rip_check(&p).map_err(|e| e.to_string())?;
    if let Some(out) = ctx.out()? {
        let rows: Vec<String> = run.rows.iter().map(|r| r.csv()).collect();
        write_csv(&out, harness::RIP_HEADER, &rows).map_err(|e| e.to_string())?;
    }
    println!(
        "summary cmd=rip-check n={} k={} m={} trials={} pass_rate={} runtime_ms={}",
        p.n,
        p.k,
        p.m,
        p.trials,
        run.pass_rate,
        started.elapsed().as_millis()
    );
    let mut failures = Vec::new();
    check_min(&ctx, "min_pass_rate", run.pass_rate, &mut failures)?;
    report_failures(failures)
}

fn cmd_lowerbound(ctx: Ctx) -> Result<bool, String> {
    let started = Instant::now();
    let l = ctx.usize_of("L", ctx.flags.l, 3)?;
    let k = ctx.usize_of("k", ctx.flags.k, 10)?;
    let trials = ctx.usize_of("trials", ctx.flags.trials, 10_000)?;
    let seed = ctx.seed()?;
    let run = lowerbound_sim(l, k, trials, seed).map_err(|e| e.to_string())?;
    if let Some(out) = ctx.out()? {
        let rows: Vec<String> =
            run.rows.iter().map(|(s, d)| format!("{s},{d}")).collect();
        write_csv(&out, harness::LOWERBOUND_HEADER, &rows).map_err(|e| e.to_string())?;
    }
    println!(
        "summary cmd=lowerbound L={} k={} trials={} mean={} variance={} runtime_ms={}",
        l,
        k,
        trials,
        run.mean,
        run.variance,
        started.elapsed().as_millis()
    );
    let mut failures = Vec::new();
    check_rel(&ctx, "expect_mean", "mean_tol", run.mean, &mut failures)?;
    check_rel(&ctx, "expect_var", "var_tol", run.variance, &mut failures)?;
    report_failures(failures)
}

fn report_failures(failures: Vec<String>) -> Result<bool, String> {
    if failures.is_empty() {
        return Ok(true);
    }
    for f in &failures {
        eprintln!("threshold failed: {f}");
    }
    Ok(false)
}
