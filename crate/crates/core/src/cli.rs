//! Command-line entry point.
//!
//! Exit codes: 0 when everything ran and every enabled check passed, 1 when a
//! check failed, 2 on usage or configuration errors.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::chain_compare::verify_identity;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::normal_clt::Innovation;
use crate::rate_harness::{
    band_check, clt_bound_compliance, decreasing_with_param, emit, envelope_check, fit_rate, run_sweep, Fixed,
    LogCorrection, RateTarget, StableAxis, Summary, SweepSpec,
};
use crate::sampling::audit::{pareto_audit, stable_cf_audit};
use crate::sampling::{RngStream, StableParams};
use crate::sgd_diffusion::{check_assumptions, moment_audit, QuadraticModel, SgdConfig};
use crate::stable_ou::{scaling_ratio_test, StableOuConfig};
use crate::state::VectorState;

pub const THREADS_ENV: &str = "MARKOV_APPROX_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "markov-approx",
    version,
    about = "Wasserstein-1 checks of Markov-process approximations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Configuration file (key = value with [section] headers).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Directory for CSV/JSON results.
    #[arg(long, global = true, value_name = "DIR", default_value = "results")]
    pub out: PathBuf,

    /// Seed; overrides the config file.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,

    /// Number of simulated paths; overrides the config file.
    #[arg(long, global = true, value_name = "N")]
    pub paths: Option<usize>,

    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the telescoping identity on random finite chain pairs.
    VerifyFramework {
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 8)]
        max_states: usize,
        #[arg(long, default_value_t = 12)]
        max_horizon: usize,
    },
    /// SGD against its diffusion over a learning-rate grid.
    SgdRate,
    /// Stable Euler-Maruyama against the exact marginal over a step grid.
    StableRate,
    /// Normalized partial sums against the Gaussian over an n grid.
    CltRate,
    /// Characteristic-function and Kolmogorov-Smirnov checks of the samplers.
    SamplerAudit,
    /// Probe the assumption constants of a quadratic model.
    Assumptions,
    /// Moment-boundedness audits of the SGD and stable chains.
    Moments,
}

/// Parse `argv`, run the command and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                // a global pool may already exist when embedded; that one stays
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, found `{v}`");
                return 2;
            }
        }
    }
    match dispatch(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            2
        }
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: Config,
}

impl Ctx<'_> {
    fn seed(&self, section: &str) -> Result<u64> {
        match self.cli.seed {
            Some(s) => Ok(s),
            None => Ok(self.cfg.u64(section, "seed")?.unwrap_or(0)),
        }
    }

    fn paths(&self, section: &str, default: usize) -> Result<usize> {
        match self.cli.paths {
            Some(p) => Ok(p),
            None => Ok(self.cfg.usize(section, "n_paths")?.unwrap_or(default)),
        }
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.cli.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn write_json(&self, name: &str, v: &Value) -> Result<PathBuf> {
        fs::create_dir_all(&self.cli.out)?;
        let p = self.cli.out.join(name);
        fs::write(&p, serde_json::to_string_pretty(v)? + "\n")?;
        Ok(p)
    }
}

fn load_config(cli: &Cli, required: bool) -> Result<Config> {
    match &cli.config {
        Some(p) => Config::load(p),
        None if required => Err(Error::Config("this subcommand needs --config PATH".into())),
        None => Ok(Config::default()),
    }
}

fn dispatch(cli: &Cli) -> Result<bool> {
    let required = !matches!(cli.command, Command::VerifyFramework { .. } | Command::SamplerAudit);
    let ctx = Ctx {
        cli,
        cfg: load_config(cli, required)?,
    };
    match &cli.command {
        Command::VerifyFramework {
            trials,
            max_states,
            max_horizon,
        } => verify_framework(&ctx, *trials, *max_states, *max_horizon),
        Command::SgdRate => sgd_rate(&ctx),
        Command::StableRate => stable_rate(&ctx),
        Command::CltRate => clt_rate(&ctx),
        Command::SamplerAudit => sampler_audit(&ctx),
        Command::Assumptions => assumptions(&ctx),
        Command::Moments => moments(&ctx),
    }
}

const IDENTITY_TOL: f64 = 1e-10;

fn verify_framework(ctx: &Ctx, trials: usize, max_states: usize, max_horizon: usize) -> Result<bool> {
    if max_states == 0 || max_horizon < 2 {
        return Err(Error::Config("need --max-states >= 1 and --max-horizon >= 2".into()));
    }
    let seed = ctx.seed("framework")?;
    let mut rng = RngStream::new(seed, 0).rng();
    let check = verify_identity(&mut rng, trials, max_states, max_horizon)?;
    let passed = check.max_abs_residual <= IDENTITY_TOL;
    ctx.say(format!(
        "verify-framework: {} trials, max |lhs - rhs| = {:.3e} ({})",
        check.trials,
        check.max_abs_residual,
        if passed { "ok" } else { "FAILED" }
    ));
    ctx.write_json(
        "framework.json",
        &json!({
            "trials": check.trials,
            "max_states": max_states,
            "max_horizon": max_horizon,
            "seed": seed,
            "max_abs_residual": check.max_abs_residual,
            "tolerance": IDENTITY_TOL,
            "pass": passed,
        }),
    )?;
    Ok(passed)
}

fn vector_or_zeros(cfg: &Config, section: &str, key: &str, dim: usize) -> Result<VectorState> {
    let v = match cfg.list(section, key)? {
        Some(v) => VectorState::new(v)?,
        None => VectorState::zeros(dim)?,
    };
    v.ensure_dim(dim)?;
    Ok(v)
}

/// Quadratic model from `variant`, `H` and (Example 2) `gamma`.
pub fn model_from_config(cfg: &Config, section: &str) -> Result<QuadraticModel> {
    let h = cfg
        .matrix(section, "H")?
        .ok_or_else(|| Error::Config(format!("missing key `H` in [{section}]")))?;
    match cfg.str(section, "variant").unwrap_or("example1") {
        "example1" => QuadraticModel::example1(h),
        "example2" => QuadraticModel::example2(h, cfg.require_f64(section, "gamma")?),
        other => Err(Error::Config(format!("unknown variant `{other}`"))),
    }
}

/// A fit that fails for lack of usable points is a failed check, not an error.
fn try_fit(
    table: &crate::rate_harness::SweepTable,
    correction: LogCorrection,
) -> (Option<crate::rate_harness::RateFit>, Option<String>) {
    match fit_rate(table, correction) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

fn note_fit_error(summary: &mut Summary, fit_error: Option<String>) {
    if let Some(e) = fit_error {
        summary.extra.insert("fit_error".into(), json!(e));
    }
}

fn finish_sweep(ctx: &Ctx, summary: &Summary, table: &crate::rate_harness::SweepTable) -> Result<()> {
    let out = emit(table, summary, &ctx.cli.out)?;
    for r in &table.rows {
        ctx.say(format!(
            "  param {:<12} w1 {:.5e} +- {:.2e}  floor {:.2e}{}",
            r.param,
            r.w1,
            r.stderr,
            r.floor,
            if r.flagged { "  [flagged]" } else { "" }
        ));
    }
    if let Some(f) = &summary.fit {
        ctx.say(format!("  slope {:.4} +- {:.4} (95%)", f.slope, f.half_width));
    }
    if let Some(e) = summary.extra.get("fit_error") {
        ctx.say(format!("  no rate fit: {}", e.as_str().unwrap_or_default()));
    }
    ctx.say(format!("  wrote {} and {}", out.csv.display(), out.json.display()));
    Ok(())
}

fn sgd_rate(ctx: &Ctx) -> Result<bool> {
    const S: &str = "sgd";
    let cfg = &ctx.cfg;
    let model = model_from_config(cfg, S)?;
    let x0 = vector_or_zeros(cfg, S, "x0", model.dim())?;
    let t = cfg.f64(S, "T")?.unwrap_or(2.0);
    let grid = cfg.require_list(S, "eta_grid")?;
    let mut spec = SweepSpec::new(
        Fixed::Sgd {
            model,
            x0,
            t,
            sde_dt: cfg.f64(S, "sde_dt")?,
        },
        grid,
        ctx.paths(S, 10_000)?,
        ctx.seed(S)?,
    )?;
    spec.resamples = cfg.usize(S, "resamples")?.unwrap_or(200);
    let table = run_sweep(&spec)?;
    let (fit, fit_error) = try_fit(&table, LogCorrection::Divide1PlusLog);
    let target = RateTarget::symmetric(1.0, cfg.f64(S, "tolerance")?.unwrap_or(0.25));
    let env = envelope_check(&table, 1.0, LogCorrection::Divide1PlusLog)?;
    let mut summary = Summary::new(&table, fit, Some(target));
    note_fit_error(&mut summary, fit_error);
    summary.extra.insert("envelope".into(), serde_json::to_value(&env)?);
    let passed = summary.pass == Some(true) && env.all_below;
    summary.pass = Some(passed);
    ctx.say("sgd-rate:");
    finish_sweep(ctx, &summary, &table)?;
    Ok(passed)
}

fn stable_rate(ctx: &Ctx) -> Result<bool> {
    const S: &str = "stable";
    let cfg = &ctx.cfg;
    let alpha = cfg.require_f64(S, "alpha")?;
    let dim = cfg.usize(S, "d")?.unwrap_or(1);
    let x0 = vector_or_zeros(cfg, S, "x0", dim)?;
    let n_paths = ctx.paths(S, 100_000)?;
    let seed = ctx.seed(S)?;
    let resamples = cfg.usize(S, "resamples")?.unwrap_or(200);
    // grid over N at fixed eta: time-uniformity check instead of a rate fit
    if let Some(n_grid) = cfg.list(S, "n_grid")? {
        let eta = cfg.require_f64(S, "eta")?;
        let mut spec = SweepSpec::new(
            Fixed::Stable {
                alpha,
                dim,
                x0,
                axis: StableAxis::Horizon { eta },
            },
            n_grid,
            n_paths,
            seed,
        )?;
        spec.resamples = resamples;
        let table = run_sweep(&spec)?;
        let band = band_check(&table)?;
        let mut summary = Summary::new(&table, None, None);
        summary.extra.insert("band".into(), serde_json::to_value(&band)?);
        summary.pass = Some(band.passed);
        ctx.say("stable-rate (horizon grid):");
        finish_sweep(ctx, &summary, &table)?;
        return Ok(band.passed);
    }
    let t = cfg.f64(S, "T")?.unwrap_or(2.0);
    let grid = cfg.require_list(S, "eta_grid")?;
    let mut spec = SweepSpec::new(
        Fixed::Stable {
            alpha,
            dim,
            x0,
            axis: StableAxis::Eta { t },
        },
        grid,
        n_paths,
        seed,
    )?;
    spec.resamples = resamples;
    let table = run_sweep(&spec)?;
    let (fit, fit_error) = try_fit(&table, LogCorrection::None);
    let expected = (2.0 - alpha) / alpha;
    let target = RateTarget::symmetric(expected, cfg.f64(S, "tolerance")?.unwrap_or(0.30));
    let monotone = decreasing_with_param(&table);
    let mut summary = Summary::new(&table, fit, Some(target));
    note_fit_error(&mut summary, fit_error);
    summary.extra.insert("monotone".into(), json!(monotone));
    let passed = summary.pass == Some(true) && monotone;
    summary.pass = Some(passed);
    ctx.say("stable-rate:");
    finish_sweep(ctx, &summary, &table)?;
    Ok(passed)
}

fn clt_rate(ctx: &Ctx) -> Result<bool> {
    const S: &str = "clt";
    let cfg = &ctx.cfg;
    let dim = cfg.usize(S, "d")?.unwrap_or(1);
    let innovation = Innovation::from_name(cfg.str(S, "innovation").unwrap_or("rademacher"))?;
    let grid = cfg.require_list(S, "n_grid")?;
    let n_proj = cfg.usize(S, "n_proj")?.unwrap_or(64);
    let mut spec = SweepSpec::new(
        Fixed::Clt {
            dim,
            innovation,
            n_proj,
        },
        grid,
        ctx.paths(S, 20_000)?,
        ctx.seed(S)?,
    )?;
    // the sliced bootstrap costs n_proj one-dimensional passes per resample
    spec.resamples = cfg.usize(S, "resamples")?.unwrap_or(if dim == 1 { 100 } else { 50 });
    let table = run_sweep(&spec)?;
    let compliance = clt_bound_compliance(
        &spec,
        &table,
        cfg.usize(S, "calibration_size")?.unwrap_or(512),
        cfg.usize(S, "calibration_reps")?.unwrap_or(4),
    )?;
    let (fit, fit_error) = try_fit(&table, LogCorrection::Divide1PlusLog);
    let lo = cfg.f64(S, "slope_lo")?.unwrap_or(-0.65);
    let hi = cfg.f64(S, "slope_hi")?.unwrap_or(-0.38);
    let target = RateTarget { expected: -0.5, lo, hi };
    let mut summary = Summary::new(&table, fit, Some(target));
    note_fit_error(&mut summary, fit_error);
    summary.extra.insert("innovation".into(), json!(innovation.name()));
    summary
        .extra
        .insert("sliced_calibration".into(), json!(compliance.calibration));
    summary.extra.insert("bounds".into(), json!(compliance.bounds));
    summary.extra.insert("within_bound".into(), json!(compliance.within));
    let passed = summary.pass == Some(true) && compliance.all_within();
    summary.pass = Some(passed);
    ctx.say(format!("clt-rate ({}, d = {dim}):", innovation.name()));
    finish_sweep(ctx, &summary, &table)?;
    Ok(passed)
}

fn sampler_audit(ctx: &Ctx) -> Result<bool> {
    const S: &str = "sampler";
    let cfg = &ctx.cfg;
    let alphas = cfg.list(S, "alphas")?.unwrap_or_else(|| vec![1.2, 1.5, 1.8]);
    let dims = cfg.list(S, "dims")?.unwrap_or_else(|| vec![1.0, 2.0]);
    let lambdas = cfg.list(S, "lambdas")?.unwrap_or_else(|| vec![0.5, 1.0, 2.0]);
    let m_cf = ctx.paths(S, 1_000_000)?;
    let m_pareto = cfg.usize(S, "pareto_draws")?.unwrap_or(100_000);
    let level = cfg.f64(S, "level")?.unwrap_or(0.01);
    let seed = ctx.seed(S)?;
    let mut cf = Vec::new();
    let mut pareto = Vec::new();
    let mut passed = true;
    for (i, &a) in alphas.iter().enumerate() {
        for (j, &d) in dims.iter().enumerate() {
            if d.fract() != 0.0 || d < 1.0 {
                return Err(Error::Config(format!("dims entry {d} is not a positive integer")));
            }
            let params = StableParams::new(a, d as usize)?;
            let id = (i * dims.len() + j) as u64;
            for p in stable_cf_audit(&params, &lambdas, m_cf, &RngStream::new(seed, 2 * id))? {
                passed &= p.passed;
                ctx.say(format!(
                    "  cf   alpha {a} d {d} |lambda| {:<4} emp {:.5} exact {:.5} tol {:.1e} {}",
                    p.lambda_norm,
                    p.empirical,
                    p.exact,
                    p.tolerance,
                    if p.passed { "ok" } else { "FAILED" }
                ));
                cf.push(p);
            }
            let pa = pareto_audit(&params, m_pareto, level, &RngStream::new(seed, 2 * id + 1))?;
            passed &= pa.passed;
            ctx.say(format!(
                "  pareto alpha {a} d {d} KS {:.4e} p {:.3} violations {} {}",
                pa.ks_statistic,
                pa.p_value,
                pa.support_violations,
                if pa.passed { "ok" } else { "FAILED" }
            ));
            pareto.push(pa);
        }
    }
    ctx.write_json(
        "sampler_audit.json",
        &json!({ "seed": seed, "cf": cf, "pareto": pareto, "pass": passed }),
    )?;
    Ok(passed)
}

fn assumptions(ctx: &Ctx) -> Result<bool> {
    const S: &str = "assumptions";
    let model = model_from_config(&ctx.cfg, S)?;
    let n_probe = ctx.cfg.usize(S, "n_probe")?.unwrap_or(10_000);
    let report = check_assumptions(&model, n_probe, &RngStream::new(ctx.seed(S)?, 0))?;
    let c = &report.constants;
    ctx.say(format!(
        "assumptions: theta0 {:.6} delta {:.6} kappa {:.6} theta1..5 {:?}",
        c.theta[0],
        c.delta,
        c.kappa,
        &c.theta[1..]
    ));
    ctx.say(format!(
        "  worst relative violations: dissipativity {:.1e} monotonicity {:.1e} ellipticity {:.1e} lipschitz {:.1e} ({})",
        report.dissipativity,
        report.monotonicity,
        report.ellipticity,
        report.lipschitz,
        if report.passed { "ok" } else { "FAILED" }
    ));
    ctx.write_json("assumptions.json", &serde_json::to_value(&report)?)?;
    Ok(report.passed)
}

fn moments(ctx: &Ctx) -> Result<bool> {
    const S: &str = "moments";
    let cfg = &ctx.cfg;
    let seed = ctx.seed(S)?;
    let n_steps = cfg.usize(S, "n_steps")?.unwrap_or(10_000);
    let n_paths = ctx.paths(S, 1_000)?;

    let model = model_from_config(cfg, S)?;
    let eta = match cfg.f64(S, "eta")? {
        Some(e) => e,
        None => model.claimed_constants().admissible_eta(),
    };
    let sgd_cfg = SgdConfig {
        eta,
        horizon_n: n_steps.max(2),
        x0: vector_or_zeros(cfg, S, "x0", model.dim())?,
        n_paths,
        sde_dt: None,
    };
    let sgd = moment_audit(
        &model,
        &sgd_cfg,
        n_steps,
        cfg.f64(S, "c_budget")?,
        &RngStream::new(seed, 0),
    )?;
    ctx.say(format!(
        "moments: sgd eta {eta:.3e} max E|w|^4 {:.4e} bound {:.4e} ({})",
        sgd.max_moment,
        sgd.bound,
        if sgd.flagged { "FLAGGED" } else { "ok" }
    ));

    let alpha = cfg.f64(S, "alpha")?.unwrap_or(1.5);
    let d = cfg.usize(S, "stable_d")?.unwrap_or(1);
    let stable_x0 = match cfg.list(S, "stable_x0")? {
        Some(v) => VectorState::new(v)?,
        None => VectorState::new(vec![1.0; d])?,
    };
    let stable_cfg = StableOuConfig::new(
        alpha,
        d,
        cfg.f64(S, "stable_eta")?.unwrap_or(0.5),
        2,
        stable_x0,
        n_paths,
    )?;
    let scaling = scaling_ratio_test(
        &stable_cfg,
        cfg.f64(S, "scale")?.unwrap_or(10.0),
        n_steps,
        cfg.f64(S, "multiple")?.unwrap_or(10.0),
        &RngStream::new(seed, 1),
    )?;
    ctx.say(format!(
        "  stable max E|Y| {:.4} (x0) {:.4} (scaled), ratio {:.3} vs linear {:.3} ({})",
        scaling.base.max_moment,
        scaling.scaled.max_moment,
        scaling.ratio,
        scaling.linear_ratio,
        if scaling.passed { "ok" } else { "FAILED" }
    ));
    let summary = json!({
        "seed": seed,
        "sgd": {
            "eta": eta,
            "admissible_eta": sgd.admissible_eta,
            "c_budget": sgd.c_budget,
            "bound": sgd.bound,
            "max_moment": sgd.max_moment,
            "flagged": sgd.flagged,
        },
        "stable": {
            "bound_base": scaling.base.bound,
            "bound_scaled": scaling.scaled.bound,
            "max_moment_base": scaling.base.max_moment,
            "max_moment_scaled": scaling.scaled.max_moment,
            "ratio": scaling.ratio,
            "linear_ratio": scaling.linear_ratio,
            "passed": scaling.passed,
        },
    });
    ctx.write_json("moments.json", &summary)?;
    Ok(!sgd.flagged && scaling.passed)
}
