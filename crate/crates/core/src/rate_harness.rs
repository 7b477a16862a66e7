//! Parameter sweeps, log-log rate fits and result files.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::chain_compare::{FiniteChainPair, TestFunction};
use crate::error::{Error, Result};
use crate::normal_clt::{self, CltConfig, Innovation};
use crate::sampling::RngStream;
use crate::sgd_diffusion::{self, QuadraticModel, SgdConfig};
use crate::stable_ou::{self, StableOuConfig};
use crate::state::VectorState;
use crate::wasserstein::{estimate_with_stderr, sliced_calibration, Estimator, SampleSet, W1Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Sgd,
    Stable,
    Clt,
    Framework,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Sgd => "sgd",
            Experiment::Stable => "stable",
            Experiment::Clt => "clt",
            Experiment::Framework => "framework",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Ok(match s {
            "sgd" => Experiment::Sgd,
            "stable" => Experiment::Stable,
            "clt" => Experiment::Clt,
            "framework" => Experiment::Framework,
            other => return Err(Error::Config(format!("unknown experiment `{other}`"))),
        })
    }
}

/// Which quantity of the stable experiment the grid varies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StableAxis {
    /// Grid over `eta`, physical time `t = eta N` held fixed.
    Eta { t: f64 },
    /// Grid over `N`, `eta` held fixed.
    Horizon { eta: f64 },
}

/// Settings held constant across the grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Fixed {
    /// Grid over `eta` with `t = eta N` fixed.
    Sgd {
        model: QuadraticModel,
        x0: VectorState,
        t: f64,
        sde_dt: Option<f64>,
    },
    Stable {
        alpha: f64,
        dim: usize,
        x0: VectorState,
        axis: StableAxis,
    },
    /// Grid over `n`.
    Clt {
        dim: usize,
        innovation: Innovation,
        n_proj: usize,
    },
    /// Grid over the horizon `N`; each point checks the identity on `trials`
    /// random chain pairs with at most `max_states` states.
    Framework { trials: usize, max_states: usize },
}

impl Fixed {
    pub fn experiment(&self) -> Experiment {
        match self {
            Fixed::Sgd { .. } => Experiment::Sgd,
            Fixed::Stable { .. } => Experiment::Stable,
            Fixed::Clt { .. } => Experiment::Clt,
            Fixed::Framework { .. } => Experiment::Framework,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub fixed: Fixed,
    pub grid: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    /// Estimator override; by default exact 1-D, coordinate sum for the SGD
    /// experiment and sliced otherwise.
    pub w1_method: Option<W1Method>,
    pub resamples: usize,
}

impl SweepSpec {
    pub fn new(fixed: Fixed, grid: Vec<f64>, n_paths: usize, seed: u64) -> Result<Self> {
        let spec = Self {
            fixed,
            grid,
            n_paths,
            seed,
            w1_method: None,
            resamples: 200,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn experiment(&self) -> Experiment {
        self.fixed.experiment()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.len() < 4 {
            return Err(Error::Config(format!(
                "a sweep needs at least 4 grid points, got {}",
                self.grid.len()
            )));
        }
        let up = self.grid.windows(2).all(|w| w[0] < w[1]);
        let down = self.grid.windows(2).all(|w| w[0] > w[1]);
        if !(up || down) {
            return Err(Error::Config("grid must be strictly monotone".into()));
        }
        if self.grid.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Config("grid values must be positive".into()));
        }
        if self.n_paths < 2 {
            return Err(Error::Config("n_paths must be at least 2".into()));
        }
        if self.resamples < 50 {
            return Err(Error::Config("resamples must be at least 50".into()));
        }
        Ok(())
    }

    fn estimator(&self, dim: usize) -> Estimator {
        let sliced = Estimator::Sliced {
            n_proj: match &self.fixed {
                Fixed::Clt { n_proj, .. } => *n_proj,
                _ => 64,
            },
            stream: RngStream::new(self.seed, u64::MAX),
        };
        match self.w1_method {
            Some(W1Method::Exact1d) => Estimator::Exact1d,
            Some(W1Method::Assignment) => Estimator::Assignment,
            Some(W1Method::Sliced) => sliced,
            Some(W1Method::CoordinateSum) => Estimator::CoordinateSum,
            None if dim == 1 => Estimator::Exact1d,
            None if self.experiment() == Experiment::Sgd => Estimator::CoordinateSum,
            None => sliced,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub w1: f64,
    pub stderr: f64,
    /// Estimated distance between two independent samples of the reference
    /// law at this grid point.
    pub floor: f64,
    /// `w1 < 2 floor`: excluded from rate fits.
    pub flagged: bool,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub experiment: Experiment,
    pub rows: Vec<SweepRow>,
}

fn int_param(p: f64, what: &str) -> Result<usize> {
    if p.fract() != 0.0 || p < 1.0 {
        return Err(Error::Config(format!(
            "{what} grid value {p} must be a positive integer"
        )));
    }
    Ok(p as usize)
}

fn point_context(param: f64) -> impl FnOnce(Error) -> Error {
    move |e| Error::GridPoint {
        param,
        source: Box::new(e),
    }
}

/// Run every grid point. Point `i` draws from `RngStream::new(seed, i)`.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepTable> {
    spec.validate()?;
    let rows = spec
        .grid
        .iter()
        .enumerate()
        .map(|(i, &p)| run_point(spec, p, &RngStream::new(spec.seed, i as u64)).map_err(point_context(p)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        experiment: spec.experiment(),
        rows,
    })
}

fn measure(
    spec: &SweepSpec,
    a: &SampleSet,
    b: &SampleSet,
    reference: (&SampleSet, &SampleSet),
    stream: &RngStream,
) -> Result<(f64, f64, f64)> {
    let est = spec.estimator(a.dim());
    let w = estimate_with_stderr(a, b, &est, spec.resamples, &stream.substream(10))?;
    let floor = est.estimate(reference.0, reference.1)?.value;
    Ok((w.value, w.stderr, floor))
}

fn run_point(spec: &SweepSpec, p: f64, stream: &RngStream) -> Result<SweepRow> {
    let (w1, stderr, floor) = match &spec.fixed {
        Fixed::Sgd { model, x0, t, sde_dt } => {
            let horizon_n = (t / p).round() as usize;
            let cfg = SgdConfig {
                eta: p,
                horizon_n,
                x0: x0.clone(),
                n_paths: spec.n_paths,
                sde_dt: *sde_dt,
            };
            let (sgd, sde) = sgd_diffusion::simulate_pair_marginals(model, &cfg, stream)?;
            let sde2 = sgd_diffusion::sample_sde_marginal(model, &cfg, &stream.substream(2))?;
            measure(spec, &sgd, &sde, (&sde, &sde2), stream)?
        }
        Fixed::Stable { alpha, dim, x0, axis } => {
            let (eta, horizon_n) = match *axis {
                StableAxis::Eta { t } => (p, (t / p).round() as usize),
                StableAxis::Horizon { eta } => (eta, int_param(p, "N")?),
            };
            let cfg = StableOuConfig::new(*alpha, *dim, eta, horizon_n, x0.clone(), spec.n_paths)?;
            let (exact, em) = stable_ou::simulate_pair_marginals(&cfg, stream)?;
            let exact2 = stable_ou::sample_exact_marginal(&cfg, &stream.substream(2))?;
            measure(spec, &em, &exact, (&exact, &exact2), stream)?
        }
        Fixed::Clt { dim, innovation, .. } => {
            let n = int_param(p, "n")?;
            CltConfig::new(*dim, *innovation, vec![n], spec.n_paths)?;
            let sums = normal_clt::sample_partial_sums(*innovation, *dim, n, spec.n_paths, &stream.substream(0))?;
            let gauss = normal_clt::sample_gaussian(*dim, spec.n_paths, &stream.substream(1))?;
            let gauss2 = normal_clt::sample_gaussian(*dim, spec.n_paths, &stream.substream(2))?;
            measure(spec, &sums, &gauss, (&gauss, &gauss2), stream)?
        }
        Fixed::Framework { trials, max_states } => {
            let n = int_param(p, "N")?;
            if n < 2 {
                return Err(Error::Config("framework horizon must be at least 2".into()));
            }
            let mut rng = stream.rng();
            let mut worst = 0.0f64;
            for _ in 0..*trials {
                let s = rng.random_range(1..=*max_states);
                let pair = FiniteChainPair::random(&mut rng, s, n)?;
                let h = TestFunction::new((0..s).map(|_| rng.random_range(-1.0..1.0)).collect())?;
                for x in 0..s {
                    worst = worst.max((pair.lhs(&h, x)? - pair.rhs_telescope(&h, x)?).abs());
                }
            }
            (worst, 0.0, 0.0)
        }
    };
    Ok(SweepRow {
        param: p,
        w1,
        stderr,
        floor,
        flagged: w1 < 2.0 * floor,
        n_paths: spec.n_paths,
        seed: spec.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogCorrection {
    None,
    Divide1PlusLog,
}

impl LogCorrection {
    fn apply(&self, param: f64, w1: f64) -> f64 {
        match self {
            LogCorrection::None => w1,
            LogCorrection::Divide1PlusLog => w1 / (1.0 + param.ln().abs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    /// 95% confidence half-width of the slope.
    pub half_width: f64,
    pub log_correction: LogCorrection,
    pub n_points: usize,
}

/// OLS of `log w1` (optionally divided by `1 + |log param|`) on `log param`.
/// Needs at least three points.
pub fn fit_points(points: &[(f64, f64)], correction: LogCorrection) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::domain(format!(
            "a rate fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some((p, w)) = points.iter().find(|(p, w)| !(*w > 0.0 && *p > 0.0)) {
        return Err(Error::NonPositive { param: *p, value: *w });
    }
    let xs: Vec<f64> = points.iter().map(|(p, _)| p.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(p, w)| correction.apply(p, w).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("all grid values coincide"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - intercept - slope * x).collect();
    let dof = n - 2.0;
    let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / dof;
    let se = (s2 / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::domain(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(RateFit {
        slope,
        intercept,
        residuals,
        half_width: t * se,
        log_correction: correction,
        n_points: points.len(),
    })
}

/// Fit the unflagged rows of `table`.
pub fn fit_rate(table: &SweepTable, correction: LogCorrection) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter(|r| !r.flagged)
        .map(|r| (r.param, r.w1))
        .collect();
    fit_points(&pts, correction)
}

/// Envelope `w1 <= C param^exponent (1 + |ln param|)` (the log factor only
/// with [`LogCorrection::Divide1PlusLog`]), with `C` calibrated at the
/// largest grid value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub c: f64,
    pub exponent: f64,
    /// `w1 / envelope` per row.
    pub ratios: Vec<f64>,
    pub all_below: bool,
}

pub fn envelope_check(table: &SweepTable, exponent: f64, correction: LogCorrection) -> Result<EnvelopeCheck> {
    let shape = |p: f64| correction.apply(p, 1.0).recip() * p.powf(exponent);
    let top = table
        .rows
        .iter()
        .max_by(|a, b| a.param.total_cmp(&b.param))
        .ok_or(Error::EmptySample)?;
    let c = top.w1 / shape(top.param);
    let ratios: Vec<f64> = table.rows.iter().map(|r| r.w1 / (c * shape(r.param))).collect();
    // the calibration point itself sits at ratio 1 up to rounding
    let all_below = ratios.iter().all(|r| *r <= 1.0 + 1e-12);
    Ok(EnvelopeCheck {
        c,
        exponent,
        ratios,
        all_below,
    })
}

/// `w1` strictly decreases as the parameter decreases, over unflagged rows.
pub fn decreasing_with_param(table: &SweepTable) -> bool {
    let mut rows: Vec<&SweepRow> = table.rows.iter().filter(|r| !r.flagged).collect();
    rows.sort_by(|a, b| b.param.total_cmp(&a.param));
    rows.windows(2).all(|w| w[1].w1 < w[0].w1)
}

/// No growth along the grid: `max w1 <= 2 min w1 + 4 max stderr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCheck {
    pub max_w1: f64,
    pub min_w1: f64,
    pub max_stderr: f64,
    pub passed: bool,
}

pub fn band_check(table: &SweepTable) -> Result<BandCheck> {
    if table.rows.is_empty() {
        return Err(Error::EmptySample);
    }
    let max_w1 = table.rows.iter().map(|r| r.w1).fold(f64::NEG_INFINITY, f64::max);
    let min_w1 = table.rows.iter().map(|r| r.w1).fold(f64::INFINITY, f64::min);
    let max_stderr = table.rows.iter().map(|r| r.stderr).fold(0.0, f64::max);
    Ok(BandCheck {
        max_w1,
        min_w1,
        max_stderr,
        passed: max_w1 <= 2.0 * min_w1 + 4.0 * max_stderr,
    })
}

/// Acceptance window for a fitted slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateTarget {
    pub expected: f64,
    pub lo: f64,
    pub hi: f64,
}

impl RateTarget {
    pub fn symmetric(expected: f64, tolerance: f64) -> Self {
        Self {
            expected,
            lo: expected - tolerance,
            hi: expected + tolerance,
        }
    }

    pub fn accepts(&self, slope: f64) -> bool {
        self.lo <= slope && slope <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: Experiment,
    pub fit: Option<RateFit>,
    pub expected_exponent: Option<f64>,
    pub window: Option<[f64; 2]>,
    pub pass: Option<bool>,
    pub flagged_params: Vec<f64>,
    pub floors: Vec<f64>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Summary {
    pub fn new(table: &SweepTable, fit: Option<RateFit>, target: Option<RateTarget>) -> Self {
        let pass = match (&fit, &target) {
            (Some(f), Some(t)) => Some(t.accepts(f.slope)),
            // a target without a fit (too few usable points) cannot pass
            (None, Some(_)) => Some(false),
            _ => None,
        };
        Self {
            experiment: table.experiment,
            expected_exponent: target.map(|t| t.expected),
            window: target.map(|t| [t.lo, t.hi]),
            pass,
            fit,
            flagged_params: table.rows.iter().filter(|r| r.flagged).map(|r| r.param).collect(),
            floors: table.rows.iter().map(|r| r.floor).collect(),
            extra: serde_json::Map::new(),
        }
    }
}

/// Measured CLT distances against the explicit bound, one entry per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCompliance {
    /// Factor applied to sliced distances (1 for the other estimators).
    pub calibration: f64,
    pub bounds: Vec<f64>,
    /// `calibration * (w1 - 3 stderr - floor) <= bound`.
    pub within: Vec<bool>,
}

impl BoundCompliance {
    pub fn all_within(&self) -> bool {
        self.within.iter().all(|w| *w)
    }
}

/// Compare each row of a CLT sweep with the explicit bound. In `d >= 2` the
/// sliced proxy underestimates the Euclidean distance, so it is first scaled
/// by its ratio to exact matching on `reps` subsamples of `size` points at
/// the first grid value.
pub fn clt_bound_compliance(spec: &SweepSpec, table: &SweepTable, size: usize, reps: usize) -> Result<BoundCompliance> {
    let Fixed::Clt {
        dim,
        innovation,
        n_proj,
    } = spec.fixed
    else {
        return Err(Error::Config("bound compliance applies to the clt experiment".into()));
    };
    let calibration = if !matches!(spec.estimator(dim), Estimator::Sliced { .. }) {
        1.0
    } else {
        let n0 = spec.grid[0] as usize;
        let stream = RngStream::new(spec.seed, u64::MAX - 1);
        let a = normal_clt::sample_partial_sums(innovation, dim, n0, size * reps, &stream.substream(0))?;
        let b = normal_clt::sample_gaussian(dim, size * reps, &stream.substream(1))?;
        sliced_calibration(&a, &b, n_proj, size, reps, &stream.substream(2))?
    };
    let moments = normal_clt::bound_moments(innovation, dim);
    let mut bounds = Vec::with_capacity(table.rows.len());
    let mut within = Vec::with_capacity(table.rows.len());
    for r in &table.rows {
        let b = normal_clt::theorem_bound(dim, r.param as usize, &moments)?;
        within.push(calibration * r.w1 <= b + calibration * (3.0 * r.stderr + r.floor));
        bounds.push(b);
    }
    Ok(BoundCompliance {
        calibration,
        bounds,
        within,
    })
}

/// Paths written by [`emit`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emitted {
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Write `<dir>/<experiment>.csv` and `<dir>/<experiment>.json`.
pub fn emit(table: &SweepTable, summary: &Summary, dir: &Path) -> Result<Emitted> {
    if table.rows.is_empty() {
        return Err(Error::EmptySample);
    }
    fs::create_dir_all(dir)?;
    let name = table.experiment.name();
    let csv_path = dir.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["experiment", "param", "w1", "stderr", "n_paths", "seed"])?;
    for r in &table.rows {
        w.write_record([
            name.to_string(),
            r.param.to_string(),
            r.w1.to_string(),
            r.stderr.to_string(),
            r.n_paths.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    let json_path = dir.join(format!("{name}.json"));
    fs::write(&json_path, serde_json::to_string_pretty(summary)? + "\n")?;
    Ok(Emitted {
        csv: csv_path,
        json: json_path,
    })
}

/// One parsed CSV line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRecord {
    pub experiment: String,
    pub param: f64,
    pub w1: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl From<(&SweepTable, &SweepRow)> for CsvRecord {
    fn from((t, r): (&SweepTable, &SweepRow)) -> Self {
        CsvRecord {
            experiment: t.experiment.name().into(),
            param: r.param,
            w1: r.w1,
            stderr: r.stderr,
            n_paths: r.n_paths,
            seed: r.seed,
        }
    }
}

pub fn read_table_csv(path: &Path) -> Result<Vec<CsvRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}
