//! Normalized partial sums `S_n = n^{-1/2} sum xi_i` of i.i.d. standardized
//! vectors against the standard Gaussian `B ~ N(0, I_d)`, with the explicit
//! bound
//!
//! ```text
//! W1(L(B), L(S_n)) <= [(2d/3 + 1) E|B| + E|xi|^3 / 3 + E|xi|] n^{-1/2} (1 + ln n)
//! ```

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{ln_gamma, simulate_paths, RngStream};
use crate::state::{norm, VectorState};
use crate::wasserstein::{estimate_with_stderr, Estimator, SampleMeta, SampleSet};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Standardized innovation laws: each coordinate is independent with mean 0
/// and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Innovation {
    /// Uniform on `{-1, 1}`.
    Rademacher,
    /// Uniform on `[-sqrt 3, sqrt 3]`.
    UniformScaled,
    /// `E - 1` with `E ~ Exp(1)`.
    CenteredExponential,
    /// Standard Gaussian; `S_n` is then exactly `N(0, I_d)`.
    Gaussian,
}

impl Innovation {
    pub fn name(&self) -> &'static str {
        match self {
            Innovation::Rademacher => "rademacher",
            Innovation::UniformScaled => "uniform_scaled",
            Innovation::CenteredExponential => "centered_exponential",
            Innovation::Gaussian => "gaussian",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "rademacher" => Innovation::Rademacher,
            "uniform_scaled" => Innovation::UniformScaled,
            "centered_exponential" => Innovation::CenteredExponential,
            "gaussian" => Innovation::Gaussian,
            other => return Err(Error::Config(format!("unknown innovation `{other}`"))),
        })
    }

    /// Add `n` draws of this law to every coordinate of `acc`.
    fn accumulate<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, acc: &mut [f64]) {
        match self {
            Innovation::Rademacher => {
                // count set bits: each is one +1 sign
                for a in acc.iter_mut() {
                    let mut ones = 0u32;
                    let mut left = n;
                    while left >= 64 {
                        ones += rng.random::<u64>().count_ones();
                        left -= 64;
                    }
                    if left > 0 {
                        ones += (rng.random::<u64>() >> (64 - left)).count_ones();
                    }
                    *a += 2.0 * f64::from(ones) - n as f64;
                }
            }
            Innovation::UniformScaled => {
                for a in acc.iter_mut() {
                    let mut s = 0.0;
                    for _ in 0..n {
                        s += rng.random_range(-SQRT3..SQRT3);
                    }
                    *a += s;
                }
            }
            Innovation::CenteredExponential => {
                for a in acc.iter_mut() {
                    let mut s = 0.0;
                    for _ in 0..n {
                        s += rng.sample::<f64, _>(Exp1);
                    }
                    *a += s - n as f64;
                }
            }
            Innovation::Gaussian => {
                for a in acc.iter_mut() {
                    let mut s = 0.0;
                    for _ in 0..n {
                        s += rng.sample::<f64, _>(StandardNormal);
                    }
                    *a += s;
                }
            }
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        self.accumulate(rng, 1, &mut v);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltConfig {
    pub dim: usize,
    pub innovation: Innovation,
    pub n_grid: Vec<usize>,
    pub n_paths: usize,
    /// Bootstrap resamples behind each standard error.
    pub resamples: usize,
    /// Projections of the sliced estimator used when `dim >= 2`.
    pub n_proj: usize,
}

impl CltConfig {
    pub fn new(dim: usize, innovation: Innovation, n_grid: Vec<usize>, n_paths: usize) -> Result<Self> {
        let cfg = Self {
            dim,
            innovation,
            n_grid,
            n_paths,
            resamples: 100,
            n_proj: 64,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if self.n_paths < 2 {
            return Err(Error::domain("n_paths must be at least 2"));
        }
        if self.n_grid.contains(&0) {
            return Err(Error::domain("every n in the grid must be at least 1"));
        }
        Ok(())
    }

    /// Estimator used by [`measure_gap`]: exact in one dimension, sliced with a
    /// fixed projection seed otherwise.
    pub fn estimator(&self) -> Estimator {
        if self.dim == 1 {
            Estimator::Exact1d
        } else {
            Estimator::Sliced {
                n_proj: self.n_proj,
                stream: RngStream::new(0x51ce, 0),
            }
        }
    }
}

/// One draw of `S_n`.
pub fn partial_sum<R: Rng + ?Sized>(innovation: Innovation, dim: usize, n: usize, rng: &mut R) -> Result<VectorState> {
    if n == 0 {
        return Err(Error::domain("n must be at least 1"));
    }
    if dim == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let mut acc = vec![0.0; dim];
    innovation.accumulate(rng, n, &mut acc);
    let k = 1.0 / (n as f64).sqrt();
    acc.iter_mut().for_each(|a| *a *= k);
    VectorState::new(acc)
}

/// `n_paths` independent draws of `S_n`.
pub fn sample_partial_sums(
    innovation: Innovation,
    dim: usize,
    n: usize,
    n_paths: usize,
    stream: &RngStream,
) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::domain("n must be at least 1"));
    }
    let k = 1.0 / (n as f64).sqrt();
    let data = simulate_paths(stream, n_paths, dim, |rng, out| {
        out.iter_mut().for_each(|v| *v = 0.0);
        innovation.accumulate(rng, n, out);
        out.iter_mut().for_each(|v| *v *= k);
    });
    SampleSet::from_flat(
        dim,
        data,
        SampleMeta {
            seed: stream.seed,
            tag: format!("clt_{}_{n}", innovation.name()),
        },
    )
}

pub fn sample_gaussian(dim: usize, n_paths: usize, stream: &RngStream) -> Result<SampleSet> {
    let data = simulate_paths(stream, n_paths, dim, |rng, out| {
        crate::sampling::fill_gaussian(rng, out)
    });
    SampleSet::from_flat(
        dim,
        data,
        SampleMeta {
            seed: stream.seed,
            tag: "gaussian".into(),
        },
    )
}

/// `E|B|` for `B ~ N(0, I_d)`: `sqrt 2 Gamma((d+1)/2) / Gamma(d/2)`.
pub fn gaussian_abs_mean(dim: usize) -> f64 {
    let d = dim as f64;
    2f64.sqrt() * (ln_gamma((d + 1.0) / 2.0) - ln_gamma(d / 2.0)).exp()
}

/// The moments entering the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundMoments {
    pub gaussian_abs: f64,
    pub xi_abs3: f64,
    pub xi_abs: f64,
}

pub fn theorem_bound(dim: usize, n: usize, m: &BoundMoments) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("n must be at least 1"));
    }
    let d = dim as f64;
    let nf = n as f64;
    let lead = (2.0 * d / 3.0 + 1.0) * m.gaussian_abs + m.xi_abs3 / 3.0 + m.xi_abs;
    Ok(lead / nf.sqrt() * (1.0 + nf.ln()))
}

/// `(E|xi|, E|xi|^3)`. Closed form in one dimension and for the Rademacher and
/// Gaussian laws; otherwise a fixed-seed Monte Carlo average over 10^6 draws.
pub fn innovation_moments(innovation: Innovation, dim: usize) -> (f64, f64) {
    let e = std::f64::consts::E;
    match (innovation, dim) {
        (Innovation::Rademacher, _) => {
            let r = (dim as f64).sqrt();
            (r, r * r * r)
        }
        (Innovation::Gaussian, _) => {
            let d = dim as f64;
            let m = |p: f64| (0.5 * p * 2f64.ln() + ln_gamma((d + p) / 2.0) - ln_gamma(d / 2.0)).exp();
            (m(1.0), m(3.0))
        }
        (Innovation::UniformScaled, 1) => (SQRT3 / 2.0, 3.0 * SQRT3 / 4.0),
        (Innovation::CenteredExponential, 1) => (2.0 / e, 12.0 / e - 2.0),
        _ => {
            const DRAWS: usize = 1_000_000;
            let mut rng = RngStream::new(0x3e3e, dim as u64).rng();
            let (mut m1, mut m3) = (0.0, 0.0);
            let mut v = vec![0.0; dim];
            for _ in 0..DRAWS {
                v.iter_mut().for_each(|x| *x = 0.0);
                innovation.accumulate(&mut rng, 1, &mut v);
                let r = norm(&v);
                m1 += r;
                m3 += r * r * r;
            }
            (m1 / DRAWS as f64, m3 / DRAWS as f64)
        }
    }
}

pub fn bound_moments(innovation: Innovation, dim: usize) -> BoundMoments {
    let (xi_abs, xi_abs3) = innovation_moments(innovation, dim);
    BoundMoments {
        gaussian_abs: gaussian_abs_mean(dim),
        xi_abs3,
        xi_abs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapMeasurement {
    pub n: usize,
    pub w1: f64,
    pub stderr: f64,
    /// Estimated distance between two independent Gaussian samples of the
    /// same size.
    pub floor: f64,
    pub bound: f64,
    /// `w1 <= bound + 3 stderr + floor`.
    pub within_bound: bool,
}

/// Measure `W1(L(S_n), N(0, I_d))` from `n_paths` draws of each law.
pub fn measure_gap(cfg: &CltConfig, n: usize, stream: &RngStream) -> Result<GapMeasurement> {
    cfg.validate()?;
    if !cfg.n_grid.contains(&n) {
        return Err(Error::domain(format!("n = {n} is not in the configured grid")));
    }
    let est = cfg.estimator();
    let sums = sample_partial_sums(cfg.innovation, cfg.dim, n, cfg.n_paths, &stream.substream(0))?;
    let gauss = sample_gaussian(cfg.dim, cfg.n_paths, &stream.substream(1))?;
    let w = estimate_with_stderr(&sums, &gauss, &est, cfg.resamples, &stream.substream(2))?;
    let floor = same_law_floor(cfg, stream)?;
    let bound = theorem_bound(cfg.dim, n, &bound_moments(cfg.innovation, cfg.dim))?;
    Ok(GapMeasurement {
        n,
        w1: w.value,
        stderr: w.stderr,
        floor,
        bound,
        within_bound: w.value <= bound + 3.0 * w.stderr + floor,
    })
}

/// Empirical W1 between two independent standard Gaussian samples of size
/// `n_paths`.
pub fn same_law_floor(cfg: &CltConfig, stream: &RngStream) -> Result<f64> {
    let a = sample_gaussian(cfg.dim, cfg.n_paths, &stream.substream(3))?;
    let b = sample_gaussian(cfg.dim, cfg.n_paths, &stream.substream(4))?;
    Ok(cfg.estimator().estimate(&a, &b)?.value)
}
