//! Euler-Maruyama for the rotationally symmetric alpha-stable
//! Ornstein-Uhlenbeck process `dX = -X/alpha dt + dL_t`.
//!
//! The exact solution has law
//! `X_t = x e^{-t/alpha} + (1 - e^{-t})^{1/alpha} Z_1`, `Z_1` standard
//! alpha-stable, so the reference marginal is sampled without bias. The chain
//! replaces the stable increments by Pareto innovations:
//!
//! ```text
//! Y_{k+1} = Y_k (1 - eta/alpha) + eta^{1/alpha} / sigma * Z_{k+1}
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{fill_pareto, fill_stable, simulate_paths, RngStream, StableParams, StreamRng};
use crate::state::{norm, VectorState};
use crate::wasserstein::{SampleMeta, SampleSet};
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableOuConfig {
    pub params: StableParams,
    pub eta: f64,
    pub horizon_n: usize,
    pub x0: VectorState,
    pub n_paths: usize,
}

impl StableOuConfig {
    pub fn new(alpha: f64, dim: usize, eta: f64, horizon_n: usize, x0: VectorState, n_paths: usize) -> Result<Self> {
        let cfg = Self {
            params: StableParams::new(alpha, dim)?,
            eta,
            horizon_n,
            x0,
            n_paths,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::domain(format!("eta = {} must lie in (0, 1]", self.eta)));
        }
        if self.horizon_n < 2 {
            return Err(Error::domain(format!("N = {} must be at least 2", self.horizon_n)));
        }
        if self.n_paths == 0 {
            return Err(Error::domain("n_paths must be positive"));
        }
        self.x0.ensure_dim(self.params.dim)
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn physical_time(&self) -> f64 {
        self.eta * self.horizon_n as f64
    }

    /// Contraction factor `1 - eta/alpha` of one chain step.
    pub fn decay(&self) -> f64 {
        1.0 - self.eta / self.params.alpha
    }

    /// `eta^{1/alpha} / sigma`.
    pub fn innovation_scale(&self) -> f64 {
        self.eta.powf(1.0 / self.params.alpha) / self.params.sigma
    }
}

fn exact_into(params: &StableParams, x: &[f64], t: f64, rng: &mut StreamRng, out: &mut [f64]) {
    let a = params.alpha;
    let mean = (-t / a).exp();
    let scale = (-(-t).exp_m1()).powf(1.0 / a);
    fill_stable(rng, a, out);
    for (o, xi) in out.iter_mut().zip(x) {
        *o = xi * mean + scale * *o;
    }
}

/// One draw of the exact marginal `X_t` started at `x`.
pub fn exact_ou_marginal(params: &StableParams, x: &VectorState, t: f64, rng: &mut StreamRng) -> Result<VectorState> {
    x.ensure_dim(params.dim)?;
    if !(t >= 0.0) {
        return Err(Error::domain(format!("t = {t} must be non-negative")));
    }
    if t == 0.0 {
        return Ok(x.clone());
    }
    let mut out = vec![0.0; params.dim];
    exact_into(params, x, t, rng, &mut out);
    VectorState::new(out)
}

/// `y (1 - eta/alpha) + eta^{1/alpha}/sigma * z` for a given innovation `z`.
pub fn em_step_with(params: &StableParams, eta: f64, y: &VectorState, z: &[f64]) -> Result<VectorState> {
    y.ensure_dim(params.dim)?;
    if z.len() != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.dim,
            found: z.len(),
        });
    }
    let decay = 1.0 - eta / params.alpha;
    let scale = eta.powf(1.0 / params.alpha) / params.sigma;
    VectorState::new(y.iter().zip(z).map(|(yi, zi)| yi * decay + scale * zi).collect())
}

/// One chain step with a fresh Pareto innovation.
pub fn em_step(params: &StableParams, eta: f64, y: &VectorState, rng: &mut StreamRng) -> Result<VectorState> {
    let mut z = vec![0.0; params.dim];
    fill_pareto(rng, params.alpha, &mut z);
    em_step_with(params, eta, y, &z)
}

fn em_chain_into(cfg: &StableOuConfig, rng: &mut StreamRng, out: &mut [f64], z: &mut [f64]) {
    let decay = cfg.decay();
    let scale = cfg.innovation_scale();
    out.copy_from_slice(&cfg.x0);
    for _ in 0..cfg.horizon_n {
        fill_pareto(rng, cfg.params.alpha, z);
        for (o, zi) in out.iter_mut().zip(z.iter()) {
            *o = *o * decay + scale * zi;
        }
    }
}

/// `n_paths` draws of the exact marginal at time `eta N`.
pub fn sample_exact_marginal(cfg: &StableOuConfig, stream: &RngStream) -> Result<SampleSet> {
    cfg.validate()?;
    let t = cfg.physical_time();
    let data = simulate_paths(stream, cfg.n_paths, cfg.dim(), |rng, out| {
        exact_into(&cfg.params, &cfg.x0, t, rng, out);
    });
    SampleSet::from_flat(
        cfg.dim(),
        data,
        SampleMeta {
            seed: stream.seed,
            tag: "stable_exact".into(),
        },
    )
}

/// `n_paths` chain endpoints `Y_N`.
pub fn sample_em_marginal(cfg: &StableOuConfig, stream: &RngStream) -> Result<SampleSet> {
    cfg.validate()?;
    let d = cfg.dim();
    let data = simulate_paths(stream, cfg.n_paths, d, |rng, out| {
        let mut z = vec![0.0; d];
        em_chain_into(cfg, rng, out, &mut z);
    });
    SampleSet::from_flat(
        d,
        data,
        SampleMeta {
            seed: stream.seed,
            tag: "stable_em".into(),
        },
    )
}

/// Independent draws of `L(X_{eta N})` (first) and `L(Y_N)` (second).
pub fn simulate_pair_marginals(cfg: &StableOuConfig, stream: &RngStream) -> Result<(SampleSet, SampleSet)> {
    let exact = sample_exact_marginal(cfg, &stream.substream(0))?;
    let chain = sample_em_marginal(cfg, &stream.substream(1))?;
    Ok((exact, chain))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmMomentAudit {
    /// Monte Carlo `E |Y_k|` for `k = 0..=n_steps`.
    pub first_moments: Vec<f64>,
    /// Averages of `first_moments[1..]` over consecutive blocks of
    /// `block_len` steps. A single huge innovation moves one per-step mean a
    /// lot but a block mean little, so the flag looks at these.
    pub block_means: Vec<f64>,
    pub block_len: usize,
    /// `multiple * (1 + |x0|)`.
    pub bound: f64,
    /// Largest of `first_moments[0]` and the block means.
    pub max_moment: f64,
    pub flagged: bool,
}

/// Running `E |Y_k|` over `n_steps` chain steps; flags if a block mean (or
/// the starting value) exceeds `multiple * (1 + |x0|)`.
pub fn em_moment_audit(
    cfg: &StableOuConfig,
    n_steps: usize,
    multiple: f64,
    stream: &RngStream,
) -> Result<EmMomentAudit> {
    cfg.validate()?;
    em_audit(cfg, n_steps, multiple, stream, true)
}

/// The same audit with the innovations switched off: `|Y_k| = (1-eta/alpha)^k |x0|`.
pub fn em_moment_audit_deterministic(cfg: &StableOuConfig, n_steps: usize, multiple: f64) -> Result<EmMomentAudit> {
    cfg.validate()?;
    em_audit(cfg, n_steps, multiple, &RngStream::new(0, 0), false)
}

fn em_audit(
    cfg: &StableOuConfig,
    n_steps: usize,
    multiple: f64,
    stream: &RngStream,
    noisy: bool,
) -> Result<EmMomentAudit> {
    if !(multiple > 0.0) {
        return Err(Error::domain("multiple must be positive"));
    }
    let d = cfg.dim();
    let decay = cfg.decay();
    let scale = cfg.innovation_scale();
    let chunk = crate::sampling::PATH_CHUNK;
    let n_paths = if noisy { cfg.n_paths } else { 1 };
    let partial: Vec<Vec<f64>> = (0..n_paths.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut rng = stream.substream(c as u64).rng();
            let mut sums = vec![0.0; n_steps + 1];
            let mut y = vec![0.0; d];
            let mut z = vec![0.0; d];
            for _ in 0..chunk.min(n_paths - c * chunk) {
                y.copy_from_slice(&cfg.x0);
                sums[0] += norm(&y);
                for s in sums.iter_mut().skip(1) {
                    if noisy {
                        fill_pareto(&mut rng, cfg.params.alpha, &mut z);
                    }
                    for (yi, zi) in y.iter_mut().zip(&z) {
                        *yi = *yi * decay + scale * zi;
                    }
                    *s += norm(&y);
                }
            }
            sums
        })
        .collect();
    let mut first = vec![0.0; n_steps + 1];
    for p in &partial {
        first.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    first.iter_mut().for_each(|v| *v /= n_paths as f64);
    let bound = multiple * (1.0 + cfg.x0.norm());
    let block_len = (n_steps / 100).max(1);
    let block_means: Vec<f64> = first[1..]
        .chunks(block_len)
        .map(|b| b.iter().sum::<f64>() / b.len() as f64)
        .collect();
    let max_moment = block_means.iter().copied().fold(first[0], f64::max);
    Ok(EmMomentAudit {
        flagged: !(max_moment <= bound),
        first_moments: first,
        block_means,
        block_len,
        bound,
        max_moment,
    })
}

/// Two audits, from `x0` and from `scale * x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCheck {
    pub base: EmMomentAudit,
    pub scaled: EmMomentAudit,
    /// `max E|Y_k|` from the scaled start over the same from `x0`.
    pub ratio: f64,
    /// `(1 + scale |x0|) / (1 + |x0|)`: the ratio under exactly linear growth.
    pub linear_ratio: f64,
    /// `ratio <= 2 linear_ratio` and neither audit flagged.
    pub passed: bool,
}

pub fn scaling_ratio_test(
    cfg: &StableOuConfig,
    scale: f64,
    n_steps: usize,
    multiple: f64,
    stream: &RngStream,
) -> Result<ScalingCheck> {
    if !(scale > 0.0) {
        return Err(Error::domain("scale must be positive"));
    }
    let base = em_moment_audit(cfg, n_steps, multiple, &stream.substream(0))?;
    let mut scaled_cfg = cfg.clone();
    scaled_cfg.x0 = VectorState::new(cfg.x0.iter().map(|v| v * scale).collect())?;
    let scaled = em_moment_audit(&scaled_cfg, n_steps, multiple, &stream.substream(1))?;
    let ratio = scaled.max_moment / base.max_moment;
    let x = cfg.x0.norm();
    let linear_ratio = (1.0 + scale * x) / (1.0 + x);
    Ok(ScalingCheck {
        passed: ratio <= 2.0 * linear_ratio && !base.flagged && !scaled.flagged,
        ratio,
        linear_ratio,
        base,
        scaled,
    })
}
