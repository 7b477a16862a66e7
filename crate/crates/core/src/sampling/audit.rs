//! Distributional checks of the stable and Pareto samplers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fill_pareto, fill_stable, simulate_paths, RngStream, StableParams};
use crate::error::{Error, Result};
use crate::state::norm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfPoint {
    pub alpha: f64,
    pub dim: usize,
    pub lambda_norm: f64,
    pub empirical: f64,
    pub exact: f64,
    /// `3 M^{-1/2}`.
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare `E cos<lambda, Z_1>` over `m` draws with `exp(-|lambda|^alpha)`
/// for each `|lambda|` in `lambda_norms`. `lambda` points along a fixed unit
/// vector; the law is rotationally symmetric so the direction is arbitrary.
pub fn stable_cf_audit(
    params: &StableParams,
    lambda_norms: &[f64],
    m: usize,
    stream: &RngStream,
) -> Result<Vec<CfPoint>> {
    if m == 0 {
        return Err(Error::domain("m must be positive"));
    }
    let d = params.dim;
    let draws = simulate_paths(stream, m, d, |rng, out| fill_stable(rng, params.alpha, out));
    let mut dir: Vec<f64> = (0..d).map(|i| 1.0 + 0.5 * i as f64).collect();
    let n = norm(&dir);
    dir.iter_mut().for_each(|v| *v /= n);
    let tolerance = 3.0 / (m as f64).sqrt();
    Ok(lambda_norms
        .iter()
        .map(|&l| {
            let sum: f64 = draws
                .par_chunks(d * 4096)
                .map(|c| {
                    c.chunks_exact(d)
                        .map(|z| (l * z.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>()).cos())
                        .sum::<f64>()
                })
                .collect::<Vec<_>>()
                .iter()
                .sum();
            let empirical = sum / m as f64;
            let exact = (-l.abs().powf(params.alpha)).exp();
            CfPoint {
                alpha: params.alpha,
                dim: d,
                lambda_norm: l,
                empirical,
                exact,
                tolerance,
                passed: (empirical - exact).abs() <= tolerance,
            }
        })
        .collect())
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.3 {
        // series below converges slowly; the survival is 1 to double precision
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoAudit {
    pub alpha: f64,
    pub dim: usize,
    pub m: usize,
    /// KS distance between the radius sample and `1 - r^{-alpha}`.
    pub ks_statistic: f64,
    pub p_value: f64,
    /// Draws with `|z| <= 1`.
    pub support_violations: usize,
    /// Largest coordinate of the mean unit direction, and its `4 (d/M)^{1/2}` band.
    pub direction_mean_max: f64,
    pub direction_band: f64,
    pub passed: bool,
}

/// Kolmogorov-Smirnov test of the radius law at level `level`, support and
/// direction-centering checks on `m` Pareto draws.
pub fn pareto_audit(params: &StableParams, m: usize, level: f64, stream: &RngStream) -> Result<ParetoAudit> {
    if m == 0 {
        return Err(Error::domain("m must be positive"));
    }
    let d = params.dim;
    let alpha = params.alpha;
    let draws = simulate_paths(stream, m, d, |rng, out| fill_pareto(rng, alpha, out));
    let mut radii: Vec<f64> = draws.chunks_exact(d).map(norm).collect();
    let support_violations = radii.iter().filter(|r| !(**r > 1.0)).count();
    let mut dir_mean = vec![0.0; d];
    for (z, r) in draws.chunks_exact(d).zip(&radii) {
        dir_mean.iter_mut().zip(z).for_each(|(a, b)| *a += b / r);
    }
    let mf = m as f64;
    let direction_mean_max = dir_mean.iter().map(|v| (v / mf).abs()).fold(0.0, f64::max);
    let direction_band = 4.0 * (d as f64 / mf).sqrt();

    radii.sort_by(f64::total_cmp);
    let mut ks = 0.0f64;
    for (i, r) in radii.iter().enumerate() {
        let f = 1.0 - r.powf(-alpha);
        ks = ks.max((i as f64 + 1.0) / mf - f).max(f - i as f64 / mf);
    }
    let sq = mf.sqrt();
    let p_value = kolmogorov_survival((sq + 0.12 + 0.11 / sq) * ks);
    Ok(ParetoAudit {
        alpha,
        dim: d,
        m,
        ks_statistic: ks,
        p_value,
        support_violations,
        direction_mean_max,
        direction_band,
        passed: p_value >= level && support_violations == 0 && direction_mean_max <= direction_band,
    })
}
