//! Randomness for every experiment: Gaussian vectors, rotationally symmetric
//! alpha-stable vectors, Pareto innovations, and the stable normalizing
//! constants.

pub mod audit;
mod gamma;
mod rng;

use std::f64::consts::PI;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

pub use gamma::{gamma, ln_gamma};
pub use rng::{simulate_paths, RngStream, StreamRng, PATH_CHUNK};

use crate::error::{Error, Result};
use crate::state::VectorState;

/// Constants of the rotationally symmetric alpha-stable law in `R^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    pub alpha: f64,
    pub dim: usize,
    /// Normalizing constant of the fractional Laplacian.
    pub d_alpha: f64,
    /// Scale dividing the Pareto innovations in the Euler-Maruyama chain.
    pub sigma: f64,
    /// Surface area of the unit sphere `S^{d-1}`.
    pub sphere_area: f64,
}

impl StableParams {
    pub fn new(alpha: f64, dim: usize) -> Result<Self> {
        stable_constants(alpha, dim)
    }
}

/// Generator constant of the rotationally symmetric alpha-stable law:
/// `Delta^{alpha/2} f(x) = d_alpha int (f(x+y) - f(x)) / |y|^{alpha+d} dy`
/// has symbol `-|lambda|^alpha` exactly when
///
/// ```text
/// d_alpha = ( int_0^inf (1 - cos y) / y^{alpha+1} dy * int_{S^{d-1}} |<e, theta>|^alpha dtheta )^{-1}
/// ```
///
/// The Gamma expression [`d_alpha_gamma_form`] equals `V(S^{d-1})` times
/// this, so it is divided out here.
pub fn d_alpha(alpha: f64, dim: usize) -> f64 {
    d_alpha_gamma_form(alpha, dim) / sphere_area(dim)
}

/// `alpha 2^alpha Gamma((d+alpha)/2) / (Gamma(d/2) Gamma((2-alpha)/2))`.
///
/// Defined for `alpha` in `(0, 2)`. Used as a generator constant it yields the
/// law with characteristic function `exp(-V(S^{d-1}) |lambda|^alpha)`.
pub fn d_alpha_gamma_form(alpha: f64, dim: usize) -> f64 {
    let d = dim as f64;
    alpha * 2f64.powf(alpha) * (ln_gamma((d + alpha) / 2.0) - ln_gamma(d / 2.0) - ln_gamma((2.0 - alpha) / 2.0)).exp()
}

/// `2 pi^{d/2} / Gamma(d/2)`.
pub fn sphere_area(dim: usize) -> f64 {
    let d = dim as f64;
    2.0 * (0.5 * d * PI.ln() - ln_gamma(d / 2.0)).exp()
}

pub fn stable_constants(alpha: f64, dim: usize) -> Result<StableParams> {
    if dim == 0 {
        return Err(Error::InvalidDimension(0));
    }
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::domain(format!("alpha = {alpha} must lie in (1, 2)")));
    }
    let d_alpha = d_alpha(alpha, dim);
    let sphere_area = sphere_area(dim);
    let sigma = (alpha / (sphere_area * d_alpha)).powf(1.0 / alpha);
    Ok(StableParams {
        alpha,
        dim,
        d_alpha,
        sigma,
        sphere_area,
    })
}

pub fn fill_gaussian<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Result<VectorState> {
    if dim == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let mut v = vec![0.0; dim];
    fill_gaussian(rng, &mut v);
    VectorState::new(v)
}

/// Positive stable variable with Laplace transform `E exp(-u S) = exp(-u^a)`,
/// `0 < a < 1`, by the Chambers-Mallows-Stuck (Kanter) representation.
pub fn positive_stable<R: Rng + ?Sized>(rng: &mut R, a: f64) -> f64 {
    let u = PI * rng.sample::<f64, _>(Open01);
    let w: f64 = rng.sample(Exp1);
    let head = (a * u).sin() / u.sin().powf(1.0 / a);
    head * (((1.0 - a) * u).sin() / w).powf((1.0 - a) / a)
}

/// Draw `Z_1` with `E exp(i<lambda, Z_1>) = exp(-|lambda|^alpha)` into `out`.
///
/// Subordination: `Z = sqrt(2 S) G` with `S` positive `(alpha/2)`-stable and
/// `G` standard Gaussian, since `E exp(-S |lambda|^2) = exp(-|lambda|^alpha)`.
pub fn fill_stable<R: Rng + ?Sized>(rng: &mut R, alpha: f64, out: &mut [f64]) {
    let s = positive_stable(rng, alpha / 2.0);
    let scale = (2.0 * s).sqrt();
    for v in out.iter_mut() {
        *v = scale * rng.sample::<f64, _>(StandardNormal);
    }
}

pub fn stable_vector<R: Rng + ?Sized>(rng: &mut R, params: &StableParams) -> VectorState {
    let mut v = vec![0.0; params.dim];
    fill_stable(rng, params.alpha, &mut v);
    VectorState::new(v).expect("StableParams has dim >= 1")
}

/// Inverse CDF of the Pareto radius: `P(R > r) = r^{-alpha}` on `r >= 1`.
pub fn pareto_radius(alpha: f64, u: f64) -> f64 {
    u.powf(-1.0 / alpha)
}

/// Pareto innovation with density `alpha / (V(S^{d-1}) |z|^{alpha+d})` on
/// `|z| > 1`: radius by inverse CDF, direction uniform on the sphere.
pub fn fill_pareto<R: Rng + ?Sized>(rng: &mut R, alpha: f64, out: &mut [f64]) {
    let radius = pareto_radius(alpha, rng.sample(Open01));
    if out.len() == 1 {
        out[0] = if rng.random::<bool>() { radius } else { -radius };
        return;
    }
    loop {
        fill_gaussian(rng, out);
        let n = crate::state::norm(out);
        if n > 0.0 {
            let k = radius / n;
            out.iter_mut().for_each(|v| *v *= k);
            return;
        }
    }
}

pub fn pareto_vector<R: Rng + ?Sized>(rng: &mut R, params: &StableParams) -> VectorState {
    let mut v = vec![0.0; params.dim];
    fill_pareto(rng, params.alpha, &mut v);
    VectorState::new(v).expect("StableParams has dim >= 1")
}
