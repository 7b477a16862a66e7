//! Online SGD on quadratic losses and the diffusion that approximates it.
//!
//! The SGD chain is `w_k = w_{k-1} - eta grad_psi(w_{k-1}, zeta_k)` and the
//! diffusion is
//!
//! ```text
//! dX = -grad_P(X) dt + (eta Sigma(X))^{1/2} dB
//! ```
//!
//! with `Sigma(x)` the conditional covariance of the stochastic gradient. Two
//! quadratic models are supported:
//!
//! * `Example1`: `grad_psi(x, zeta) = H (x - zeta)`, `zeta ~ N(0, I)`, so
//!   `grad_P(x) = H x` and `Sigma = H^2`. The diffusion is linear and its
//!   marginal law is Gaussian in closed form.
//! * `Example2`: `H = Q D Q^T`, `zeta = (a, b)` two independent standard
//!   Gaussians, `grad_psi(x, zeta) = Q [D + diag(a)] Q^T x + gamma (x - b)`,
//!   `grad_P(x) = (H + gamma I) x`,
//!   `Sigma(x) = Q [diag(Q^T x)^2 + gamma^2 I] Q^T`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{fill_gaussian, ln_gamma, RngStream, StreamRng, PATH_CHUNK};
use crate::state::{dot, norm, VectorState};
use crate::wasserstein::{SampleMeta, SampleSet};

const MODEL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Example1,
    Example2,
}

/// One draw of the sample noise `zeta`.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    /// `zeta ~ N(0, I_d)`.
    Example1(Vec<f64>),
    /// `zeta = (a, b)`, independent `N(0, I_d)` pairs.
    Example2 { a: Vec<f64>, b: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    variant: Variant,
    dim: usize,
    h: DMatrix<f64>,
    /// Orthogonal eigenbasis of `H` (columns).
    q: DMatrix<f64>,
    /// Eigenvalues of `H`, matching the columns of `q`.
    eig: DVector<f64>,
    gamma: f64,
    // row-major copies for the inner loops
    h_flat: Vec<f64>,
    q_flat: Vec<f64>,
}

fn check_symmetric(h: &DMatrix<f64>) -> Result<()> {
    if h.nrows() == 0 {
        return Err(Error::InvalidDimension(0));
    }
    if h.nrows() != h.ncols() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            found: h.ncols(),
        });
    }
    let scale = h.amax().max(1.0);
    if (h - h.transpose()).amax() > MODEL_TOL * scale {
        return Err(Error::domain("H must be symmetric"));
    }
    Ok(())
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl QuadraticModel {
    pub fn example1(h: DMatrix<f64>) -> Result<Self> {
        Self::build(Variant::Example1, h, 0.0)
    }

    /// Example 2 with `Q`, `D` taken from the eigendecomposition of `H`.
    pub fn example2(h: DMatrix<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::domain(format!("gamma = {gamma} must be positive")));
        }
        Self::build(Variant::Example2, h, gamma)
    }

    /// Example 2 from an explicit orthogonal `Q` and eigenvalues `D`.
    pub fn example2_from_parts(q: DMatrix<f64>, d: Vec<f64>, gamma: f64) -> Result<Self> {
        let n = q.nrows();
        if q.ncols() != n || d.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: d.len(),
            });
        }
        if (q.transpose() * &q - DMatrix::identity(n, n)).amax() > MODEL_TOL {
            return Err(Error::domain("Q must be orthogonal"));
        }
        if !(gamma > 0.0) {
            return Err(Error::domain(format!("gamma = {gamma} must be positive")));
        }
        let eig = DVector::from_vec(d);
        if eig.min() <= 0.0 {
            return Err(Error::domain("H must be positive definite"));
        }
        let h = &q * DMatrix::from_diagonal(&eig) * q.transpose();
        Ok(Self {
            variant: Variant::Example2,
            dim: n,
            h_flat: row_major(&h),
            q_flat: row_major(&q),
            h,
            q,
            eig,
            gamma,
        })
    }

    fn build(variant: Variant, h: DMatrix<f64>, gamma: f64) -> Result<Self> {
        check_symmetric(&h)?;
        let se = SymmetricEigen::new(h.clone());
        if se.eigenvalues.min() <= 0.0 {
            return Err(Error::domain("H must be positive definite"));
        }
        Ok(Self {
            variant,
            dim: h.nrows(),
            h_flat: row_major(&h),
            q_flat: row_major(&se.eigenvectors),
            q: se.eigenvectors,
            eig: se.eigenvalues,
            h,
            gamma,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eig
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda_min(&self) -> f64 {
        self.eig.min()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    fn h_mul(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&self.h_flat[i * d..(i + 1) * d], x);
        }
    }

    fn q_mul(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&self.q_flat[i * d..(i + 1) * d], x);
        }
    }

    fn qt_mul(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, xi) in x.iter().enumerate() {
            let row = &self.q_flat[i * d..(i + 1) * d];
            out.iter_mut().zip(row).for_each(|(o, q)| *o += q * xi);
        }
    }

    /// Mean gradient `grad_P(x)`.
    pub fn grad_p(&self, x: &[f64], out: &mut [f64]) {
        self.h_mul(x, out);
        if self.variant == Variant::Example2 {
            out.iter_mut().zip(x).for_each(|(o, xi)| *o += self.gamma * xi);
        }
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Noise {
        let mut a = vec![0.0; self.dim];
        fill_gaussian(rng, &mut a);
        match self.variant {
            Variant::Example1 => Noise::Example1(a),
            Variant::Example2 => {
                let mut b = vec![0.0; self.dim];
                fill_gaussian(rng, &mut b);
                Noise::Example2 { a, b }
            }
        }
    }

    /// Stochastic gradient `grad_psi(x, zeta)`.
    pub fn grad_psi(&self, x: &VectorState, noise: &Noise) -> Result<VectorState> {
        self.check(x)?;
        let mut out = vec![0.0; self.dim];
        match (self.variant, noise) {
            (Variant::Example1, Noise::Example1(z)) => {
                self.check(z)?;
                let diff: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
                self.h_mul(&diff, &mut out);
            }
            (Variant::Example2, Noise::Example2 { a, b }) => {
                self.check(a)?;
                self.check(b)?;
                let mut tmp = vec![0.0; self.dim];
                self.qt_mul(x, &mut tmp);
                for (i, t) in tmp.iter_mut().enumerate() {
                    *t *= self.eig[i] + a[i];
                }
                self.q_mul(&tmp, &mut out);
                for i in 0..self.dim {
                    out[i] += self.gamma * (x[i] - b[i]);
                }
            }
            _ => return Err(Error::domain("noise variant does not match the model")),
        }
        VectorState::new(out)
    }

    /// One SGD step in place. `scratch` must hold `3 * dim` values.
    fn sgd_step_in_place(&self, eta: f64, w: &mut [f64], rng: &mut StreamRng, scratch: &mut [f64]) {
        let d = self.dim;
        let (z, rest) = scratch.split_at_mut(d);
        let (g, t) = rest.split_at_mut(d);
        match self.variant {
            Variant::Example1 => {
                for (zi, wi) in z.iter_mut().zip(w.iter()) {
                    *zi = wi - rng.sample::<f64, _>(StandardNormal);
                }
                self.h_mul(z, g);
            }
            Variant::Example2 => {
                self.qt_mul(w, t);
                for (i, ti) in t[..d].iter_mut().enumerate() {
                    *ti *= self.eig[i] + rng.sample::<f64, _>(StandardNormal);
                }
                self.q_mul(&t[..d], g);
                for i in 0..d {
                    let b: f64 = rng.sample(StandardNormal);
                    g[i] += self.gamma * (w[i] - b);
                }
            }
        }
        w.iter_mut().zip(g.iter()).for_each(|(wi, gi)| *wi -= eta * gi);
    }

    pub fn sgd_step(&self, eta: f64, w: &VectorState, rng: &mut StreamRng) -> Result<VectorState> {
        self.check(w)?;
        let noise = self.sample_noise(rng);
        let g = self.grad_psi(w, &noise)?;
        VectorState::new(w.iter().zip(g.iter()).map(|(a, b)| a - eta * b).collect())
    }

    /// `Sigma(x)`.
    pub fn sigma(&self, x: &[f64]) -> DMatrix<f64> {
        match self.variant {
            Variant::Example1 => &self.h * &self.h,
            Variant::Example2 => {
                let proj = self.q.transpose() * DVector::from_column_slice(x);
                let diag = proj.map(|p| p * p + self.gamma * self.gamma);
                &self.q * DMatrix::from_diagonal(&diag) * self.q.transpose()
            }
        }
    }

    /// `Sigma(x)^{1/2}`; exact via the eigenbasis in which it is diagonal.
    pub fn sigma_sqrt(&self, x: &[f64]) -> DMatrix<f64> {
        match self.variant {
            Variant::Example1 => self.h.clone(),
            Variant::Example2 => {
                let proj = self.q.transpose() * DVector::from_column_slice(x);
                let diag = proj.map(|p| (p * p + self.gamma * self.gamma).sqrt());
                &self.q * DMatrix::from_diagonal(&diag) * self.q.transpose()
            }
        }
    }

    /// One Euler step of the diffusion in place. `scratch` holds `3 * dim`.
    fn sde_step_in_place(&self, eta: f64, dt: f64, x: &mut [f64], rng: &mut StreamRng, scratch: &mut [f64]) {
        let d = self.dim;
        let (drift, rest) = scratch.split_at_mut(d);
        let (gauss, t) = rest.split_at_mut(d);
        self.grad_p(x, drift);
        fill_gaussian(rng, gauss);
        let noise_scale = (eta * dt).sqrt();
        match self.variant {
            Variant::Example1 => {
                self.h_mul(gauss, &mut t[..d]);
            }
            Variant::Example2 => {
                // Q diag(sqrt((Q^T x)^2 + gamma^2)) Q^T G
                let mut proj = vec![0.0; d];
                self.qt_mul(x, &mut proj);
                self.qt_mul(gauss, &mut t[..d]);
                for i in 0..d {
                    t[i] *= (proj[i] * proj[i] + self.gamma * self.gamma).sqrt();
                }
                self.q_mul(&t[..d], gauss);
                t[..d].copy_from_slice(gauss);
            }
        }
        for i in 0..d {
            x[i] += -drift[i] * dt + noise_scale * t[i];
        }
    }

    pub fn sde_step(&self, eta: f64, dt: f64, x: &VectorState, rng: &mut StreamRng) -> Result<VectorState> {
        self.check(x)?;
        if dt < 0.0 {
            return Err(Error::domain(format!("dt = {dt} must be non-negative")));
        }
        let mut out = x.clone();
        if dt == 0.0 {
            return Ok(out);
        }
        let mut scratch = vec![0.0; 3 * self.dim];
        self.sde_step_in_place(eta, dt, &mut out, rng, &mut scratch);
        Ok(out)
    }

    /// Draw from the exact law of the Example 1 diffusion at time `t`:
    /// Gaussian with mean `e^{-Ht} x0` and covariance `(eta/2) H (I - e^{-2Ht})`.
    fn exact_linear_marginal(&self, eta: f64, t: f64, x0: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        let d = self.dim;
        let mut y = vec![0.0; d];
        self.qt_mul(x0, &mut y);
        for (i, yi) in y.iter_mut().enumerate() {
            let l = self.eig[i];
            let sd = (0.5 * eta * l * (1.0 - (-2.0 * l * t).exp())).sqrt();
            *yi = (-l * t).exp() * *yi + sd * rng.sample::<f64, _>(StandardNormal);
        }
        self.q_mul(&y, out);
    }

    /// Exact `E |grad_psi(x) - grad_psi(y)|^4` over the sample noise.
    pub fn gradient_diff_fourth_moment(&self, x: &[f64], y: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        match self.variant {
            Variant::Example1 => {
                let mut hd = vec![0.0; self.dim];
                self.h_mul(&diff, &mut hd);
                norm(&hd).powi(4)
            }
            Variant::Example2 => {
                // |(c + a) . u|^2 with c = D + gamma, u = Q^T (x - y), a ~ N(0, I):
                // a sum of independent terms A_i = (c_i + a_i)^2 u_i^2.
                let mut u = vec![0.0; self.dim];
                self.qt_mul(&diff, &mut u);
                let mut mean = 0.0;
                let mut var = 0.0;
                for (i, ui) in u.iter().enumerate() {
                    let c = self.eig[i] + self.gamma;
                    let u2 = ui * ui;
                    let m1 = (c * c + 1.0) * u2;
                    let m2 = (c.powi(4) + 6.0 * c * c + 3.0) * u2 * u2;
                    mean += m1;
                    var += m2 - m1 * m1;
                }
                mean * mean + var
            }
        }
    }

    /// Constants for which the dissipativity, smoothness, ellipticity and
    /// fourth-moment Lipschitz assumptions hold for this model.
    pub fn claimed_constants(&self) -> AssumptionConstants {
        let d = self.dim as f64;
        let h_hs = self.h.norm();
        match self.variant {
            Variant::Example1 => {
                let lmin = self.lambda_min();
                AssumptionConstants {
                    theta: [lmin, 0.0, 0.0, 0.0, 0.0, 0.0],
                    delta: lmin,
                    kappa: h_hs,
                    ell0: self.example1_ell0(),
                }
            }
            Variant::Example2 => {
                let g = self.gamma;
                let q_hs = self.q.norm();
                let kappa4 = 27.0 * (h_hs.powi(4) + 3.0 * d.powi(6) + g.powi(4));
                let sd = d.sqrt();
                AssumptionConstants {
                    theta: [
                        self.lambda_min() + g,
                        0.0,
                        0.0,
                        sd * q_hs.powi(3),
                        sd * q_hs.powi(4) * (1.0 + 1.0 / g + g.powi(-3)),
                        3.0 * sd * q_hs.powi(5) * (2.0 + g.powi(-3) + g.powi(-5)),
                    ],
                    delta: g,
                    kappa: kappa4.powf(0.25),
                    // grad_psi(0, zeta) = -gamma b
                    ell0: std::array::from_fn(|j| {
                        g.powi(j as i32 + 1) * gaussian_norm_moment(self.dim, j as f64 + 1.0)
                    }),
                }
            }
        }
    }

    /// `E |H zeta|^j`, `j = 1..4`. Even moments in closed form, odd ones by a
    /// fixed-seed Monte Carlo average.
    fn example1_ell0(&self) -> [f64; 4] {
        let h2 = &self.h * &self.h;
        let tr2 = h2.trace();
        let tr4 = (&h2 * &h2).trace();
        const DRAWS: usize = 200_000;
        let mut rng = RngStream::new(0x1e11, 0).rng();
        let mut s1 = 0.0;
        let mut s3 = 0.0;
        let mut z = vec![0.0; self.dim];
        let mut hz = vec![0.0; self.dim];
        for _ in 0..DRAWS {
            fill_gaussian(&mut rng, &mut z);
            self.h_mul(&z, &mut hz);
            let r = norm(&hz);
            s1 += r;
            s3 += r * r * r;
        }
        [s1 / DRAWS as f64, tr2, s3 / DRAWS as f64, 2.0 * tr4 + tr2 * tr2]
    }
}

/// `E |B|^p` for `B ~ N(0, I_d)`: `2^{p/2} Gamma((d+p)/2) / Gamma(d/2)`.
pub fn gaussian_norm_moment(dim: usize, p: f64) -> f64 {
    let d = dim as f64;
    (0.5 * p * 2f64.ln() + ln_gamma((d + p) / 2.0) - ln_gamma(d / 2.0)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    /// `theta_0 .. theta_5`.
    pub theta: [f64; 6],
    pub delta: f64,
    pub kappa: f64,
    /// `ell_0^j = E |grad_psi(0, zeta)|^j` for `j = 1..4`.
    pub ell0: [f64; 4],
}

impl AssumptionConstants {
    /// Largest learning rate covered by the fourth-moment bound on the SGD
    /// iterates: `min(1, theta_0 / (2 (10 + 7 kappa^4 + 7 ell_0^4)))`.
    pub fn admissible_eta(&self) -> f64 {
        let denom = 2.0 * (10.0 + 7.0 * self.kappa.powi(4) + 7.0 * self.ell0[3]);
        (self.theta[0] / denom).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub eta: f64,
    pub horizon_n: usize,
    pub x0: VectorState,
    pub n_paths: usize,
    /// Euler step of the reference diffusion (Example 2 only); defaults to
    /// `eta / 64`.
    pub sde_dt: Option<f64>,
}

impl SgdConfig {
    pub fn validate(&self, model: &QuadraticModel) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::domain(format!("eta = {} must lie in (0, 1]", self.eta)));
        }
        if self.horizon_n < 2 {
            return Err(Error::domain(format!("N = {} must be at least 2", self.horizon_n)));
        }
        if self.n_paths == 0 {
            return Err(Error::domain("n_paths must be positive"));
        }
        self.x0.ensure_dim(model.dim())?;
        if let Some(dt) = self.sde_dt {
            if !(dt > 0.0 && dt <= self.eta) {
                return Err(Error::domain(format!("sde_dt = {dt} must lie in (0, eta]")));
            }
        }
        Ok(())
    }

    pub fn physical_time(&self) -> f64 {
        self.eta * self.horizon_n as f64
    }
}

/// `n_paths` draws of the SGD iterate `w_N`.
pub fn sample_sgd_marginal(model: &QuadraticModel, cfg: &SgdConfig, stream: &RngStream) -> Result<SampleSet> {
    cfg.validate(model)?;
    let d = model.dim();
    let data = crate::sampling::simulate_paths(stream, cfg.n_paths, d, |rng, out| {
        let mut scratch = vec![0.0; 3 * d];
        out.copy_from_slice(&cfg.x0);
        for _ in 0..cfg.horizon_n {
            model.sgd_step_in_place(cfg.eta, out, rng, &mut scratch);
        }
    });
    SampleSet::from_flat(
        d,
        data,
        SampleMeta {
            seed: stream.seed,
            tag: "sgd".into(),
        },
    )
}

/// `n_paths` draws of the diffusion at physical time `eta N`: exact Gaussian
/// law for Example 1, fine-step Euler for Example 2.
pub fn sample_sde_marginal(model: &QuadraticModel, cfg: &SgdConfig, stream: &RngStream) -> Result<SampleSet> {
    cfg.validate(model)?;
    let d = model.dim();
    let t = cfg.physical_time();
    let data = match model.variant() {
        Variant::Example1 => crate::sampling::simulate_paths(stream, cfg.n_paths, d, |rng, out| {
            model.exact_linear_marginal(cfg.eta, t, &cfg.x0, rng, out);
        }),
        Variant::Example2 => {
            let dt_target = cfg.sde_dt.unwrap_or(cfg.eta / 64.0);
            let steps = (t / dt_target).round().max(1.0) as usize;
            let dt = t / steps as f64;
            crate::sampling::simulate_paths(stream, cfg.n_paths, d, |rng, out| {
                let mut scratch = vec![0.0; 3 * d];
                out.copy_from_slice(&cfg.x0);
                for _ in 0..steps {
                    model.sde_step_in_place(cfg.eta, dt, out, rng, &mut scratch);
                }
            })
        }
    };
    SampleSet::from_flat(
        d,
        data,
        SampleMeta {
            seed: stream.seed,
            tag: "sde".into(),
        },
    )
}

/// Independent draws of `L(X_{eta N})` and `L(w_N)`. The two sets use
/// disjoint substreams.
pub fn simulate_pair_marginals(
    model: &QuadraticModel,
    cfg: &SgdConfig,
    stream: &RngStream,
) -> Result<(SampleSet, SampleSet)> {
    let sgd = sample_sgd_marginal(model, cfg, &stream.substream(0))?;
    let sde = sample_sde_marginal(model, cfg, &stream.substream(1))?;
    Ok((sgd, sde))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub constants: AssumptionConstants,
    pub n_probe: usize,
    /// Largest relative shortfall of `<v, grad_v grad_P v> >= theta_0 |v|^2`.
    pub dissipativity: f64,
    /// Same for the integrated form `<x-y, grad_P(x)-grad_P(y)> >= theta_0 |x-y|^2`.
    pub monotonicity: f64,
    /// `xi^T Sigma^{1/2}(x) xi >= delta |xi|^2`.
    pub ellipticity: f64,
    /// `E |grad_psi(x)-grad_psi(y)|^4 <= kappa^4 |x-y|^4`.
    pub lipschitz: f64,
    /// `|grad_P(x) - grad_P(y)| <= kappa |x - y|`.
    pub mean_lipschitz: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Probe the claimed assumption constants at random points. Violations are
/// reported, never raised.
pub fn check_assumptions(model: &QuadraticModel, n_probe: usize, stream: &RngStream) -> Result<AssumptionReport> {
    if n_probe == 0 {
        return Err(Error::domain("n_probe must be at least 1"));
    }
    const TOL: f64 = 1e-8;
    let c = model.claimed_constants();
    let d = model.dim();
    let theta0 = c.theta[0];
    let mut rng = stream.rng();
    let shortfall = |need: f64, have: f64| ((need - have) / need.abs().max(f64::MIN_POSITIVE)).max(0.0);
    let mut worst = [0.0f64; 5];
    let scales = [0.1, 1.0, 10.0];
    let draw = |rng: &mut StreamRng, k: usize| {
        let mut v = vec![0.0; d];
        fill_gaussian(rng, &mut v);
        let s = scales[k % scales.len()];
        v.iter_mut().for_each(|x| *x *= s);
        v
    };
    let mut gx = vec![0.0; d];
    let mut gy = vec![0.0; d];
    for k in 0..n_probe {
        let x = draw(&mut rng, k);
        let y = draw(&mut rng, k + 1);
        let v = draw(&mut rng, k + 2);
        let xi = draw(&mut rng, k);

        // directional derivative of the (linear) mean gradient along v
        let xv: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + b).collect();
        model.grad_p(&xv, &mut gx);
        model.grad_p(&x, &mut gy);
        let dv: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
        let vv = dot(&v, &v);
        worst[0] = worst[0].max(shortfall(theta0 * vv, dot(&v, &dv)));

        model.grad_p(&x, &mut gx);
        model.grad_p(&y, &mut gy);
        let dxy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
        let r2 = dot(&dxy, &dxy);
        worst[1] = worst[1].max(shortfall(theta0 * r2, dot(&dxy, &dg)));
        let lip = c.kappa * r2.sqrt();
        worst[4] = worst[4].max(((norm(&dg) - lip) / lip).max(0.0));

        let root = model.sigma_sqrt(&x);
        let xi_v = DVector::from_column_slice(&xi);
        let quad = xi_v.dot(&(&root * &xi_v));
        worst[2] = worst[2].max(shortfall(c.delta * dot(&xi, &xi), quad));

        let m4 = model.gradient_diff_fourth_moment(&x, &y);
        let cap = c.kappa.powi(4) * r2 * r2;
        worst[3] = worst[3].max(((m4 - cap) / cap).max(0.0));
    }
    let passed = worst.iter().all(|w| *w <= TOL);
    Ok(AssumptionReport {
        constants: c,
        n_probe,
        dissipativity: worst[0],
        monotonicity: worst[1],
        ellipticity: worst[2],
        lipschitz: worst[3],
        mean_lipschitz: worst[4],
        tolerance: TOL,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentAudit {
    /// Monte Carlo estimate of `E |w_k|^4` for `k = 0..=n_steps`.
    pub fourth_moments: Vec<f64>,
    /// `|w_0|^4 + c_budget`.
    pub bound: f64,
    pub c_budget: f64,
    pub admissible_eta: f64,
    pub max_moment: f64,
    pub flagged: bool,
}

/// Track `E |w_k|^4` over `n_steps` SGD steps and flag if it ever exceeds
/// `|w_0|^4 + c_budget`. The default budget is `10 (1 + ell_0^4 / theta_0)`.
pub fn moment_audit(
    model: &QuadraticModel,
    cfg: &SgdConfig,
    n_steps: usize,
    c_budget: Option<f64>,
    stream: &RngStream,
) -> Result<MomentAudit> {
    let consts = model.claimed_constants();
    let admissible = consts.admissible_eta();
    if !(cfg.eta >= 0.0 && cfg.eta <= admissible) {
        return Err(Error::domain(format!(
            "eta = {} exceeds the admissible step {admissible}",
            cfg.eta
        )));
    }
    cfg.x0.ensure_dim(model.dim())?;
    if cfg.n_paths == 0 {
        return Err(Error::domain("n_paths must be positive"));
    }
    let c_budget = c_budget.unwrap_or(10.0 * (1.0 + consts.ell0[3] / consts.theta[0]));
    let d = model.dim();
    let n_chunks = cfg.n_paths.div_ceil(PATH_CHUNK);
    let partial: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = stream.substream(chunk as u64).rng();
            let paths = PATH_CHUNK.min(cfg.n_paths - chunk * PATH_CHUNK);
            let mut sums = vec![0.0; n_steps + 1];
            let mut w = vec![0.0; d];
            let mut scratch = vec![0.0; 3 * d];
            for _ in 0..paths {
                w.copy_from_slice(&cfg.x0);
                sums[0] += norm(&w).powi(4);
                for s in sums.iter_mut().skip(1) {
                    model.sgd_step_in_place(cfg.eta, &mut w, &mut rng, &mut scratch);
                    *s += norm(&w).powi(4);
                }
            }
            sums
        })
        .collect();
    let mut fourth = vec![0.0; n_steps + 1];
    for p in &partial {
        fourth.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    fourth.iter_mut().for_each(|v| *v /= cfg.n_paths as f64);
    let bound = cfg.x0.norm().powi(4) + c_budget;
    let max_moment = fourth.iter().copied().fold(0.0, f64::max);
    Ok(MomentAudit {
        flagged: !(max_moment <= bound),
        fourth_moments: fourth,
        bound,
        c_budget,
        admissible_eta: admissible,
        max_moment,
    })
}

/// 1-Lipschitz test functions for the contraction check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzFn {
    Constant(f64),
    Coordinate(usize),
    Norm,
    /// `log(1 + e^{x_1}) - log 2`.
    SoftRamp,
}

impl LipschitzFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            LipschitzFn::Constant(c) => c,
            LipschitzFn::Coordinate(i) => x[i],
            LipschitzFn::Norm => norm(x),
            LipschitzFn::SoftRamp => {
                let t = x[0];
                // stable softplus
                t.max(0.0) + (-t.abs()).exp().ln_1p() - std::f64::consts::LN_2
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionProbe {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    /// Common-random-number estimate of `|P_t h(x + eps v) - P_t h(x)| / eps`.
    pub estimate: f64,
    pub stderr: f64,
    /// `e^{-theta_0 t / 8} |v| + 5 stderr`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub t: f64,
    pub theta0: f64,
    pub probes: Vec<ContractionProbe>,
    pub passed: bool,
}

/// Finite-difference check of `|grad_v P_t h(x)| <= e^{-theta_0 t / 8} |v|`
/// for the diffusion with learning rate `eta`.
#[allow(clippy::too_many_arguments)]
pub fn check_semigroup_contraction(
    model: &QuadraticModel,
    eta: f64,
    t: f64,
    h: LipschitzFn,
    eps: f64,
    n_probe: usize,
    n_mc: usize,
    stream: &RngStream,
) -> Result<ContractionReport> {
    if !(t > 0.0) || !(eps > 0.0) || n_mc < 2 {
        return Err(Error::domain("need t > 0, eps > 0 and n_mc >= 2"));
    }
    let d = model.dim();
    if let LipschitzFn::Coordinate(i) = h {
        if i >= d {
            return Err(Error::Range {
                what: "coordinate",
                index: i,
                max: d - 1,
            });
        }
    }
    let theta0 = model.claimed_constants().theta[0];
    let mut probe_rng = stream.rng();
    let mut probes = Vec::with_capacity(n_probe);
    let euler_steps = ((t / (eta / 64.0)).ceil() as usize).max(64);
    for p in 0..n_probe {
        let mut x = vec![0.0; d];
        fill_gaussian(&mut probe_rng, &mut x);
        x.iter_mut().for_each(|v| *v *= 2.0);
        let mut v = vec![0.0; d];
        fill_gaussian(&mut probe_rng, &mut v);
        let len: f64 = probe_rng.random_range(0.5..2.0);
        let nv = norm(&v);
        v.iter_mut().for_each(|c| *c *= len / nv);
        let xv: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + eps * b).collect();

        let mut rng = stream.substream(p as u64 + 1).rng();
        let mut quotients = Vec::with_capacity(n_mc);
        let mut end_a = vec![0.0; d];
        let mut end_b = vec![0.0; d];
        let mut scratch = vec![0.0; 3 * d];
        for _ in 0..n_mc {
            // common random numbers: replay the same stream position for both starts
            let snapshot = rng.clone();
            match model.variant() {
                Variant::Example1 => {
                    model.exact_linear_marginal(eta, t, &x, &mut rng, &mut end_a);
                    let mut replay = snapshot;
                    model.exact_linear_marginal(eta, t, &xv, &mut replay, &mut end_b);
                }
                Variant::Example2 => {
                    let dt = t / euler_steps as f64;
                    end_a.copy_from_slice(&x);
                    for _ in 0..euler_steps {
                        model.sde_step_in_place(eta, dt, &mut end_a, &mut rng, &mut scratch);
                    }
                    let mut replay = snapshot;
                    end_b.copy_from_slice(&xv);
                    for _ in 0..euler_steps {
                        model.sde_step_in_place(eta, dt, &mut end_b, &mut replay, &mut scratch);
                    }
                }
            }
            quotients.push((h.eval(&end_b) - h.eval(&end_a)) / eps);
        }
        let n = quotients.len() as f64;
        let mean = quotients.iter().sum::<f64>() / n;
        let var = quotients.iter().map(|q| (q - mean) * (q - mean)).sum::<f64>() / (n - 1.0);
        let stderr = (var / n).sqrt();
        let bound = (-theta0 * t / 8.0).exp() * norm(&v) + 5.0 * stderr;
        probes.push(ContractionProbe {
            x,
            v,
            estimate: mean.abs(),
            stderr,
            bound,
        });
    }
    let passed = probes.iter().all(|p| p.estimate <= p.bound);
    Ok(ContractionReport {
        t,
        theta0,
        probes,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    fn rotation(theta: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
    }

    #[test]
    fn grad_psi_examples() {
        let m = QuadraticModel::example1(diag(&[2.0])).unwrap();
        let x = VectorState::new(vec![1.0]).unwrap();
        let g = m.grad_psi(&x, &Noise::Example1(vec![0.5])).unwrap();
        assert_eq!(g[0], 1.0);
        let g = m.grad_psi(&x, &Noise::Example1(vec![1.0])).unwrap();
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn example2_noise_free_gradient_is_mean() {
        let m = QuadraticModel::example2_from_parts(rotation(0.3), vec![1.0, 3.0], 0.5).unwrap();
        let x = VectorState::new(vec![0.7, -1.2]).unwrap();
        let g = m
            .grad_psi(
                &x,
                &Noise::Example2 {
                    a: vec![0.0; 2],
                    b: vec![0.0; 2],
                },
            )
            .unwrap();
        let mut gp = vec![0.0; 2];
        m.grad_p(&x, &mut gp);
        for i in 0..2 {
            assert!((g[i] - gp[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn sgd_step_hand_value() {
        // w - eta H (w - zeta) = 1 - 0.1 * (1 - 0.5)
        let m = QuadraticModel::example1(diag(&[1.0])).unwrap();
        let w = VectorState::new(vec![1.0]).unwrap();
        let g = m.grad_psi(&w, &Noise::Example1(vec![0.5])).unwrap();
        assert!((w[0] - 0.1 * g[0] - 0.95).abs() < 1e-15);
        let mut rng = RngStream::new(0, 0).rng();
        assert_eq!(m.sgd_step(0.0, &w, &mut rng).unwrap(), w);
    }

    #[test]
    fn sigma_sqrt_examples() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m1 = QuadraticModel::example1(h.clone()).unwrap();
        assert_eq!(m1.sigma_sqrt(&[3.0, -1.0]), h);
        let m2 = QuadraticModel::example2(h, 0.5).unwrap();
        let at0 = m2.sigma_sqrt(&[0.0, 0.0]);
        assert!((at0 - DMatrix::identity(2, 2) * 0.5).amax() < 1e-12);
        let x = [1.3, -0.4];
        let r = m2.sigma_sqrt(&x);
        assert!((&r * &r - m2.sigma(&x)).amax() < 1e-10);
        assert!((&r - r.transpose()).amax() < 1e-12);
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(QuadraticModel::example1(diag(&[1.0, -1.0])).is_err());
        assert!(QuadraticModel::example1(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0])).is_err());
        assert!(QuadraticModel::example2(diag(&[1.0]), 0.0).is_err());
        let not_orth = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(QuadraticModel::example2_from_parts(not_orth, vec![1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn example2_decomposition_reconstructs_h() {
        let h = DMatrix::from_row_slice(3, 3, &[3.0, 0.4, 0.1, 0.4, 2.0, -0.3, 0.1, -0.3, 1.5]);
        let m = QuadraticModel::example2(h.clone(), 0.7).unwrap();
        let q = m.q();
        assert!((q.transpose() * q - DMatrix::identity(3, 3)).amax() < 1e-10);
        let rebuilt = q * DMatrix::from_diagonal(m.eigenvalues()) * q.transpose();
        assert!((rebuilt - h).amax() < 1e-10);
    }

    #[test]
    fn example2_fourth_moment_matches_monte_carlo() {
        let m = QuadraticModel::example2_from_parts(rotation(0.8), vec![0.5, 2.0], 0.3).unwrap();
        let (x, y) = ([0.4, -1.0], [-0.2, 0.5]);
        let exact = m.gradient_diff_fourth_moment(&x, &y);
        let mut rng = RngStream::new(77, 0).rng();
        let xs = VectorState::new(x.to_vec()).unwrap();
        let ys = VectorState::new(y.to_vec()).unwrap();
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let noise = m.sample_noise(&mut rng);
            let gx = m.grad_psi(&xs, &noise).unwrap();
            let gy = m.grad_psi(&ys, &noise).unwrap();
            let diff: Vec<f64> = gx.iter().zip(gy.iter()).map(|(a, b)| a - b).collect();
            acc += norm(&diff).powi(4);
        }
        let mc = acc / n as f64;
        assert!((mc - exact).abs() < 0.03 * exact, "mc {mc} exact {exact}");
    }

    #[test]
    fn gaussian_norm_moments() {
        assert!((gaussian_norm_moment(1, 1.0) - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
        assert!((gaussian_norm_moment(3, 2.0) - 3.0).abs() < 1e-12);
        assert!((gaussian_norm_moment(2, 4.0) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn drift_only_ode() {
        let m = QuadraticModel::example1(diag(&[1.0])).unwrap();
        let mut x = VectorState::new(vec![1.0]).unwrap();
        let mut rng = RngStream::new(0, 0).rng();
        for _ in 0..10_000 {
            x = m.sde_step(0.0, 1e-4, &x, &mut rng).unwrap();
        }
        assert!((x[0] - (-1f64).exp()).abs() < 1e-3);
        let same = m.sde_step(0.3, 0.0, &x, &mut rng).unwrap();
        assert_eq!(same, x);
    }

    #[test]
    fn claimed_constants_example1() {
        let m = QuadraticModel::example1(diag(&[1.0, 2.0])).unwrap();
        let c = m.claimed_constants();
        assert_eq!(c.theta[0], 1.0);
        assert_eq!(c.delta, 1.0);
        assert_eq!(&c.theta[1..], &[0.0; 5]);
        assert!((c.kappa - 5f64.sqrt()).abs() < 1e-14);
        // E|H zeta|^2 = tr(H^2) = 5, E|H zeta|^4 = 2 tr(H^4) + tr(H^2)^2 = 34 + 25
        assert!((c.ell0[1] - 5.0).abs() < 1e-12);
        assert!((c.ell0[3] - 59.0).abs() < 1e-12);
    }
}
