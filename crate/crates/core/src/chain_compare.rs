//! Finite-state comparison of a continuous-time Markov process `X` (seen
//! through its unit-time kernel) with a discrete chain `Y`, and the exact
//! one-step telescoping of `E h(X_N) - E h(Y_N)`.
//!
//! With `P` the unit-time kernel of `X`, `Q` the one-step kernel of `Y`, and
//! `u_k = P^k h`, the identity reads
//!
//! ```text
//! (P^N h)(x) - (Q^N h)(x) = sum_{j=1}^{N} (Q^{j-1} (P - Q) u_{N-j})(x)
//! ```
//!
//! which splits into an interior part (`j < N`, generator gaps of `u_k`) and a
//! boundary part (`j = N`, acting on `h` itself).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// Values of a test function `h` on each state.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub values: DVector<f64>,
}

impl TestFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("test function value {v} is not finite")));
        }
        Ok(Self {
            values: DVector::from_vec(values),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Two row-stochastic kernels on a shared finite state space.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteChainPair {
    states: Vec<String>,
    /// Unit-time kernel of the continuous-time process.
    p1: DMatrix<f64>,
    /// One-step kernel of the discrete chain.
    q1: DMatrix<f64>,
    horizon: usize,
}

fn check_stochastic(name: &str, m: &DMatrix<f64>) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::domain(format!("{name} row {i} has invalid entry {v}")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::domain(format!("{name} row {i} sums to {s}")));
        }
    }
    Ok(())
}

impl FiniteChainPair {
    pub fn new(p1: DMatrix<f64>, q1: DMatrix<f64>, horizon: usize) -> Result<Self> {
        let s = p1.nrows();
        let states = (0..s).map(|i| i.to_string()).collect();
        Self::with_states(states, p1, q1, horizon)
    }

    pub fn with_states(states: Vec<String>, p1: DMatrix<f64>, q1: DMatrix<f64>, horizon: usize) -> Result<Self> {
        let s = states.len();
        if s == 0 {
            return Err(Error::InvalidDimension(0));
        }
        for m in [&p1, &q1] {
            if m.nrows() != s || m.ncols() != s {
                return Err(Error::DimensionMismatch {
                    expected: s,
                    found: if m.nrows() != s { m.nrows() } else { m.ncols() },
                });
            }
        }
        if horizon < 2 {
            return Err(Error::domain(format!("horizon N = {horizon} must be at least 2")));
        }
        check_stochastic("P1", &p1)?;
        check_stochastic("Q1", &q1)?;
        Ok(Self {
            states,
            p1,
            q1,
            horizon,
        })
    }

    /// Random instance with Dirichlet(1, ..., 1) rows in both kernels.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_states: usize, horizon: usize) -> Result<Self> {
        let p1 = dirichlet_kernel(rng, n_states);
        let q1 = dirichlet_kernel(rng, n_states);
        Self::new(p1, q1, horizon)
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn p1(&self) -> &DMatrix<f64> {
        &self.p1
    }

    pub fn q1(&self) -> &DMatrix<f64> {
        &self.q1
    }

    pub fn state_index(&self, label: &str) -> Result<usize> {
        self.states
            .iter()
            .position(|s| s == label)
            .ok_or_else(|| Error::UnknownState(label.to_owned()))
    }

    fn check_state(&self, x: usize) -> Result<()> {
        if x >= self.n_states() {
            return Err(Error::UnknownState(x.to_string()));
        }
        Ok(())
    }

    fn check_fn(&self, h: &TestFunction) -> Result<()> {
        if h.len() != self.n_states() {
            return Err(Error::DimensionMismatch {
                expected: self.n_states(),
                found: h.len(),
            });
        }
        Ok(())
    }

    /// `u_k = P1^k h`, the expected value of `h` after `k` unit steps of `X`.
    pub fn u_k(&self, h: &TestFunction, k: usize) -> Result<TestFunction> {
        self.check_fn(h)?;
        if k > self.horizon {
            return Err(Error::Range {
                what: "k",
                index: k,
                max: self.horizon,
            });
        }
        let mut v = h.values.clone();
        for _ in 0..k {
            v = &self.p1 * v;
        }
        Ok(TestFunction { values: v })
    }

    /// `E h(X_N^x) - E h(Y_N^x)`.
    pub fn lhs(&self, h: &TestFunction, x: usize) -> Result<f64> {
        self.check_fn(h)?;
        self.check_state(x)?;
        let mut px = h.values.clone();
        let mut qx = h.values.clone();
        for _ in 0..self.horizon {
            px = &self.p1 * px;
            qx = &self.q1 * qx;
        }
        Ok(px[x] - qx[x])
    }

    /// Law of `Y_j^x` as a row vector, for `j = 0..n`.
    fn y_laws(&self, x: usize, n: usize) -> Vec<DVector<f64>> {
        let mut law = DVector::zeros(self.n_states());
        law[x] = 1.0;
        let mut out = Vec::with_capacity(n + 1);
        out.push(law.clone());
        for _ in 0..n {
            law = self.q1.tr_mul(&law);
            out.push(law.clone());
        }
        out
    }

    /// `sum_{j=1}^{N} [E u_{N-j}(X_1^{Y_{j-1}}) - E u_{N-j}(Y_1^{Y_{j-1}})]`.
    pub fn rhs_telescope(&self, h: &TestFunction, x: usize) -> Result<f64> {
        self.check_fn(h)?;
        self.check_state(x)?;
        let n = self.horizon;
        let laws = self.y_laws(x, n - 1);
        let diff = &self.p1 - &self.q1;
        let mut u = h.values.clone(); // u_0
        let mut total = 0.0;
        // j runs N, N-1, ..., 1 so that u_{N-j} is built incrementally.
        for j in (1..=n).rev() {
            total += laws[j - 1].dot(&(&diff * &u));
            u = &self.p1 * u;
        }
        Ok(total)
    }

    /// `((P1 - I) u_k)(y) - ((Q1 - I) u_k)(y)`: the unit-time generator gap of
    /// the two processes applied to `u_k`.
    pub fn generator_gap(&self, h: &TestFunction, k: usize, y: usize) -> Result<f64> {
        if k == 0 || k >= self.horizon {
            return Err(Error::Range {
                what: "k",
                index: k,
                max: self.horizon - 1,
            });
        }
        self.check_state(y)?;
        let u = self.u_k(h, k)?.values;
        let a_x = self.p1.row(y).dot(&u.transpose()) - u[y];
        let a_y = self.q1.row(y).dot(&u.transpose()) - u[y];
        Ok(a_x - a_y)
    }

    /// Interior part of the telescoping sum: `sum_{j=1}^{N-1} E gap_{N-j}(Y_{j-1})`.
    pub fn interior_term(&self, h: &TestFunction, x: usize) -> Result<f64> {
        self.check_fn(h)?;
        self.check_state(x)?;
        let n = self.horizon;
        let laws = self.y_laws(x, n - 1);
        let mut total = 0.0;
        for j in 1..n {
            let law = &laws[j - 1];
            for y in 0..self.n_states() {
                if law[y] != 0.0 {
                    total += law[y] * self.generator_gap(h, n - j, y)?;
                }
            }
        }
        Ok(total)
    }

    /// Boundary part (`j = N`): `E h(X_1^{Y_{N-1}}) - E h(Y_N)`.
    pub fn boundary_term(&self, h: &TestFunction, x: usize) -> Result<f64> {
        self.check_fn(h)?;
        self.check_state(x)?;
        let laws = self.y_laws(x, self.horizon);
        let before = &laws[self.horizon - 1];
        let via_x = before.dot(&(&self.p1 * &h.values));
        let via_y = laws[self.horizon].dot(&h.values);
        Ok(via_x - via_y)
    }

    /// Parse the plain-text chain format:
    ///
    /// ```text
    /// S N
    /// <S rows of P1>
    /// <S rows of Q1>
    /// [one row of h]
    /// ```
    ///
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str, origin: &Path) -> Result<(Self, Option<TestFunction>)> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| err(i + 1, format!("`{t}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push((i + 1, vals));
        }
        let (first_line, header) = rows.first().ok_or_else(|| err(1, "empty file".into()))?;
        if header.len() != 2 || header.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
            return Err(err(*first_line, "header must be `S N`".into()));
        }
        let (s, n) = (header[0] as usize, header[1] as usize);
        let body = &rows[1..];
        if body.len() != 2 * s && body.len() != 2 * s + 1 {
            return Err(err(
                *first_line,
                format!("expected {} or {} data rows, found {}", 2 * s, 2 * s + 1, body.len()),
            ));
        }
        for (line, r) in body {
            if r.len() != s {
                return Err(err(*line, format!("expected {s} values, found {}", r.len())));
            }
        }
        let matrix = |rows: &[(usize, Vec<f64>)]| {
            DMatrix::from_row_iterator(s, s, rows.iter().flat_map(|(_, r)| r.iter().copied()))
        };
        let pair = Self::new(matrix(&body[..s]), matrix(&body[s..2 * s]), n)?;
        let h = match body.get(2 * s) {
            Some((_, r)) => Some(TestFunction::new(r.clone())?),
            None => None,
        };
        Ok((pair, h))
    }

    pub fn load(path: &Path) -> Result<(Self, Option<TestFunction>)> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self, h: Option<&TestFunction>) -> String {
        let mut out = format!("{} {}\n", self.n_states(), self.horizon);
        for m in [&self.p1, &self.q1] {
            for row in m.row_iter() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(out, "{}", cells.join(" "));
            }
        }
        if let Some(h) = h {
            let cells: Vec<String> = h.values.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }
}

fn dirichlet_kernel<R: Rng + ?Sized>(rng: &mut R, s: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(s, s);
    for i in 0..s {
        let mut total = 0.0;
        for j in 0..s {
            let e: f64 = rng.sample(Exp1);
            m[(i, j)] = e;
            total += e;
        }
        for j in 0..s {
            m[(i, j)] /= total;
        }
    }
    m
}

/// Result of checking the identity on many random instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub trials: usize,
    pub max_abs_residual: f64,
}

/// Check `lhs == rhs_telescope` on `trials` random instances with `S <= max_states`
/// and `2 <= N <= max_horizon`, over every starting state.
pub fn verify_identity<R: Rng + ?Sized>(
    rng: &mut R,
    trials: usize,
    max_states: usize,
    max_horizon: usize,
) -> Result<IdentityCheck> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let s = rng.random_range(1..=max_states);
        let n = rng.random_range(2..=max_horizon);
        let pair = FiniteChainPair::random(rng, s, n)?;
        let h = TestFunction::new((0..s).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        for x in 0..s {
            let r = pair.lhs(&h, x)? - pair.rhs_telescope(&h, x)?;
            worst = worst.max(r.abs());
        }
    }
    Ok(IdentityCheck {
        trials,
        max_abs_residual: worst,
    })
}
