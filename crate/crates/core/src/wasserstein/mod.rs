//! Empirical Wasserstein-1 estimators.
//!
//! * [`w1_exact_1d`]: quantile coupling on the line (exact).
//! * [`w1_assignment`]: exact optimal matching for equal-size samples in any
//!   dimension, via a shortest-augmenting-path assignment solver.
//! * [`w1_sliced`]: average of 1-D distances over random projections, a proxy
//!   for larger multivariate samples.
//! * [`w1_coordinate_sum`]: sum of the per-coordinate 1-D distances, an upper
//!   bound on the Euclidean W1.
//!
//! [`bootstrap_stderr`] attaches a resampling error bar to any of them.

mod assignment;
mod io;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use assignment::{solve_assignment, ASSIGNMENT_CAP};
pub use io::{read_csv, read_samples, write_csv, write_samples};

use crate::error::{Error, Result};
use crate::sampling::{fill_gaussian, RngStream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SampleMeta {
    pub seed: u64,
    pub tag: String,
}

/// i.i.d. draws of a `d`-dimensional law, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    data: Vec<f64>,
    pub meta: SampleMeta,
}

impl SampleSet {
    pub fn from_flat(dim: usize, data: Vec<f64>, meta: SampleMeta) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if data.is_empty() {
            return Err(Error::EmptySample);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: data.len() % dim,
            });
        }
        Ok(Self { dim, data, meta })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().ok_or(Error::EmptySample)?.len();
        let mut data = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            data.extend_from_slice(p);
        }
        Self::from_flat(dim, data, SampleMeta::default())
    }

    pub fn from_scalars(values: Vec<f64>) -> Result<Self> {
        Self::from_flat(1, values, SampleMeta::default())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn coordinate(&self, c: usize) -> Vec<f64> {
        self.points().map(|p| p[c]).collect()
    }

    pub fn project(&self, dir: &[f64]) -> Vec<f64> {
        self.points()
            .map(|p| p.iter().zip(dir).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| f(*v)).collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn translate(&self, shift: &[f64]) -> Self {
        let mut out = self.clone();
        for p in out.data.chunks_mut(self.dim) {
            p.iter_mut().zip(shift).for_each(|(v, c)| *v += c);
        }
        out
    }

    /// Per-coordinate mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.points() {
            m.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Sample covariance (divisor `n - 1`), row-major `d x d`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let m = self.mean();
        let mut c = vec![0.0; d * d];
        for p in self.points() {
            for i in 0..d {
                for j in 0..d {
                    c[i * d + j] += (p[i] - m[i]) * (p[j] - m[j]);
                }
            }
        }
        let n = (self.len().max(2) - 1) as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W1Method {
    Exact1d,
    Assignment,
    Sliced,
    CoordinateSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W1Estimate {
    pub value: f64,
    pub stderr: f64,
    pub method: W1Method,
    /// Only meaningful for [`W1Method::Sliced`].
    pub n_projections: usize,
}

impl W1Estimate {
    fn bare(value: f64, method: W1Method) -> Self {
        Self {
            value,
            stderr: 0.0,
            method,
            n_projections: 0,
        }
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// `(1/n) sum |a_(i) - b_(i)|` for sorted equal-length inputs.
fn sorted_equal_w1(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    s / a.len() as f64
}

/// `int |F_a - F_b| dx` for sorted inputs of any length.
fn sorted_cdf_w1(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.min(*y),
            (Some(x), None) => *x,
            (None, Some(y)) => *y,
            (None, None) => unreachable!(),
        };
        total += ((i as f64 / na) - (j as f64 / nb)).abs() * (next - prev);
        prev = next;
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
    }
    total
}

fn w1_sorted(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() {
        sorted_equal_w1(a, b)
    } else {
        sorted_cdf_w1(a, b)
    }
}

/// Exact W1 between two scalar samples.
pub fn w1_1d_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(w1_sorted(&sorted(a.to_vec()), &sorted(b.to_vec())))
}

pub fn w1_exact_1d(a: &SampleSet, b: &SampleSet) -> Result<W1Estimate> {
    for s in [a, b] {
        if s.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: s.dim(),
            });
        }
    }
    Ok(W1Estimate::bare(
        w1_1d_values(a.as_flat(), b.as_flat())?,
        W1Method::Exact1d,
    ))
}

fn check_pair(a: &SampleSet, b: &SampleSet) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// Exact W1 between equal-size empirical laws by optimal matching.
pub fn w1_assignment(a: &SampleSet, b: &SampleSet) -> Result<W1Estimate> {
    check_pair(a, b)?;
    let n = a.len();
    if n != b.len() {
        return Err(Error::SizeMismatch(n, b.len()));
    }
    if n > ASSIGNMENT_CAP {
        return Err(Error::CapExceeded {
            size: n,
            cap: ASSIGNMENT_CAP,
        });
    }
    let cost = |i: usize, j: usize| {
        a.point(i)
            .iter()
            .zip(b.point(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let matching = solve_assignment(n, cost);
    let total: f64 = matching.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
    Ok(W1Estimate::bare(total / n as f64, W1Method::Assignment))
}

/// Unit directions drawn uniformly on the sphere, deterministic in `stream`.
pub fn projection_directions(dim: usize, n_proj: usize, stream: &RngStream) -> Vec<Vec<f64>> {
    let mut rng = stream.rng();
    (0..n_proj)
        .map(|_| loop {
            let mut v = vec![0.0; dim];
            fill_gaussian(&mut rng, &mut v);
            let n = crate::state::norm(&v);
            if n > 0.0 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

pub fn w1_sliced(a: &SampleSet, b: &SampleSet, n_proj: usize, stream: &RngStream) -> Result<W1Estimate> {
    check_pair(a, b)?;
    if a.dim() < 2 {
        return Err(Error::domain("sliced W1 needs dim >= 2"));
    }
    if n_proj == 0 {
        return Err(Error::domain("sliced W1 needs at least one projection"));
    }
    let dirs = projection_directions(a.dim(), n_proj, stream);
    let per: Vec<f64> = dirs
        .par_iter()
        .map(|d| w1_sorted(&sorted(a.project(d)), &sorted(b.project(d))))
        .collect();
    let mut est = W1Estimate::bare(per.iter().sum::<f64>() / n_proj as f64, W1Method::Sliced);
    est.n_projections = n_proj;
    Ok(est)
}

/// Ratio of exact assignment W1 to sliced W1, pooled over `reps` pairs of
/// `size`-point subsamples drawn without replacement. Slopes are unchanged by
/// a constant factor, so the ratio only rescales reported distances.
pub fn sliced_calibration(
    a: &SampleSet,
    b: &SampleSet,
    n_proj: usize,
    size: usize,
    reps: usize,
    stream: &RngStream,
) -> Result<f64> {
    check_pair(a, b)?;
    if size < 2 || size > a.len().min(b.len()) || reps == 0 {
        return Err(Error::domain(format!(
            "calibration needs 2 <= size <= {} and reps >= 1, got size {size}, reps {reps}",
            a.len().min(b.len())
        )));
    }
    let mut rng = stream.rng();
    let mut pick = |s: &SampleSet| -> Result<SampleSet> {
        let idx = rand::seq::index::sample(&mut rng, s.len(), size);
        let data = idx.iter().flat_map(|i| s.point(i).iter().copied()).collect();
        SampleSet::from_flat(s.dim(), data, s.meta.clone())
    };
    let mut exact = 0.0;
    let mut sliced = 0.0;
    for r in 0..reps {
        let (sa, sb) = (pick(a)?, pick(b)?);
        exact += w1_assignment(&sa, &sb)?.value;
        sliced += w1_sliced(&sa, &sb, n_proj, &stream.substream(r as u64 + 1))?.value;
    }
    if sliced <= 0.0 {
        return Err(Error::domain("sliced distance vanished on every subsample"));
    }
    Ok(exact / sliced)
}

/// Sum over coordinates of the exact 1-D distances between the marginals.
pub fn w1_coordinate_sum(a: &SampleSet, b: &SampleSet) -> Result<W1Estimate> {
    check_pair(a, b)?;
    let total: f64 = (0..a.dim())
        .into_par_iter()
        .map(|c| w1_1d_values(&a.coordinate(c), &b.coordinate(c)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(W1Estimate::bare(total, W1Method::CoordinateSum))
}

/// An estimator choice that can be both evaluated and bootstrapped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Exact1d,
    Assignment,
    Sliced { n_proj: usize, stream: RngStream },
    CoordinateSum,
}

impl Estimator {
    pub fn method(&self) -> W1Method {
        match self {
            Estimator::Exact1d => W1Method::Exact1d,
            Estimator::Assignment => W1Method::Assignment,
            Estimator::Sliced { .. } => W1Method::Sliced,
            Estimator::CoordinateSum => W1Method::CoordinateSum,
        }
    }

    pub fn estimate(&self, a: &SampleSet, b: &SampleSet) -> Result<W1Estimate> {
        match self {
            Estimator::Exact1d => w1_exact_1d(a, b),
            Estimator::Assignment => w1_assignment(a, b),
            Estimator::Sliced { n_proj, stream } => w1_sliced(a, b, *n_proj, stream),
            Estimator::CoordinateSum => w1_coordinate_sum(a, b),
        }
    }

    /// 1-D views whose distances the estimator averages (`Sliced`) or sums
    /// (`CoordinateSum`, `Exact1d`). `None` for the assignment estimator.
    fn views(&self, s: &SampleSet) -> Option<Vec<Vec<f64>>> {
        match self {
            Estimator::Exact1d => Some(vec![s.as_flat().to_vec()]),
            Estimator::CoordinateSum => Some((0..s.dim()).map(|c| s.coordinate(c)).collect()),
            Estimator::Sliced { n_proj, stream } => Some(
                projection_directions(s.dim(), *n_proj, stream)
                    .iter()
                    .map(|d| s.project(d))
                    .collect(),
            ),
            Estimator::Assignment => None,
        }
    }
}

/// Draw multinomial resampling counts for `n` items.
fn resample_counts<R: Rng + ?Sized>(rng: &mut R, n: usize, counts: &mut Vec<u32>) {
    counts.clear();
    counts.resize(n, 0);
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
}

/// Both samples of one 1-D view merged in sorted order. `idx` points into the
/// combined count vector `[counts_a, counts_b]`; `gap[k]` is the distance
/// from the `k`-th merged value to the next.
struct MergedView {
    idx: Vec<u32>,
    gap: Vec<f64>,
}

fn merged_view(a: &[f64], b: &[f64]) -> MergedView {
    let n = a.len();
    let value = |i: u32| {
        if (i as usize) < n {
            a[i as usize]
        } else {
            b[i as usize - n]
        }
    };
    let mut idx: Vec<u32> = (0..(n + b.len()) as u32).collect();
    idx.sort_unstable_by(|&i, &j| value(i).total_cmp(&value(j)));
    let gap = idx.windows(2).map(|w| value(w[1]) - value(w[0])).collect();
    MergedView { idx, gap }
}

/// W1 between the two samples of `m` reweighted by resampling counts;
/// `counts` holds `+count` for the first sample and `-count` for the second,
/// each summing to `n`. Equivalent to sorting the resampled values.
fn merged_w1<C: Copy + Into<i64>>(m: &MergedView, counts: &[C], n: usize) -> f64 {
    // running difference of the two unnormalised CDFs
    let mut diff = 0i64;
    let mut total = 0.0;
    for (&i, &g) in m.idx.iter().zip(&m.gap) {
        diff += counts[i as usize].into();
        total += diff.abs() as f64 * g;
    }
    total / n as f64
}

/// Signed combined counts for one resample of two equal-size samples.
enum Counts {
    Narrow(Vec<i16>),
    Wide(Vec<i32>),
}

impl Counts {
    fn draw<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Self {
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        resample_counts(rng, n, &mut ca);
        resample_counts(rng, n, &mut cb);
        let signed = ca.iter().map(|&k| k as i32).chain(cb.iter().map(|&k| -(k as i32)));
        // small counts keep the gathers in cache; larger ones essentially
        // never occur but are handled
        match signed
            .clone()
            .map(|k| i16::try_from(k).ok())
            .collect::<Option<Vec<i16>>>()
        {
            Some(v) => Counts::Narrow(v),
            None => Counts::Wide(signed.collect()),
        }
    }

    fn w1(&self, m: &MergedView, n: usize) -> f64 {
        match self {
            Counts::Narrow(c) => merged_w1(m, c, n),
            Counts::Wide(c) => merged_w1(m, c, n),
        }
    }
}

/// Memory budget for the merged views held at once during a bootstrap.
const MERGED_BUDGET: usize = 64 << 20;

/// Bootstrap standard error of `estimator`: the standard deviation of the
/// estimate over `resamples` with-replacement resamples of both sets.
///
/// For the sorting-based estimators each resample reuses the sorted order of
/// the original data, so a resample costs `O(n)` instead of a fresh sort.
pub fn bootstrap_stderr(
    a: &SampleSet,
    b: &SampleSet,
    estimator: &Estimator,
    resamples: usize,
    stream: &RngStream,
) -> Result<f64> {
    check_pair(a, b)?;
    if resamples < 50 {
        return Err(Error::domain(format!(
            "bootstrap needs >= 50 resamples, got {resamples}"
        )));
    }
    let values: Vec<f64> = match (estimator.views(a), estimator.views(b)) {
        (Some(va), Some(vb)) if a.len() == b.len() => {
            let n = a.len();
            let per_view = 2 * n * (std::mem::size_of::<u32>() + std::mem::size_of::<f64>());
            let chunk = (MERGED_BUDGET / per_view.max(1)).max(1);
            let mut totals = vec![0.0; resamples];
            for (ca, cb) in va.chunks(chunk).zip(vb.chunks(chunk)) {
                let merged: Vec<MergedView> = ca.par_iter().zip(cb).map(|(x, y)| merged_view(x, y)).collect();
                totals.par_iter_mut().enumerate().for_each(|(r, t)| {
                    // same substream per resample in every chunk, so all views
                    // see the same resampled points
                    let counts = Counts::draw(&mut stream.substream(r as u64).rng(), n);
                    *t += merged.iter().map(|m| counts.w1(m, n)).sum::<f64>();
                });
            }
            if matches!(estimator, Estimator::Sliced { .. }) {
                totals.iter_mut().for_each(|t| *t /= va.len() as f64);
            }
            totals
        }
        _ => (0..resamples)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream.substream(r as u64).rng();
                let ra = resample(a, &mut rng);
                let rb = resample(b, &mut rng);
                estimator.estimate(&ra, &rb).map(|e| e.value)
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(std_dev(&values))
}

fn resample<R: Rng + ?Sized>(s: &SampleSet, rng: &mut R) -> SampleSet {
    let n = s.len();
    let mut data = Vec::with_capacity(s.as_flat().len());
    for _ in 0..n {
        data.extend_from_slice(s.point(rng.random_range(0..n)));
    }
    SampleSet::from_flat(s.dim(), data, s.meta.clone()).expect("resample keeps shape")
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Estimate with its bootstrap error bar filled in.
pub fn estimate_with_stderr(
    a: &SampleSet,
    b: &SampleSet,
    estimator: &Estimator,
    resamples: usize,
    stream: &RngStream,
) -> Result<W1Estimate> {
    let mut est = estimator.estimate(a, b)?;
    est.stderr = bootstrap_stderr(a, b, estimator, resamples, stream)?;
    Ok(est)
}
