//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test --release --test acceptance` runs everything; positional
//! arguments select criteria by number or by a substring of their name.
//! Criteria listed in `KNOWN_FAILURES` still print FAIL but do not fail the
//! run; the README explains why each one cannot pass as stated.

use std::time::{Duration, Instant};

use markov_approx::chain_compare::verify_identity;
use markov_approx::normal_clt::Innovation;
use markov_approx::rate_harness::{
    band_check, clt_bound_compliance, decreasing_with_param, envelope_check, fit_rate, run_sweep, Fixed, LogCorrection,
    StableAxis, SweepSpec, SweepTable,
};
use markov_approx::sampling::audit::{pareto_audit, stable_cf_audit};
use markov_approx::sampling::{RngStream, StableParams};
use markov_approx::sgd_diffusion::{
    check_assumptions, check_semigroup_contraction, moment_audit, LipschitzFn, QuadraticModel, SgdConfig,
};
use markov_approx::stable_ou::{em_moment_audit, scaling_ratio_test, StableOuConfig};
use markov_approx::wasserstein::{solve_assignment, w1_1d_values, w1_assignment, SampleSet};
use markov_approx::VectorState;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// (criterion, reason) pairs that fail by construction.
const KNOWN_FAILURES: &[(u32, &str)] = &[(
    7,
    "dividing a true n^-1/2 rate by (1 + ln n) over n = 4..1024 gives a slope near -0.71",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within_time(start: Instant, limit: Duration) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("{:.1} s of {} s", t.as_secs_f64(), limit.as_secs()))
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

fn unflagged(table: &SweepTable) -> String {
    table
        .rows
        .iter()
        .map(|r| format!("{:.3e}{}", r.w1, if r.flagged { "*" } else { "" }))
        .collect::<Vec<_>>()
        .join(" ")
}

fn c1_framework() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(1, 0).rng();
    let check = verify_identity(&mut rng, 500, 8, 12).expect("identity check runs");
    let (fast, time) = within_time(start, Duration::from_secs(10));
    outcome(
        check.max_abs_residual <= 1e-10 && fast,
        format!("500 instances, max residual {:.2e}, {time}", check.max_abs_residual),
    )
}

fn stable_grid() -> Vec<StableParams> {
    let mut v = Vec::new();
    for alpha in [1.2, 1.5, 1.8] {
        for d in [1, 2] {
            v.push(StableParams::new(alpha, d).unwrap());
        }
    }
    v
}

fn c2_stable_cf() -> Outcome {
    let start = Instant::now();
    let m = 1_000_000;
    let mut worst = 0.0f64;
    let mut pass = true;
    for (i, p) in stable_grid().iter().enumerate() {
        for pt in stable_cf_audit(p, &[0.5, 1.0, 2.0], m, &RngStream::new(2, i as u64)).unwrap() {
            worst = worst.max((pt.empirical - pt.exact).abs());
            pass &= (pt.empirical - pt.exact).abs() <= 3.0 / (m as f64).sqrt();
        }
    }
    let (fast, time) = within_time(start, Duration::from_secs(60));
    outcome(
        pass && fast,
        format!("18 points, max |cf - exact| {worst:.2e} vs {:.1e}, {time}", 3e-3),
    )
}

fn c3_pareto() -> Outcome {
    let mut pass = true;
    let mut min_p = 1.0f64;
    let mut violations = 0;
    for (i, p) in stable_grid().iter().enumerate() {
        let a = pareto_audit(p, 100_000, 0.01, &RngStream::new(3, i as u64)).unwrap();
        pass &= a.p_value >= 0.01 && a.support_violations == 0;
        min_p = min_p.min(a.p_value);
        violations += a.support_violations;
    }
    outcome(
        pass,
        format!("6 laws, smallest KS p-value {min_p:.3}, support violations {violations}"),
    )
}

fn c4_sgd() -> Outcome {
    let start = Instant::now();
    let grid = (3..=8).map(|k| 2f64.powi(-k)).collect();
    let fixed = Fixed::Sgd {
        model: QuadraticModel::example1(diag(&[1.0, 2.0])).unwrap(),
        x0: VectorState::new(vec![5.0, 5.0]).unwrap(),
        t: 2.0,
        sde_dt: None,
    };
    let spec = SweepSpec::new(fixed, grid, 200_000, 1).unwrap();
    let table = run_sweep(&spec).unwrap();
    let fit = match fit_rate(&table, LogCorrection::Divide1PlusLog) {
        Ok(f) => f,
        Err(e) => return outcome(false, format!("no fit: {e}")),
    };
    let env = envelope_check(&table, 1.0, LogCorrection::Divide1PlusLog).unwrap();
    let (fast, time) = within_time(start, Duration::from_secs(300));
    outcome(
        (0.75..=1.25).contains(&fit.slope) && env.all_below && fast,
        format!(
            "corrected slope {:.4} +- {:.4} in [0.75, 1.25], envelope C {:.3} holds: {}, {time}",
            fit.slope, fit.half_width, env.c, env.all_below
        ),
    )
}

fn c5_stable_rate() -> Outcome {
    let start = Instant::now();
    let grid = (2..=7).map(|k| 2f64.powi(-k)).collect();
    let fixed = Fixed::Stable {
        alpha: 1.5,
        dim: 1,
        x0: VectorState::zeros(1).unwrap(),
        axis: StableAxis::Eta { t: 2.0 },
    };
    let spec = SweepSpec::new(fixed, grid, 1_000_000, 3).unwrap();
    let table = run_sweep(&spec).unwrap();
    let monotone = decreasing_with_param(&table);
    let (fast, time) = within_time(start, Duration::from_secs(600));
    match fit_rate(&table, LogCorrection::None) {
        Ok(fit) => outcome(
            (0.03..=0.63).contains(&fit.slope) && monotone && fast,
            format!(
                "slope {:.4} +- {:.4} in [0.03, 0.63], monotone {monotone}, w1 {} (* = floor-flagged), {time}",
                fit.slope,
                fit.half_width,
                unflagged(&table)
            ),
        ),
        Err(e) => outcome(false, format!("no fit: {e}; w1 {}", unflagged(&table))),
    }
}

fn c6_uniform() -> Outcome {
    let grid = (5..=10).map(|k| 2f64.powi(k)).collect();
    let fixed = Fixed::Stable {
        alpha: 1.5,
        dim: 1,
        x0: VectorState::zeros(1).unwrap(),
        axis: StableAxis::Horizon { eta: 2f64.powi(-5) },
    };
    let spec = SweepSpec::new(fixed, grid, 200_000, 4).unwrap();
    let table = run_sweep(&spec).unwrap();
    let band = band_check(&table).unwrap();
    outcome(
        band.passed,
        format!(
            "max w1 {:.4} <= 2 * min {:.4} + 4 * max stderr {:.4}",
            band.max_w1, band.min_w1, band.max_stderr
        ),
    )
}

fn c7_clt() -> Outcome {
    let start = Instant::now();
    let grid: Vec<f64> = vec![4.0, 16.0, 64.0, 256.0, 1024.0];
    let mut bound_ok = true;
    let mut slope_ok = true;
    let mut parts = Vec::new();
    for innovation in [Innovation::Rademacher, Innovation::CenteredExponential] {
        for dim in [1usize, 3] {
            let mut spec = SweepSpec::new(
                Fixed::Clt {
                    dim,
                    innovation,
                    n_proj: 64,
                },
                grid.clone(),
                200_000,
                5,
            )
            .unwrap();
            spec.resamples = if dim == 1 { 100 } else { 50 };
            let table = run_sweep(&spec).unwrap();
            let compliance = clt_bound_compliance(&spec, &table, 512, 4).unwrap();
            bound_ok &= compliance.all_within();
            let slope = match fit_rate(&table, LogCorrection::Divide1PlusLog) {
                Ok(f) => {
                    slope_ok &= (-0.65..=-0.38).contains(&f.slope);
                    format!("{:.3}", f.slope)
                }
                Err(_) => {
                    slope_ok = false;
                    "no fit".to_string()
                }
            };
            parts.push(format!("{} d={dim}: slope {slope}", innovation.name()));
        }
    }
    let (fast, time) = within_time(start, Duration::from_secs(300));
    outcome(
        bound_ok && slope_ok && fast,
        format!(
            "(a) bound holds: {bound_ok}; (b) slopes in [-0.65, -0.38]: {slope_ok} [{}]; {time}",
            parts.join(", ")
        ),
    )
}

fn c8_moments() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let models = [
        ("example1", QuadraticModel::example1(diag(&[1.0, 2.0])).unwrap()),
        (
            "example2",
            QuadraticModel::example2(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), 0.5).unwrap(),
        ),
    ];
    for (i, (name, model)) in models.iter().enumerate() {
        let eta = model.claimed_constants().admissible_eta();
        let cfg = SgdConfig {
            eta,
            horizon_n: 10_000,
            x0: VectorState::new(vec![2.0, -2.0]).unwrap(),
            n_paths: 1000,
            sde_dt: None,
        };
        let a = moment_audit(model, &cfg, 10_000, None, &RngStream::new(8, i as u64)).unwrap();
        pass &= !a.flagged;
        parts.push(format!(
            "{name} eta {eta:.3e} max E|w|^4 {:.3} <= {:.3}",
            a.max_moment, a.bound
        ));
    }
    let cfg = StableOuConfig::new(1.5, 1, 0.5, 2, VectorState::new(vec![1.0]).unwrap(), 1000).unwrap();
    let em = em_moment_audit(&cfg, 10_000, 10.0, &RngStream::new(8, 10)).unwrap();
    pass &= !em.flagged;
    let scaling = scaling_ratio_test(&cfg, 10.0, 10_000, 10.0, &RngStream::new(8, 11)).unwrap();
    pass &= scaling.passed;
    parts.push(format!(
        "stable max E|Y| {:.3} <= {:.1}, scaling ratio {:.3} vs linear {:.3}",
        em.max_moment, em.bound, scaling.ratio, scaling.linear_ratio
    ));
    outcome(pass, parts.join("; "))
}

fn c9_assumptions() -> Outcome {
    let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let lmin = 1.5 - 0.5f64.sqrt();
    let e1 = check_assumptions(
        &QuadraticModel::example1(diag(&[1.0, 2.0])).unwrap(),
        10_000,
        &RngStream::new(9, 0),
    )
    .unwrap();
    let e2 = check_assumptions(
        &QuadraticModel::example2(h, 0.5).unwrap(),
        10_000,
        &RngStream::new(9, 1),
    )
    .unwrap();
    let c1 = &e1.constants;
    let c2 = &e2.constants;
    let ok1 = c1.theta[0] == 1.0 && c1.delta == 1.0 && c1.theta[1..].iter().all(|t| *t == 0.0) && e1.passed;
    let ok2 = (c2.theta[0] - (lmin + 0.5)).abs() < 1e-12 && c2.delta == 0.5 && e2.passed;
    outcome(
        ok1 && ok2,
        format!(
            "example1 theta0 {} delta {} theta1..5 {:?}; example2 theta0 {:.6} (lambda_min + gamma {:.6}) delta {}; 10^4 probes each",
            c1.theta[0],
            c1.delta,
            &c1.theta[1..],
            c2.theta[0],
            lmin + 0.5,
            c2.delta
        ),
    )
}

fn c10_contraction() -> Outcome {
    let model = QuadraticModel::example1(diag(&[1.0, 2.0])).unwrap();
    let mut pass = true;
    let mut worst = f64::NEG_INFINITY;
    let fns = [
        LipschitzFn::Coordinate(0),
        LipschitzFn::Coordinate(1),
        LipschitzFn::Norm,
        LipschitzFn::SoftRamp,
    ];
    for (i, t) in [0.5, 2.0, 8.0].into_iter().enumerate() {
        for (j, h) in fns.into_iter().enumerate() {
            let stream = RngStream::new(10, (i * fns.len() + j) as u64);
            let r = check_semigroup_contraction(&model, 0.1, t, h, 1e-4, 20, 4000, &stream).unwrap();
            pass &= r.passed;
            for p in &r.probes {
                worst = worst.max(p.estimate - p.bound);
            }
        }
    }
    outcome(
        pass,
        format!("3 times x 4 test functions x 20 probes, max (estimate - bound) {worst:.3e}"),
    )
}

fn c11_wasserstein() -> Outcome {
    let mut rng = RngStream::new(11, 0).rng();
    let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut worst_bf = 0.0f64;
    for _ in 0..200 {
        let d = rng.random_range(1..=3);
        let mut pts = || {
            (0..3)
                .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        let (a, b) = (pts(), pts());
        let w = w1_assignment(
            &SampleSet::from_points(&a).unwrap(),
            &SampleSet::from_points(&b).unwrap(),
        )
        .unwrap()
        .value;
        let bf = perms
            .iter()
            .map(|p| (0..3).map(|i| dist(&a[i], &b[p[i]])).sum::<f64>() / 3.0)
            .fold(f64::INFINITY, f64::min);
        worst_bf = worst_bf.max((w - bf).abs());
    }
    // also the raw solver on a cost with a unique optimum
    let m = solve_assignment(3, |i, j| if i == (j + 1) % 3 { 0.0 } else { 1.0 });
    let solver_ok = m == vec![2, 0, 1];

    let mut axioms = true;
    let mut worst_eq = 0.0f64;
    for _ in 0..1000 {
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-10.0..10.0)).collect::<Vec<f64>>();
        let n = 1 + (draw(1)[0].abs() as usize) % 20;
        let (a, b, c) = (draw(n), draw(n + 3), draw(n + 1));
        let ab = w1_1d_values(&a, &b).unwrap();
        axioms &= w1_1d_values(&a, &a).unwrap() == 0.0;
        axioms &= ab >= 0.0 && ab == w1_1d_values(&b, &a).unwrap();
        axioms &= ab <= w1_1d_values(&a, &c).unwrap() + w1_1d_values(&c, &b).unwrap() + 1e-12;
        // dyadic scaling is exact in floating point
        let k = 2f64.powi(rng.random_range(-6..7));
        let s = |v: &[f64], f: f64| v.iter().map(|x| x * f).collect::<Vec<_>>();
        axioms &= w1_1d_values(&s(&a, k), &s(&b, k)).unwrap() == k * ab;
        let lam: f64 = rng.random_range(0.1..10.0);
        worst_eq =
            worst_eq.max((w1_1d_values(&s(&a, lam), &s(&b, lam)).unwrap() - lam * ab).abs() / (lam * (1.0 + ab)));
        let shift: f64 = rng.random_range(-100.0..100.0);
        let t = |v: &[f64]| v.iter().map(|x| x + shift).collect::<Vec<_>>();
        worst_eq = worst_eq.max((w1_1d_values(&t(&a), &t(&b)).unwrap() - ab).abs() / (1.0 + shift.abs()));
    }
    // the same on the multivariate assignment estimator
    let mut worst_sym = 0.0f64;
    for _ in 0..1000 {
        let d = rng.random_range(1..=3);
        let n = rng.random_range(1..=5);
        let mut pts = || {
            let p: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-10.0..10.0)).collect())
                .collect();
            SampleSet::from_points(&p).unwrap()
        };
        let (a, b, c) = (pts(), pts(), pts());
        let w = |x: &SampleSet, y: &SampleSet| w1_assignment(x, y).unwrap().value;
        let ab = w(&a, &b);
        axioms &= w(&a, &a) == 0.0 && ab >= 0.0;
        worst_sym = worst_sym.max((ab - w(&b, &a)).abs() / (1.0 + ab));
        axioms &= ab <= w(&a, &c) + w(&c, &b) + 1e-12;
        let k = 2f64.powi(rng.random_range(-6..7));
        axioms &= w(&a.map(|x| x * k), &b.map(|x| x * k)) == k * ab;
        let lam: f64 = rng.random_range(0.1..10.0);
        worst_eq = worst_eq.max((w(&a.map(|x| x * lam), &b.map(|x| x * lam)) - lam * ab).abs() / (lam * (1.0 + ab)));
        let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-100.0..100.0)).collect();
        let size = shift.iter().map(|s| s.abs()).fold(0.0, f64::max);
        worst_eq = worst_eq.max((w(&a.translate(&shift), &b.translate(&shift)) - ab).abs() / (1.0 + size));
    }
    outcome(
        worst_bf <= 1e-12 && solver_ok && axioms && worst_eq <= 1e-12 && worst_sym <= 1e-12,
        format!(
            "assignment vs 3! search max diff {worst_bf:.1e}; axioms on 1000 + 1000 instances: {axioms}; \
             assignment symmetry error {worst_sym:.1e}; max relative equivariance error {worst_eq:.1e}"
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "framework identity", c1_framework),
        (2, "stable sampler cf", c2_stable_cf),
        (3, "pareto law", c3_pareto),
        (4, "sgd rate", c4_sgd),
        (5, "stable em rate", c5_stable_rate),
        (6, "uniform in time", c6_uniform),
        (7, "clt bound and rate", c7_clt),
        (8, "moment audits", c8_moments),
        (9, "assumption checkers", c9_assumptions),
        (10, "semigroup contraction", c10_contraction),
        (11, "wasserstein estimators", c11_wasserstein),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |n: u32, name: &str| {
        filters.is_empty()
            || filters
                .iter()
                .any(|f| f.parse::<u32>().map_or(name.contains(f.as_str()), |k| k == n))
    };

    let mut unexpected = 0;
    let mut ran = 0;
    for (n, name, run) in criteria {
        if !selected(n, name) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let o = run();
        let known = KNOWN_FAILURES.iter().find(|k| k.0 == n);
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n:>2} {:<24} {verdict}  {} [{:.1} s]",
            name,
            o.detail,
            start.elapsed().as_secs_f64()
        );
        match (o.pass, known) {
            (false, Some((_, why))) => println!("             known failure: {why}"),
            (false, None) => unexpected += 1,
            (true, Some(_)) => println!("             listed as a known failure but passed"),
            (true, None) => {}
        }
    }
    println!("acceptance: {ran} criteria run, {unexpected} unexpected failures");
    if unexpected > 0 {
        std::process::exit(1);
    }
}
