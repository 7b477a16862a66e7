//! Monte Carlo output checked against values computed independently
//! (closed-form Gaussian laws, characteristic-function products, exact
//! lattice distances), frozen here to full precision.

use markov_approx::normal_clt::{self, CltConfig, Innovation};
use markov_approx::sampling::{stable_constants, RngStream};
use markov_approx::sgd_diffusion::{
    sample_sde_marginal, sample_sgd_marginal, simulate_pair_marginals, QuadraticModel, SgdConfig,
};
use markov_approx::stable_ou::{self, StableOuConfig};
use markov_approx::wasserstein::{estimate_with_stderr, Estimator};
use markov_approx::VectorState;
use nalgebra::DMatrix;

fn example1() -> QuadraticModel {
    QuadraticModel::example1(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0]))).unwrap()
}

// Sum over the two coordinates of the W1 distance between the Gaussian SGD
// marginal and the Gaussian diffusion marginal, x0 = (5, 5), T = 2.
const SGD_EXACT_W1: [(i32, f64); 3] = [
    (3, 0.128_709_668_125_504_83),
    (5, 0.032_457_516_772_729_25),
    (7, 0.008_140_214_270_679_735),
];

#[test]
fn sgd_pair_distance_matches_gaussian_oracle() {
    let model = example1();
    for (k, exact) in SGD_EXACT_W1 {
        let eta = 2f64.powi(-k);
        let cfg = SgdConfig {
            eta,
            horizon_n: (2.0 / eta).round() as usize,
            x0: VectorState::new(vec![5.0, 5.0]).unwrap(),
            n_paths: 100_000,
            sde_dt: None,
        };
        let stream = RngStream::new(11, k as u64);
        let (sgd, sde) = simulate_pair_marginals(&model, &cfg, &stream).unwrap();
        let w = estimate_with_stderr(&sgd, &sde, &Estimator::CoordinateSum, 50, &stream.substream(9)).unwrap();
        let other = sample_sde_marginal(&model, &cfg, &stream.substream(5)).unwrap();
        let floor = Estimator::CoordinateSum.estimate(&sde, &other).unwrap().value;
        assert!(
            (w.value - exact).abs() <= 4.0 * w.stderr + floor,
            "eta 2^-{k}: {} vs {exact} (stderr {}, floor {floor})",
            w.value,
            w.stderr
        );
    }
}

#[test]
fn sgd_chain_moments_match_ar1_recursion() {
    // w_k = (1 - eta h) w_{k-1} + eta h zeta_k per coordinate
    let model = example1();
    let (eta, n) = (0.1, 40);
    let cfg = SgdConfig {
        eta,
        horizon_n: n,
        x0: VectorState::new(vec![3.0, -1.0]).unwrap(),
        n_paths: 200_000,
        sde_dt: None,
    };
    let s = sample_sgd_marginal(&model, &cfg, &RngStream::new(4, 0)).unwrap();
    let mean = s.mean();
    let cov = s.covariance();
    for (i, (h, x)) in [(1.0f64, 3.0f64), (2.0, -1.0)].into_iter().enumerate() {
        let a = 1.0 - eta * h;
        let m = a.powi(n as i32) * x;
        let v = (eta * h).powi(2) * (1.0 - a.powi(2 * n as i32)) / (1.0 - a * a);
        let se_m = (v / 200_000.0).sqrt();
        let se_v = v * (2.0 / 200_000.0f64).sqrt();
        assert!((mean[i] - m).abs() < 4.0 * se_m, "mean {i}: {} vs {m}", mean[i]);
        assert!(
            (cov[i * 2 + i] - v).abs() < 4.0 * se_v,
            "var {i}: {} vs {v}",
            cov[i * 2 + i]
        );
    }
    // coordinates are driven by independent noise
    assert!(cov[1].abs() < 4.0 * (cov[0] * cov[3] / 200_000.0).sqrt());
}

#[test]
fn stable_em_characteristic_function_matches_product_oracle() {
    // E cos(lambda Y_N) = prod_j phi_P(eta^{1/alpha} (1 - eta/alpha)^j lambda / sigma)
    // with phi_P the Pareto characteristic function, alpha = 1.5, d = 1, T = 2.
    let frozen: [(f64, [(f64, f64); 3]); 2] = [
        (
            0.25,
            [
                (0.5, 0.755_230_109_658_739_7),
                (1.0, 0.468_326_071_345_038_34),
                (2.0, 0.123_863_410_888_279_79),
            ],
        ),
        (
            0.0625,
            [
                (0.5, 0.754_798_863_462_577_5),
                (1.0, 0.464_751_308_478_290_66),
                (2.0, 0.125_971_978_456_326_18),
            ],
        ),
    ];
    let m = 1_000_000;
    for (i, (eta, points)) in frozen.into_iter().enumerate() {
        let n = (2.0 / eta).round() as usize;
        let cfg = StableOuConfig::new(1.5, 1, eta, n, VectorState::zeros(1).unwrap(), m).unwrap();
        let em = stable_ou::sample_em_marginal(&cfg, &RngStream::new(21, i as u64)).unwrap();
        for (lambda, exact) in points {
            let cf = em.as_flat().iter().map(|y| (lambda * y).cos()).sum::<f64>() / m as f64;
            assert!(
                (cf - exact).abs() < 4.0 / (m as f64).sqrt(),
                "eta {eta} lambda {lambda}: {cf} vs {exact}"
            );
        }
    }
}

#[test]
fn exact_ou_marginal_characteristic_function() {
    // started at x: cos(lambda x e^{-t/alpha}) exp(-(1 - e^{-t}) |lambda|^alpha)
    let (alpha, x, t, m) = (1.5, 1.0, 0.7, 400_000);
    let params = stable_constants(alpha, 1).unwrap();
    let cfg = StableOuConfig::new(alpha, 1, t / 2.0, 2, VectorState::new(vec![x]).unwrap(), m).unwrap();
    let s = stable_ou::sample_exact_marginal(&cfg, &RngStream::new(8, 0)).unwrap();
    assert_eq!(params.alpha, alpha);
    for lambda in [0.5, 1.0, 2.0] {
        let cf = s.as_flat().iter().map(|y| (lambda * y).cos()).sum::<f64>() / m as f64;
        let exact = (lambda * x * (-t / alpha).exp()).cos() * (-(1.0 - (-t).exp()) * lambda.powf(alpha)).exp();
        assert!(
            (cf - exact).abs() < 4.0 / (m as f64).sqrt(),
            "lambda {lambda}: {cf} vs {exact}"
        );
    }
}

#[test]
fn rademacher_gap_matches_lattice_distance() {
    // exact W1 between the standardised binomial lattice and N(0, 1)
    let exact = [
        (4usize, 0.257_076_269_847_553_66),
        (16, 0.125_600_028_510_808_7),
        (64, 0.062_569_533_862_453_33),
    ];
    let cfg = CltConfig::new(1, Innovation::Rademacher, exact.iter().map(|e| e.0).collect(), 200_000).unwrap();
    for (i, (n, w)) in exact.into_iter().enumerate() {
        let g = normal_clt::measure_gap(&cfg, n, &RngStream::new(31, i as u64)).unwrap();
        assert!(
            (g.w1 - w).abs() <= 4.0 * g.stderr + g.floor,
            "n {n}: {} vs {w} (stderr {}, floor {})",
            g.w1,
            g.stderr,
            g.floor
        );
        assert!(g.within_bound);
    }
}
