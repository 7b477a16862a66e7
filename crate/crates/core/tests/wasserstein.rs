use approx::assert_relative_eq;
use markov_approx::sampling::RngStream;
use markov_approx::wasserstein::{
    bootstrap_stderr, read_csv, read_samples, w1_1d_values, w1_assignment, w1_coordinate_sum, w1_exact_1d, w1_sliced,
    write_csv, write_samples, Estimator, SampleSet,
};
use proptest::prelude::*;

fn brute_force(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    fn perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(n - 1) {
            for i in 0..=p.len() {
                let mut q = p.clone();
                q.insert(i, n - 1);
                out.push(q);
            }
        }
        out
    }
    let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    perms(a.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| dist(&a[i], &b[j])).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        / a.len() as f64
}

fn points(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), n)
}

fn set(p: &[Vec<f64>]) -> SampleSet {
    SampleSet::from_points(p).unwrap()
}

proptest! {
    #[test]
    fn assignment_matches_permutation_search(
        (a, b) in (1usize..=6, 1usize..=3).prop_flat_map(|(n, d)| (points(n, d), points(n, d)))
    ) {
        let w = w1_assignment(&set(&a), &set(&b)).unwrap().value;
        let bf = brute_force(&a, &b);
        prop_assert!((w - bf).abs() <= 1e-12 * (1.0 + bf), "{w} vs {bf}");
    }

    #[test]
    fn exact_1d_agrees_with_assignment(a in prop::collection::vec(-5.0f64..5.0, 1..40), seed in 0u64..1000) {
        let mut rng = RngStream::new(seed, 0).rng();
        let b: Vec<f64> = a.iter().map(|x| x * 1.5 + rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let one = w1_1d_values(&a, &b).unwrap();
        let col = |v: &[f64]| v.iter().map(|x| vec![*x]).collect::<Vec<_>>();
        let asg = w1_assignment(&set(&col(&a)), &set(&col(&b))).unwrap().value;
        prop_assert!((one - asg).abs() <= 1e-12 * (1.0 + one));
    }

    #[test]
    fn metric_axioms_1d(
        a in prop::collection::vec(-5.0f64..5.0, 1..30),
        b in prop::collection::vec(-5.0f64..5.0, 1..30),
        c in prop::collection::vec(-5.0f64..5.0, 1..30),
    ) {
        let ab = w1_1d_values(&a, &b).unwrap();
        prop_assert_eq!(w1_1d_values(&a, &a).unwrap(), 0.0);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, w1_1d_values(&b, &a).unwrap());
        let ac = w1_1d_values(&a, &c).unwrap();
        let cb = w1_1d_values(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn equivariance_1d(
        a in prop::collection::vec(-5.0f64..5.0, 1..30),
        b in prop::collection::vec(-5.0f64..5.0, 1..30),
        k in -8i32..8,
        scale in 0.01f64..100.0,
        shift in -50.0f64..50.0,
    ) {
        let w = w1_1d_values(&a, &b).unwrap();
        // powers of two scale exactly in floating point
        let p = 2f64.powi(k);
        let pa: Vec<f64> = a.iter().map(|x| x * p).collect();
        let pb: Vec<f64> = b.iter().map(|x| x * p).collect();
        prop_assert_eq!(w1_1d_values(&pa, &pb).unwrap(), p * w);
        let sa: Vec<f64> = a.iter().map(|x| x * scale).collect();
        let sb: Vec<f64> = b.iter().map(|x| x * scale).collect();
        prop_assert!((w1_1d_values(&sa, &sb).unwrap() - scale * w).abs() <= 1e-12 * scale * (1.0 + w));
        let ta: Vec<f64> = a.iter().map(|x| x + shift).collect();
        let tb: Vec<f64> = b.iter().map(|x| x + shift).collect();
        prop_assert!((w1_1d_values(&ta, &tb).unwrap() - w).abs() <= 1e-12 * (1.0 + shift.abs()));
    }

    #[test]
    fn assignment_metric_and_equivariance(
        (a, b, c) in (2usize..=5, 1usize..=3).prop_flat_map(|(n, d)| (points(n, d), points(n, d), points(n, d))),
        scale in 0.1f64..10.0,
    ) {
        let ab = w1_assignment(&set(&a), &set(&b)).unwrap().value;
        let ba = w1_assignment(&set(&b), &set(&a)).unwrap().value;
        prop_assert_eq!(w1_assignment(&set(&a), &set(&a)).unwrap().value, 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
        let ac = w1_assignment(&set(&a), &set(&c)).unwrap().value;
        let cb = w1_assignment(&set(&c), &set(&b)).unwrap().value;
        prop_assert!(ab <= ac + cb + 1e-12);
        let sa = set(&a).map(|x| x * scale);
        let sb = set(&b).map(|x| x * scale);
        let scaled = w1_assignment(&sa, &sb).unwrap().value;
        prop_assert!((scaled - scale * ab).abs() <= 1e-12 * scale * (1.0 + ab));
        let shift = vec![3.25; a[0].len()];
        let moved = w1_assignment(&set(&a).translate(&shift), &set(&b).translate(&shift)).unwrap().value;
        prop_assert!((moved - ab).abs() <= 1e-12 * (1.0 + ab));
    }
}

#[test]
fn hand_computed_distances() {
    assert_eq!(w1_1d_values(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
    assert_eq!(w1_1d_values(&[0.0, 0.0, 3.0], &[0.0, 0.0, 0.0]).unwrap(), 1.0);
    let a = set(&[vec![0.0, 0.0], vec![1.0, 0.0]]);
    let b = set(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
    assert_relative_eq!(w1_assignment(&a, &b).unwrap().value, 1.0, epsilon = 1e-15);
    // coordinate sum bounds the Euclidean distance from above
    let c = set(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
    let d = set(&[vec![3.0, 4.0], vec![3.0, 4.0]]);
    assert_relative_eq!(w1_assignment(&c, &d).unwrap().value, 5.0, epsilon = 1e-15);
    assert_relative_eq!(w1_coordinate_sum(&c, &d).unwrap().value, 7.0, epsilon = 1e-15);
}

#[test]
fn sliced_translation_matches_projection_mean() {
    // b = a + c: every projected distance is |<theta, c>|, whose mean over the
    // circle is |c| 2 / pi
    let mut rng = RngStream::new(2, 0).rng();
    let a: Vec<Vec<f64>> = (0..500)
        .map(|_| vec![rand::Rng::random::<f64>(&mut rng), rand::Rng::random::<f64>(&mut rng)])
        .collect();
    let c = [0.6, -0.8];
    let sa = set(&a);
    let sb = sa.translate(&c);
    let n_proj = 256;
    let w = w1_sliced(&sa, &sb, n_proj, &RngStream::new(3, 0)).unwrap();
    let sd = (0.5 - 4.0 / (std::f64::consts::PI * std::f64::consts::PI)).sqrt();
    assert!(
        (w.value - 2.0 / std::f64::consts::PI).abs() < 4.0 * sd / (n_proj as f64).sqrt(),
        "{}",
        w.value
    );
    assert_eq!(w.n_projections, n_proj);
    // deterministic given the stream
    assert_eq!(
        w.value,
        w1_sliced(&sa, &sb, n_proj, &RngStream::new(3, 0)).unwrap().value
    );
}

#[test]
fn bootstrap_tracks_sampling_spread() {
    // two samples of N(0,1) and N(1,1): the estimate's spread across
    // independent replicates should match the bootstrap error bar
    let draw = |seed: u64, shift: f64| {
        let mut rng = RngStream::new(seed, 0).rng();
        let v: Vec<f64> = (0..4000)
            .map(|_| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng) + shift)
            .collect();
        SampleSet::from_scalars(v).unwrap()
    };
    let reps: Vec<f64> = (0..40)
        .map(|i| w1_exact_1d(&draw(2 * i, 0.0), &draw(2 * i + 1, 1.0)).unwrap().value)
        .collect();
    let mean = reps.iter().sum::<f64>() / reps.len() as f64;
    let sd = (reps.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (reps.len() as f64 - 1.0)).sqrt();
    let se = bootstrap_stderr(
        &draw(0, 0.0),
        &draw(1, 1.0),
        &Estimator::Exact1d,
        200,
        &RngStream::new(7, 0),
    )
    .unwrap();
    assert!(se > 0.5 * sd && se < 2.0 * sd, "bootstrap {se} vs replicate sd {sd}");
    // sliced and coordinate-sum paths run through the same O(n) resampler
    let two = |seed: u64, shift: f64| {
        let mut rng = RngStream::new(seed, 1).rng();
        let p: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                vec![
                    rand::Rng::random::<f64>(&mut rng) + shift,
                    rand::Rng::random::<f64>(&mut rng),
                ]
            })
            .collect();
        set(&p)
    };
    let sliced = Estimator::Sliced {
        n_proj: 16,
        stream: RngStream::new(5, 0),
    };
    assert!(bootstrap_stderr(&two(1, 0.0), &two(2, 0.5), &sliced, 50, &RngStream::new(1, 0)).unwrap() > 0.0);
    assert!(
        bootstrap_stderr(
            &two(1, 0.0),
            &two(2, 0.5),
            &Estimator::CoordinateSum,
            50,
            &RngStream::new(1, 0)
        )
        .unwrap()
            > 0.0
    );
}

#[test]
fn sample_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = set(&[vec![1.5, -2.0], vec![0.1, 1e-300], vec![f64::MAX, 3.0]]);
    let csv = dir.path().join("s.csv");
    write_csv(&s, &csv).unwrap();
    assert_eq!(read_csv(&csv).unwrap().as_flat(), s.as_flat());
    let txt = dir.path().join("s.txt");
    write_samples(&s, &txt).unwrap();
    assert_eq!(read_samples(&txt).unwrap().as_flat(), s.as_flat());
}

#[test]
fn shape_errors() {
    let a = set(&[vec![0.0, 1.0]]);
    let b = set(&[vec![0.0], vec![1.0]]);
    assert!(w1_assignment(&a, &b).is_err());
    assert!(w1_exact_1d(&a, &a).is_err());
    assert!(w1_sliced(&b, &b, 8, &RngStream::new(0, 0)).is_err());
    assert!(w1_1d_values(&[], &[1.0]).is_err());
}
