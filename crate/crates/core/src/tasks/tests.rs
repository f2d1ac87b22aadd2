use nalgebra::{DMatrix, DVector};

use super::*;
use crate::gp::{matern52_cross_covariance, Hyperparams};

fn quick(d: usize, n_basis: usize, spectrum: Spectrum) -> RffOptions {
    RffOptions { spectrum, max_search: MaxSearch { candidates: 64, refine: 2, steps: 20 }, ..RffOptions::matern52(d, n_basis) }
}

#[test]
fn same_seed_same_task() {
    let a = sample_rff_task(&quick(2, 256, Spectrum::StudentT(5.0)), 4).unwrap();
    let b = sample_rff_task(&quick(2, 256, Spectrum::StudentT(5.0)), 4).unwrap();
    assert_eq!(a, b);
    let c = sample_rff_task(&quick(2, 256, Spectrum::StudentT(5.0)), 5).unwrap();
    assert_ne!(a.frequencies(), c.frequencies());
}

fn grid_1d(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64)
}

fn mean_feature_covariance(opts: &RffOptions, tasks: u64, grid: &DMatrix<f64>) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(grid.nrows(), grid.nrows());
    for s in 0..tasks {
        acc += sample_rff_task(opts, s).unwrap().feature_covariance(grid);
    }
    acc / tasks as f64
}

#[test]
fn matern_features_reproduce_the_kernel() {
    let grid = grid_1d(32);
    let opts = quick(1, 1 << 12, Spectrum::StudentT(5.0));
    let emp = mean_feature_covariance(&opts, 16, &grid);
    let hp = Hyperparams::new(vec![0.25], 1.0, 0.0, 0.0).unwrap();
    let k = matern52_cross_covariance(&grid, &grid, &hp).unwrap();
    assert!((emp - k).amax() < 0.05);
}

#[test]
fn gaussian_spectrum_reproduces_squared_exponential() {
    let grid = grid_1d(32);
    let opts = quick(1, 1 << 12, Spectrum::Gaussian);
    let emp = mean_feature_covariance(&opts, 16, &grid);
    let se = DMatrix::from_fn(32, 32, |i, j| (-0.5 * ((grid[i] - grid[j]) / 0.25f64).powi(2)).exp());
    assert!((emp - se).amax() < 0.05);
}

#[test]
fn zero_weights_give_zero() {
    let t = SyntheticTask::from_parts(
        DMatrix::from_element(3, 2, 1.0),
        DVector::zeros(3),
        DVector::zeros(3),
        1.0,
        MaxSearch { candidates: 8, refine: 0, steps: 0 },
    )
    .unwrap();
    assert_eq!(t.evaluate(&[0.3, 0.9]).unwrap(), 0.0);
}

#[test]
fn zero_frequency_basis_is_constant() {
    let t = SyntheticTask::from_parts(
        DMatrix::zeros(1, 1),
        DVector::zeros(1),
        DVector::from_element(1, 0.7),
        2.0,
        MaxSearch::default(),
    )
    .unwrap();
    for x in [0.0, 0.4, 1.0] {
        assert!((t.evaluate(&[x]).unwrap() - 1.4).abs() < 1e-15);
    }
    assert!((t.true_max() - 1.4).abs() < 1e-15);
}

#[test]
fn doubling_weights_doubles_values() {
    let t = sample_rff_task(&quick(2, 128, Spectrum::StudentT(5.0)), 1).unwrap();
    let t2 = t.with_scaled_weights(2.0).unwrap();
    for x in [[0.1, 0.2], [0.8, 0.5]] {
        assert!((t2.evaluate(&x).unwrap() - 2.0 * t.evaluate(&x).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn true_max_dominates_probes() {
    let t = sample_matern_task(2, 1024, 9).unwrap();
    for i in 0..2000u64 {
        let x = [crate::stream::uniform(3, i, 0) % 1.0, crate::stream::uniform(3, i, 1) % 1.0];
        assert!(t.evaluate(&x).unwrap() <= t.true_max() + 1e-12);
    }
    assert!((t.evaluate(t.argmax_estimate()).unwrap() - t.true_max()).abs() < 1e-12);
}

#[test]
fn batch_and_pointwise_agree() {
    let t = sample_rff_task(&quick(3, 300, Spectrum::StudentT(5.0)), 2).unwrap();
    let x = DMatrix::from_fn(600, 3, |i, j| ((i * 7 + j * 13) % 97) as f64 / 96.0);
    let batch = t.evaluate_batch(&x);
    for i in (0..600).step_by(37) {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        assert!((batch[i] - t.evaluate(&row).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn task_json_round_trips() {
    let t = sample_rff_task(&quick(2, 32, Spectrum::StudentT(5.0)), 3).unwrap();
    let s = serde_json::to_string(&t).unwrap();
    let back: SyntheticTask = serde_json::from_str(&s).unwrap();
    assert_eq!(t, back);
    assert!(serde_json::from_str::<SyntheticTask>(&s.replace("\"dim\":2", "\"dim\":3")).is_err());
}

#[test]
fn out_of_cube_is_an_input_error() {
    let t = Task::Synthetic(sample_rff_task(&quick(1, 8, Spectrum::StudentT(5.0)), 0).unwrap());
    assert!(matches!(t.evaluate(&[1.5]), Err(Error::Input(_))));
    assert!(matches!(benchmark("branin", &[-0.1, 0.5]), Err(Error::Input(_))));
}

#[test]
fn noiseless_channel_is_exact() {
    let t = Task::Benchmark(Benchmark::new(BenchmarkKind::Hartmann3, 3).unwrap());
    let ch = ObservationChannel::new(0.0, 4).unwrap();
    assert_eq!(observe(&t, &[0.2, 0.3, 0.4], &ch, 7).unwrap(), t.evaluate(&[0.2, 0.3, 0.4]).unwrap());
}

#[test]
fn channel_noise_has_requested_variance() {
    let ch = ObservationChannel { seed: 11, ..Default::default() };
    let draws: Vec<f64> = (0..10_000).map(|i| ch.noise(i)).collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    assert!((var / 1e-3 - 1.0).abs() < 0.2, "{var}");
    let other = ObservationChannel { seed: 12, ..Default::default() };
    assert_ne!(ch.noise(0), other.noise(0));
    assert_eq!(ch.noise(5), ch.noise(5));
}

#[test]
fn branin_at_a_known_minimizer() {
    let b = Benchmark::new(BenchmarkKind::Branin, 2).unwrap();
    let v = b.native_value(&[std::f64::consts::PI, 2.275]).unwrap();
    assert!((v - 0.397887).abs() < 1e-6);
    // Unit-cube form is the negation.
    let x = [(std::f64::consts::PI + 5.0) / 15.0, 2.275 / 15.0];
    assert!((b.evaluate(&x).unwrap() + v).abs() < 1e-12);
    assert!((b.optimum() + 0.397887).abs() < 1e-6);
}

fn locally_refined(b: &Benchmark, mut x: Vec<f64>) -> f64 {
    // Coordinate search around the published argmax.
    let mut best = b.native_value(&x).unwrap();
    let mut step = 1e-3;
    while step > 1e-9 {
        let mut improved = false;
        for j in 0..x.len() {
            for s in [-step, step] {
                let mut y = x.clone();
                y[j] += s;
                let v = b.native_value(&y).unwrap();
                if v < best {
                    best = v;
                    x = y;
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    best
}

#[test]
fn hartmann_optima_match_published_values() {
    let h6 = Benchmark::new(BenchmarkKind::Hartmann6, 6).unwrap();
    let arg6 = vec![0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573];
    assert!((h6.native_value(&arg6).unwrap() + 3.32237).abs() < 1e-5);
    assert!((locally_refined(&h6, arg6) + h6.optimum()).abs() < 1e-9);
    let h3 = Benchmark::new(BenchmarkKind::Hartmann3, 3).unwrap();
    let arg3 = vec![0.114614, 0.555649, 0.852547];
    assert!((h3.native_value(&arg3).unwrap() + 3.86278).abs() < 1e-5);
    let r = locally_refined(&h3, arg3);
    assert!((r + h3.optimum()).abs() < 1e-9, "{r:.17}");
}

#[test]
fn levy_vanishes_at_ones() {
    for d in [1, 2, 4, 7] {
        let b = Benchmark::new(BenchmarkKind::Levy, d).unwrap();
        assert!(b.native_value(&vec![1.0; d]).unwrap().abs() < 1e-15);
        let x = vec![11.0 / 20.0; d];
        assert!(b.evaluate(&x).unwrap().abs() < 1e-15);
    }
}

#[test]
fn unknown_benchmark_is_a_config_error() {
    assert!(matches!(benchmark("rosenbrock", &[0.5]), Err(Error::Config(_))));
    assert!(matches!(TaskSpec::from_name("nope"), Err(Error::Config(_))));
}

#[test]
fn task_spec_checks_fixed_dimensions() {
    assert!(TaskSpec::Hartmann6 {}.build(3, 0).is_err());
    assert_eq!(TaskSpec::Levy {}.build(5, 0).unwrap().dim(), 5);
    let spec: TaskSpec = serde_json::from_str(r#"{"kind":"synthetic"}"#).unwrap();
    assert_eq!(spec, TaskSpec::synthetic());
    assert!(serde_json::from_str::<TaskSpec>(r#"{"kind":"branin","extra":1}"#).is_err());
}

#[test]
fn bundled_constants_are_versioned() {
    assert_eq!(constants_version(), 1);
}
