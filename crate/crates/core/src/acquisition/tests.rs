use super::*;
use crate::gp::{Dataset, GpModel, Hyperparams};
use crate::reparam::BaseSamples;
use crate::stream;
use approx::assert_abs_diff_eq;

fn model(n: usize, d: usize, seed: u64) -> GpModel {
    let x = DMatrix::from_fn(n, d, |i, j| stream::uniform(seed, stream::cell(i, j), 0));
    let y = DVector::from_fn(n, |i, _| stream::normal(seed ^ 0x55, i as u64) * 0.8);
    let hp = Hyperparams::new(vec![0.35; d], 1.0, 1e-4, 0.0).unwrap();
    GpModel::new(Dataset::new(x, y).unwrap(), hp).unwrap()
}

fn points(q: usize, d: usize, seed: u64) -> DMatrix<f64> {
    DMatrix::from_fn(q, d, |i, j| 0.05 + 0.9 * stream::uniform(seed, stream::cell(i, j), 3))
}

fn samples(m: usize, q: usize, seed: u64) -> BaseSamples {
    BaseSamples::draw(m, q, SampleMode::Deterministic, seed).unwrap()
}

fn one_row(values: &[f64]) -> SamplePaths {
    SamplePaths { y: DMatrix::from_row_slice(1, values.len(), values) }
}

#[test]
fn ei_takes_relu_then_max() {
    let b = utility(&AcquisitionSpec::ei(0.0), &one_row(&[1.0, -1.0]), &DVector::zeros(2)).unwrap();
    assert_eq!(b.values[0], 1.0);
    assert_eq!(b.grad_y.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
}

#[test]
fn sr_takes_max() {
    let b = utility(&AcquisitionSpec::sr(), &one_row(&[0.3, 0.7]), &DVector::zeros(2)).unwrap();
    assert_eq!(b.values[0], 0.7);
}

#[test]
fn pi_sharpens_to_indicator() {
    let b = utility(&AcquisitionSpec::pi(0.2, 1e-6), &one_row(&[0.7]), &DVector::zeros(1)).unwrap();
    assert!((b.values[0] - 1.0).abs() < 1e-12);
}

#[test]
fn ties_go_to_first_index() {
    let b = utility(&AcquisitionSpec::sr(), &one_row(&[0.5, 0.5]), &DVector::zeros(2)).unwrap();
    assert_eq!(b.grad_y[(0, 0)], 1.0);
    assert_eq!(b.grad_y[(0, 1)], 0.0);
}

#[test]
fn es_and_kg_rejected_by_pointwise_utility() {
    let spec = AcquisitionSpec::kg(DMatrix::from_element(1, 1, 0.5));
    assert!(matches!(utility(&spec, &one_row(&[0.0]), &DVector::zeros(1)), Err(Error::Config(_))));
}

#[test]
fn marginal_ucb_recovers_closed_form() {
    let z = samples(1 << 16, 1, 9);
    let (mu, sigma, beta) = (0.3, 0.8, 2.0);
    let spec = AcquisitionSpec::ucb(beta);
    let y = SamplePaths { y: z.z.map(|v| mu + sigma * v) };
    let b = utility(&spec, &y, &DVector::from_element(1, mu)).unwrap();
    let n = b.values.len() as f64;
    let mean = b.values.mean();
    let se = (b.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((mean - (mu + beta.sqrt() * sigma)).abs() < 3.0 * se);
}

#[test]
fn closed_form_ei_reference_values() {
    assert_abs_diff_eq!(ei_from_moments(0.0, 1.0, 0.0), 0.398_942_280_401_432_7, epsilon = 1e-15);
    assert_eq!(ei_from_moments(2.5, 0.0, 0.5), 2.0);
    let mut last = f64::INFINITY;
    for k in 1..8 {
        let v = ei_from_moments(-(k as f64), 0.2, 0.0);
        assert!(v <= last);
        last = v;
    }
    assert!(last < 1e-20);
}

#[test]
fn mc_ei_matches_closed_form_at_one_point() {
    let m = model(6, 2, 1);
    let x = points(1, 2, 2);
    let alpha = m.data().outputs().mean();
    let spec = AcquisitionSpec::ei(alpha);
    let est = mc_estimate(&spec, &x, &m, &samples(1 << 14, 1, 4)).unwrap();
    let exact = marginal_ei_closed_form(&[x[(0, 0)], x[(0, 1)]], &m, alpha).unwrap();
    assert!((est.value - exact).abs() < 4.0 * est.std_error, "{} vs {exact}", est.value);
}

#[test]
fn mc_is_deterministic_for_fixed_seed() {
    let m = model(5, 2, 3);
    let x = points(2, 2, 4);
    let spec = AcquisitionSpec::ei(0.0);
    let a = mc_value(&spec, &x, &m, &samples(64, 2, 5)).unwrap();
    let b = mc_value(&spec, &x, &m, &samples(64, 2, 5)).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn zero_variance_ei_is_relu_of_mean() {
    let mut hp = Hyperparams::new(vec![0.3], 1.0, 0.0, 0.0).unwrap();
    hp.noise_variance = 0.0;
    let data = Dataset::new(DMatrix::from_row_slice(1, 1, &[0.4]), DVector::from_vec(vec![1.2])).unwrap();
    let m = GpModel::new(data, hp).unwrap();
    let x = DMatrix::from_row_slice(1, 1, &[0.4]);
    let v = mc_value(&AcquisitionSpec::ei(0.7), &x, &m, &samples(256, 1, 1)).unwrap();
    assert!((v - 0.5).abs() < 1e-4, "{v}");
}

fn fd_gradient(spec: &AcquisitionSpec, x: &DMatrix<f64>, m: &GpModel, z: &BaseSamples) -> DMatrix<f64> {
    let h = 1e-5;
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        let mut xp = x.clone();
        xp[(i, j)] += h;
        let mut xm = x.clone();
        xm[(i, j)] -= h;
        (mc_value(spec, &xp, m, z).unwrap() - mc_value(spec, &xm, m, z).unwrap()) / (2.0 * h)
    })
}

fn check_gradient(spec: &AcquisitionSpec, seeds: std::ops::Range<u64>) {
    for seed in seeds {
        let d = 1 + seed as usize % 3;
        let q = 1 + (seed as usize / 3) % 3;
        let m = model(5, d, seed);
        let mut spec = spec.clone();
        if let Some(xb) = spec.discretization.as_mut() {
            *xb = points(8, d, seed + 99);
        }
        let x = points(q, d, seed + 7);
        let z = samples(64, q, seed);
        let g = mc_gradient(&spec, &x, &m, &z).unwrap();
        let fd = fd_gradient(&spec, &x, &m, &z);
        let err = (&g - &fd).amax() / (1.0 + fd.amax());
        assert!(err < 1e-3, "{:?} seed {seed}: analytic {g} fd {fd}", spec.kind);
    }
}

#[test]
fn gradients_match_finite_differences() {
    check_gradient(&AcquisitionSpec::ei(0.2), 0..6);
    check_gradient(&AcquisitionSpec::sr(), 0..6);
    check_gradient(&AcquisitionSpec::ucb(2.0), 0..6);
    check_gradient(&AcquisitionSpec::pi(0.2, 0.05), 0..6);
    let grid = DMatrix::zeros(8, 1);
    check_gradient(&AcquisitionSpec::es(grid.clone(), 0.05), 0..4);
    check_gradient(&AcquisitionSpec::kg(grid), 0..6);
}

#[test]
fn flat_ei_has_zero_gradient() {
    let m = model(5, 2, 1);
    let x = points(2, 2, 1);
    let g = mc_gradient(&AcquisitionSpec::ei(100.0), &x, &m, &samples(64, 2, 1)).unwrap();
    assert_eq!(g.amax(), 0.0);
}

#[test]
fn mirrored_queries_give_mirrored_gradients() {
    let hp = Hyperparams::new(vec![0.3, 0.3], 1.0, 0.0, 0.0).unwrap();
    let m = GpModel::new(Dataset::empty(2), hp).unwrap();
    let x = DMatrix::from_row_slice(2, 2, &[0.2, 0.7, 0.7, 0.2]);
    let swapped = DMatrix::from_row_slice(2, 2, &[0.7, 0.2, 0.2, 0.7]);
    let z = samples(128, 2, 3);
    let g = mc_gradient(&AcquisitionSpec::sr(), &x, &m, &z).unwrap();
    let gs = mc_gradient(&AcquisitionSpec::sr(), &swapped, &m, &z).unwrap();
    for i in 0..2 {
        assert_abs_diff_eq!(g[(i, 0)], gs[(i, 1)], epsilon = 1e-12);
        assert_abs_diff_eq!(g[(i, 1)], gs[(i, 0)], epsilon = 1e-12);
    }
}

#[test]
fn duplicate_queries_rejected_for_gradients() {
    let m = model(4, 1, 0);
    let x = DMatrix::from_row_slice(2, 1, &[0.3, 0.3]);
    let err = mc_gradient(&AcquisitionSpec::ei(0.0), &x, &m, &samples(8, 2, 0)).unwrap_err();
    assert!(matches!(err, Error::DegenerateQuery(0, 1)));
}

#[test]
fn es_single_category_is_zero() {
    let m = model(4, 1, 2);
    let spec = AcquisitionSpec::es(DMatrix::from_element(1, 1, 0.6), 0.05);
    let x = points(2, 1, 1);
    let v = es_concrete_value(&spec, &x, &m, &samples(32, 2, 1), &samples(16, 1, 2)).unwrap();
    assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
}

#[test]
fn es_high_temperature_tends_to_uniform() {
    let m = model(4, 1, 2);
    let xb = points(6, 1, 9);
    let spec = AcquisitionSpec::es(xb, 1e3);
    let v = es_concrete_value(&spec, &points(1, 1, 1), &m, &samples(32, 1, 1), &samples(16, 6, 2)).unwrap();
    assert!((v + 6f64.ln()).abs() < 1e-4, "{v}");
}

#[test]
fn concrete_limits_match_hard_indicators() {
    let m = model(5, 1, 6);
    let x = points(2, 1, 2);
    let z = samples(256, 2, 3);
    let pi_soft = mc_value(&AcquisitionSpec::pi(0.3, 1e-4), &x, &m, &z).unwrap();
    let pi_hard = pi_hard_value(&AcquisitionSpec::pi(0.3, 1e-4), &x, &m, &z).unwrap();
    assert!((pi_soft - pi_hard).abs() < 1e-2);
    let spec = AcquisitionSpec::es(points(8, 1, 5), 1e-4);
    let zb = samples(32, 8, 4);
    let soft = es_concrete_value(&spec, &x, &m, &z, &zb).unwrap();
    let hard = es_hard_value(&spec, &x, &m, &z, &zb).unwrap();
    assert!((soft - hard).abs() < 1e-2, "{soft} vs {hard}");
}

#[test]
fn kg_without_update_is_max_mean() {
    let m = model(5, 2, 4);
    let xb = points(10, 2, 8);
    let spec = AcquisitionSpec::kg(xb.clone());
    let z = BaseSamples::from_matrix(DMatrix::zeros(16, 2));
    let v = kg_value(&spec, &points(2, 2, 1), &m, &z).unwrap();
    let mu = m.posterior(&xb).unwrap().mean;
    assert_abs_diff_eq!(v, mu.max(), epsilon = 1e-12);
}

#[test]
fn kg_dominates_max_mean() {
    let m = model(5, 2, 4);
    let xb = points(10, 2, 8);
    let mu = m.posterior(&xb).unwrap().mean;
    let best = mu.imax();
    let spec = AcquisitionSpec::kg(xb.clone());
    let x = DMatrix::from_fn(1, 2, |_, j| xb[(best, j)] + 1e-3);
    let v = kg_value(&spec, &x, &m, &samples(4096, 1, 2)).unwrap();
    assert!(v >= mu.max());
}

#[test]
fn kg_matches_quadrature() {
    let m = model(4, 1, 11);
    let xb = DMatrix::from_row_slice(2, 1, &[0.25, 0.8]);
    let x = DMatrix::from_row_slice(1, 1, &[0.55]);
    let spec = AcquisitionSpec::kg(xb.clone());
    let est = mc_estimate(&spec, &x, &m, &samples(1 << 14, 1, 6)).unwrap();

    // E_y max_c (mu_c + s_c y), y ~ N(0,1), with s_c = cov(b_c, a) / sd(a).
    let joint = DMatrix::from_row_slice(3, 1, &[0.55, 0.25, 0.8]);
    let post = m.posterior(&joint).unwrap();
    let sd = post.cov[(0, 0)].sqrt();
    let (s1, s2) = (post.cov[(1, 0)] / sd, post.cov[(2, 0)] / sd);
    let (m1, m2) = (post.mean[1], post.mean[2]);
    let nodes = 10_000;
    let (lo, hi) = (-8.0, 8.0);
    let h = (hi - lo) / nodes as f64;
    let mut quad = 0.0;
    for k in 0..=nodes {
        let y = lo + k as f64 * h;
        let w = if k == 0 || k == nodes { 0.5 } else { 1.0 };
        quad += w * h * normal_pdf(y) * (m1 + s1 * y).max(m2 + s2 * y);
    }
    assert!((est.value - quad).abs() < 3.0 * est.std_error, "{} vs {quad}", est.value);
}

#[test]
fn incremental_ei_without_fantasies_is_marginal_ei() {
    let m = model(5, 2, 3);
    let x = [0.3, 0.4];
    let v = incremental_ei_value(&x, &[m.data().clone(), m.data().clone()], m.hyperparams(), 0.1).unwrap();
    assert_abs_diff_eq!(v, marginal_ei_closed_form(&x, &m, 0.1).unwrap(), epsilon = 1e-14);
    assert!(incremental_ei_value(&x, &[], m.hyperparams(), 0.0).is_err());
}

#[test]
fn fantasy_above_incumbent_raises_threshold() {
    let m = model(5, 2, 3);
    let states = FantasyStates::new(&m, 1, 0.1).unwrap();
    let states = states.extend_with_outcomes(&[0.9, 0.9], &DVector::from_element(1, 0.6)).unwrap();
    assert_eq!(states.thresholds()[0], 0.6);
    let states = states.extend_with_outcomes(&[0.1, 0.9], &DVector::from_element(1, 0.2)).unwrap();
    assert_eq!(states.thresholds()[0], 0.6);
}

#[test]
fn cached_states_match_reference_path() {
    let m = model(5, 2, 8);
    let z = DVector::from_fn(4, |s, _| stream::normal(3, s as u64));
    let states = FantasyStates::new(&m, 4, 0.2).unwrap().extend(&[0.6, 0.3], &z).unwrap();
    let states = states.extend(&[0.2, 0.8], &z.map(|v| -v)).unwrap();
    let datasets: Vec<_> = (0..4).map(|s| states.state_dataset(s).unwrap()).collect();
    let x = [0.45, 0.55];
    let reference = incremental_ei_value(&x, &datasets, m.hyperparams(), 0.2).unwrap();
    assert_abs_diff_eq!(states.value(&x).unwrap(), reference, epsilon = 1e-10);
}

#[test]
fn fantasy_state_gradient_matches_finite_differences() {
    let m = model(6, 2, 12);
    let z = DVector::from_fn(8, |s, _| stream::normal(5, s as u64));
    let states = FantasyStates::new(&m, 8, 0.0).unwrap().extend(&[0.5, 0.5], &z).unwrap();
    let x = [0.31, 0.72];
    let (v, g) = states.value_and_gradient(&x).unwrap();
    assert_abs_diff_eq!(v, states.value(&x).unwrap(), epsilon = 1e-14);
    for j in 0..2 {
        let mut xp = x;
        xp[j] += 1e-6;
        let mut xm = x;
        xm[j] -= 1e-6;
        let fd = (states.value(&xp).unwrap() - states.value(&xm).unwrap()) / 2e-6;
        assert!((fd - g[j]).abs() < 1e-6 * (1.0 + fd.abs()));
    }
    let (_, g1) = marginal_ei_with_gradient(&x, &m, 0.0).unwrap();
    let base = FantasyStates::new(&m, 3, 0.0).unwrap().value_and_gradient(&x).unwrap().1;
    for j in 0..2 {
        assert_abs_diff_eq!(g1[j], base[j], epsilon = 1e-12);
    }
}

#[test]
fn discrete_derivative_telescopes() {
    let m = model(6, 2, 5);
    let z = samples(512, 3, 8);
    let x_old = points(2, 2, 3);
    let x_new = [0.62, 0.18];
    for spec in [AcquisitionSpec::ei(0.1), AcquisitionSpec::pi(0.1, 0.1), AcquisitionSpec::ucb(2.0), AcquisitionSpec::sr()] {
        let full = DMatrix::from_fn(3, 2, |i, j| if i < 2 { x_old[(i, j)] } else { x_new[j] });
        let gain = mc_value(&spec, &full, &m, &z).unwrap() - mc_value(&spec, &x_old, &m, &z).unwrap();
        let offset = NormalizationOffset { v_min: f64::NEG_INFINITY };
        let dd = discrete_derivative_mc(&spec, &x_new, &x_old, &m, &z, offset).unwrap();
        assert!((gain - dd).abs() < 1e-10, "{:?}: {gain} vs {dd}", spec.kind);
    }
}

#[test]
fn discrete_derivative_from_empty_set_and_duplicates() {
    let m = model(6, 2, 5);
    let z = samples(256, 2, 8);
    let spec = AcquisitionSpec::ei(0.1);
    let x_new = [0.62, 0.18];
    let empty = DMatrix::zeros(0, 2);
    let offset = normalization_offset(&spec, &m, &points(4, 2, 1)).unwrap();
    let dd = discrete_derivative_mc(&spec, &x_new, &empty, &m, &z, offset).unwrap();
    let single = mc_value(&spec, &DMatrix::from_row_slice(1, 2, &x_new), &m, &z).unwrap();
    assert_abs_diff_eq!(dd, single - offset.v_min, epsilon = 1e-12);

    let old = DMatrix::from_row_slice(1, 2, &x_new);
    assert_eq!(discrete_derivative_mc(&spec, &x_new, &old, &m, &z, offset).unwrap(), 0.0);
}

#[test]
fn normalization_offsets() {
    let m = model(5, 2, 1);
    let grid = points(16, 2, 4);
    assert_eq!(normalization_offset(&AcquisitionSpec::ei(0.0), &m, &grid).unwrap().v_min, 0.0);
    assert_eq!(normalization_offset(&AcquisitionSpec::pi(0.0, 0.1), &m, &grid).unwrap().v_min, 0.0);
    let prior = GpModel::new(Dataset::empty(2), Hyperparams::new(vec![0.3; 2], 1.0, 0.0, 0.0).unwrap()).unwrap();
    assert_eq!(normalization_offset(&AcquisitionSpec::ucb(2.0), &prior, &grid).unwrap().v_min, 0.0);
    let sr = normalization_offset(&AcquisitionSpec::sr(), &m, &grid).unwrap().v_min;
    assert!(sr < normalization_offset(&AcquisitionSpec::ucb(2.0), &m, &grid).unwrap().v_min);
}

#[test]
fn kind_parses_case_insensitively() {
    assert_eq!("UCB".parse::<AcqKind>().unwrap(), AcqKind::Ucb);
    assert!("foo".parse::<AcqKind>().is_err());
}
