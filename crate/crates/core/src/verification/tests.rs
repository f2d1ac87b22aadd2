use super::*;

#[test]
fn finite_differences_of_a_quadratic() {
    let x = DMatrix::from_row_slice(1, 2, &[0.3, -0.2]);
    let g = finite_difference_gradient(&|x: &DMatrix<f64>| x[(0, 0)].powi(2) + 3.0 * x[(0, 1)], &x, 1e-5);
    assert!((g[(0, 0)] - 0.6).abs() < 1e-8);
    assert!((g[(0, 1)] - 3.0).abs() < 1e-8);
}

#[test]
fn set_max_hand_example() {
    // A = {1}, B = {1, 2}, v = 3 with values 0.2, 0.5, 0.9.
    let values = [0.0, 0.2, 0.5, 0.9];
    assert_eq!(set_max(&values, &[1], 0.0), 0.2);
    assert_eq!(set_max(&values, &[], 0.1), 0.1);
    assert!(diminishing_returns_holds(&values, &[1], &[1, 2], 3, 0.0));
}

#[test]
fn additive_functions_pass_the_greedy_bound() {
    let w = [0.1, 0.7, 0.3, 0.5];
    let r = greedy_vs_exhaustive_with(&|s: &[usize]| Ok(s.iter().map(|&i| w[i]).sum()), 4, 2, 0).unwrap();
    assert!((r.metric - 1.0).abs() < 1e-12);
    assert!(r.pass);
    assert_eq!(r.n_cases, 6);
}

#[test]
fn greedy_check_rejects_oversized_problems() {
    assert!(greedy_vs_exhaustive_with(&|_: &[usize]| Ok(0.0), 21, 2, 0).is_err());
    assert!(greedy_vs_exhaustive_with(&|_: &[usize]| Ok(0.0), 5, 4, 0).is_err());
}

#[test]
fn small_gradient_battery_passes() {
    for r in check_gradients(6, 3).unwrap() {
        assert!(r.pass, "{r:?}");
    }
}

#[test]
fn submodularity_has_no_violations() {
    let model = random_model(4, 2, 5).unwrap();
    let grid = sobol_points(6, 2, 4);
    for kind in [AcqKind::Ei, AcqKind::Pi, AcqKind::Ucb] {
        let r = check_submodularity_bruteforce(kind, 8, &grid, &model, 4).unwrap();
        assert!(r.pass, "{r:?}");
    }
}

#[test]
fn non_myopic_kinds_are_refused() {
    let model = random_model(4, 2, 5).unwrap();
    assert!(check_submodularity_bruteforce(AcqKind::Kg, 8, &sobol_points(4, 2, 0), &model, 0).is_err());
}

#[test]
fn joint_and_incremental_agree_on_one_case() {
    let model = random_model(9, 2, 6).unwrap();
    let x = random_points(10, 2, 2);
    let alpha = model.data().best_observed().unwrap();
    let r = joint_incremental_equiv(&model, &x, alpha, 1 << 13, 11).unwrap();
    assert!(r.pass, "{r:?}");
    let r1 = joint_incremental_equiv(&model, &random_points(10, 1, 2), alpha, 64, 11).unwrap();
    assert!(r1.pass, "{r1:?}");
}

#[test]
fn unknown_check_is_an_error() {
    assert!(run_check("nope", 0).is_err());
}

#[test]
fn rff_covariance_small() {
    let r = check_rff_covariance(8, 1 << 12, 8, 1).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn kink_detection_separates_kinks_from_curvature() {
    let x = DMatrix::from_element(1, 1, 0.3);
    let relu = |x: &DMatrix<f64>| (x[(0, 0)] - 0.300003).max(0.0);
    let curved = |x: &DMatrix<f64>| 50.0 * x[(0, 0)].powi(2) + (20.0 * x[(0, 0)]).sin();
    assert!(stencil_has_kink(&relu, &x, 1e-5));
    assert!(!stencil_has_kink(&curved, &x, 1e-5));
    assert!(!stencil_has_kink(&|x: &DMatrix<f64>| (x[(0, 0)] - 0.5).max(0.0), &x, 1e-5));
}

#[test]
fn resolvable_points_can_improve() {
    let model = random_model(2, 2, 8).unwrap();
    let alpha = model.data().best_observed().unwrap();
    let (x, _) = resolvable_points(&model, alpha, 1 << 10, 5, 2, 2).unwrap();
    let p = (0..2)
        .map(|i| improvement_probability(&model, &x.row(i).iter().copied().collect::<Vec<_>>(), alpha).unwrap())
        .fold(0.0, f64::max);
    assert!(p * 1024.0 >= 10.0);
}
