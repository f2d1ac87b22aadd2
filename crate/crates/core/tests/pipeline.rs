//! End-to-end use of the public API.

use nalgebra::{DMatrix, DVector};
use qacq::acquisition::{marginal_ei_closed_form, mc_estimate, AcquisitionSpec};
use qacq::gp::{Dataset, GpModel, Hyperparams};
use qacq::harness::{median_final_regret, run_trials, ParallelMode, RunConfig};
use qacq::maximize::{greedy_select, joint_select, MaximizerConfig, MaximizerKind};
use qacq::reparam::{BaseSamples, SampleMode};
use qacq::tasks::{ObservationChannel, TaskSpec};

fn model() -> GpModel {
    let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.5, 0.5, 0.9, 0.7]);
    let y = DVector::from_vec(vec![0.3, 1.0, -0.4]);
    GpModel::new(Dataset::new(x, y).unwrap(), Hyperparams::new(vec![0.3, 0.3], 1.0, 1e-4, 0.0).unwrap()).unwrap()
}

#[test]
fn readme_example_runs() {
    let model = model();
    let spec = AcquisitionSpec::ei(1.0);
    let z = BaseSamples::draw(1024, 2, SampleMode::Deterministic, 7).unwrap();
    let batch = DMatrix::from_row_slice(2, 2, &[0.45, 0.55, 0.6, 0.4]);
    let est = mc_estimate(&spec, &batch, &model, &z).unwrap();
    assert!(est.value > 0.0 && est.std_error > 0.0);
    let picked = greedy_select(&spec, 4, &model, &MaximizerConfig::greedy_default()).unwrap();
    assert_eq!(picked.x.shape(), (4, 2));
}

#[test]
fn q1_mc_ei_agrees_with_closed_form() {
    let model = model();
    let x = [0.4, 0.45];
    let spec = AcquisitionSpec::ei(1.0);
    let z = BaseSamples::draw(1 << 15, 1, SampleMode::Deterministic, 1).unwrap();
    let est = mc_estimate(&spec, &DMatrix::from_row_slice(1, 2, &x), &model, &z).unwrap();
    let closed = marginal_ei_closed_form(&x, &model, 1.0).unwrap();
    assert!((est.value - closed).abs() <= 4.0 * est.std_error, "{} vs {closed}", est.value);
}

#[test]
fn greedy_beats_a_single_point_repeated() {
    let model = model();
    let spec = AcquisitionSpec::ucb(2.0);
    let cfg = MaximizerConfig { budget: qacq::maximize::Budget::evals(512.0), ..MaximizerConfig::greedy_default() };
    let greedy = greedy_select(&spec, 3, &model, &cfg).unwrap();
    let joint = joint_select(&spec, 3, &model, &cfg).unwrap();
    let single = joint_select(&spec, 1, &model, &cfg).unwrap();
    assert!(greedy.acq_value >= single.acq_value - 1e-9);
    assert!(joint.acq_value.is_finite());
    assert_eq!(greedy.round_values.len(), 3);
}

#[test]
fn benchmark_run_with_map_fit_improves_over_the_initial_design() {
    let mut cfg = RunConfig::synthetic(2, 2, 6);
    cfg.task = TaskSpec::from_name("branin").unwrap();
    cfg.surrogate = qacq::harness::SurrogateMode::MapFit;
    cfg.n_trials = 2;
    cfg.inner_budget.n = 256;
    cfg.seed = 4;
    let records = run_trials(&cfg).unwrap();
    for r in &records {
        assert!(r.error.is_none(), "{:?}", r.error);
        let first = r.rows.first().unwrap().best_observed;
        let last = r.rows.last().unwrap().best_observed;
        assert!(last >= first);
        assert_eq!(r.rows.len(), 7);
    }
}

/// Scaled-down directional check: a larger inner budget should not make the
/// gradient-based greedy loop worse on average.
#[test]
fn larger_inner_budgets_do_not_hurt() {
    let median = |n: usize| {
        let mut cfg = RunConfig::synthetic(2, 2, 5);
        cfg.n_trials = 6;
        cfg.inner_budget.n = n;
        cfg.seed = 11;
        cfg.task = TaskSpec::Synthetic { n_basis: 1 << 10 };
        median_final_regret(&run_trials(&cfg).unwrap())
    };
    let small = median(16);
    let large = median(1024);
    assert!(large <= small + 0.5, "budget 1024: {large}, budget 16: {small}");
}

#[test]
fn random_search_mode_runs_end_to_end() {
    let mut cfg = RunConfig::synthetic(2, 2, 2);
    cfg.task = TaskSpec::Synthetic { n_basis: 1 << 10 };
    cfg.n_trials = 2;
    cfg.parallel_mode = ParallelMode::Joint;
    cfg.maximizer.kind = MaximizerKind::RandomSearch;
    cfg.inner_budget.n = 64;
    let records = run_trials(&cfg).unwrap();
    assert!(records.iter().all(|r| r.error.is_none() && r.rows.len() == 3));
    let channel = ObservationChannel::new(1e-3, 0).unwrap();
    assert_ne!(channel.noise(0), channel.noise(1));
}
