use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{
    grad_ascend_multistart, marginal_acquisition, random_search, select_proportional, init_pool, Bounds, Budget,
    BudgetMeter, FnObjective, MaximizerConfig, MaximizerKind, Objective, SelectionResult, REFERENCE_SAMPLES,
};
use crate::acquisition::{
    marginal_ei_closed_form, marginal_ei_with_gradient, mc_estimate_with_floor, mc_value, pointwise_utility, AcqKind,
    AcquisitionSpec, FantasyStates, NormalizationOffset,
};
use crate::error::{Error, Result};
use crate::gp::{GpModel, DUPLICATE_TOL};
use crate::reparam::{BaseSamples, SampleMode};
use crate::stream;

const FANTASY_TAG: u64 = 0xFA47;

/// Acquisition of `[prefix; free points]`, optimized over the free points only.
struct SetObjective<'a> {
    spec: &'a AcquisitionSpec,
    model: &'a GpModel,
    prefix: DMatrix<f64>,
    n_free: usize,
    floor: f64,
    minibatch: usize,
    seed: u64,
    value_z: BaseSamples,
    q_ref: usize,
}

impl<'a> SetObjective<'a> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        spec: &'a AcquisitionSpec,
        model: &'a GpModel,
        prefix: DMatrix<f64>,
        n_free: usize,
        floor: f64,
        minibatch: usize,
        value_samples: usize,
        seed: u64,
        q_ref: usize,
    ) -> Result<Self> {
        let width = prefix.nrows() + n_free;
        let value_z = BaseSamples::draw(value_samples, width, SampleMode::Deterministic, seed)?;
        Ok(Self { spec, model, prefix, n_free, floor, minibatch, seed, value_z, q_ref })
    }

    fn width(&self) -> usize {
        self.prefix.nrows() + self.n_free
    }

    fn assemble(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.model.dim();
        let p = self.prefix.nrows();
        DMatrix::from_fn(p + self.n_free, d, |i, j| if i < p { self.prefix[(i, j)] } else { x[(i - p) * d + j] })
    }

    fn unit_cost(&self, samples: usize) -> f64 {
        samples as f64 / REFERENCE_SAMPLES as f64 * self.width() as f64 / self.q_ref as f64
    }
}

impl Objective for SetObjective<'_> {
    fn dim(&self) -> usize {
        self.n_free * self.model.dim()
    }

    fn value_and_gradient(&self, x: &[f64], step: u64) -> Result<(f64, Vec<f64>)> {
        let z = BaseSamples::draw(self.minibatch, self.width(), SampleMode::Deterministic, stream::derive(self.seed, step))?;
        let est = mc_estimate_with_floor(self.spec, &self.assemble(x), self.model, &z, self.floor, true)?;
        let g = est.gradient.expect("gradient requested");
        let p = self.prefix.nrows();
        let grad = (p..g.nrows()).flat_map(|i| g.row(i).iter().copied().collect::<Vec<_>>()).collect();
        Ok((est.value, grad))
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(mc_estimate_with_floor(self.spec, &self.assemble(x), self.model, &self.value_z, self.floor, false)?.value)
    }

    fn gradient_cost(&self) -> f64 {
        2.0 * self.unit_cost(self.minibatch)
    }

    fn value_cost(&self) -> f64 {
        self.unit_cost(self.value_z.n_samples())
    }
}

struct Outcome {
    x: Vec<f64>,
    evaluations: usize,
    used: f64,
    warning: Option<String>,
}

/// Runs the configured solver over `k` free points.
#[allow(clippy::too_many_arguments)]
fn maximize_points<'a>(
    cfg: &MaximizerConfig,
    bounds: &Bounds,
    k: usize,
    budget: Budget,
    make: &dyn Fn(usize) -> Result<Box<dyn Objective + 'a>>,
    init_scores: &dyn Fn(&[Vec<f64>]) -> Vec<f64>,
    incumbent: Option<&[f64]>,
    seed: u64,
) -> Result<Outcome> {
    let mut meter = BudgetMeter::new(budget);
    let (x, warning) = match cfg.kind {
        MaximizerKind::RandomSearch => {
            let obj = make(cfg.rs_samples)?;
            (random_search(obj.as_ref(), bounds, cfg.rs_batch, seed, &mut meter)?.0, None)
        }
        MaximizerKind::GradAscent => {
            let pool = init_pool(bounds, incumbent, cfg.init_pool, cfg.init_local, cfg.init_local_scale, seed);
            let scores = init_scores(&pool);
            meter.charge(cfg.init_fraction * budget.amount, pool.len());
            let points = select_proportional(&pool, &scores, cfg.starts_for(k) * k, stream::derive(seed, 2));
            let starts = group_starts(&points, k, bounds, seed);
            let obj = make(cfg.selection_samples)?;
            let (x, _, warning) =
                grad_ascend_multistart(obj.as_ref(), &starts, bounds, cfg.step_size, cfg.step_schedule, &mut meter, Some(cfg.max_steps))?;
            (x, warning)
        }
    };
    Ok(Outcome { x, evaluations: meter.evaluations(), used: meter.used(), warning })
}

/// Groups consecutive rows into starts of `k` points, nudging repeats apart so
/// that no start begins degenerate.
fn group_starts(points: &DMatrix<f64>, k: usize, bounds: &Bounds, seed: u64) -> Vec<Vec<f64>> {
    let d = points.ncols();
    (0..points.nrows() / k)
        .map(|s| {
            let mut start: Vec<f64> = Vec::with_capacity(k * d);
            for i in 0..k {
                let mut row: Vec<f64> = points.row(s * k + i).iter().copied().collect();
                let repeated = |row: &[f64], start: &[f64]| {
                    start.chunks(d).any(|p| p.iter().zip(row).all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL))
                };
                let mut attempt = 0u64;
                while repeated(&row, &start) && attempt < 16 {
                    for (j, v) in row.iter_mut().enumerate() {
                        let width = bounds.upper[j] - bounds.lower[j];
                        *v += 1e-3 * width * stream::normal(stream::derive(seed, 3 + attempt), stream::cell(s * k + i, j));
                    }
                    bounds.project(&mut row);
                    attempt += 1;
                }
                start.extend(row);
            }
            start
        })
        .collect()
}

/// Pool scores from the marginal acquisition; SR and UCB are shifted by the
/// pool minimum so that they are non-negative.
fn marginal_scores(spec: &AcquisitionSpec, model: &GpModel, pool: &[Vec<f64>]) -> Vec<f64> {
    use rayon::prelude::*;
    let threshold_spec;
    let spec = if spec.kind.needs_discretization() {
        threshold_spec = AcquisitionSpec { alpha: model.data().best_observed().unwrap_or(spec.alpha), ..spec.clone() };
        &threshold_spec
    } else {
        spec
    };
    let mut scores: Vec<f64> =
        pool.par_iter().map(|x| marginal_acquisition(spec, model, x).unwrap_or(f64::NEG_INFINITY)).collect();
    if matches!(spec.kind, AcqKind::Sr | AcqKind::Ucb) {
        let lo = scores.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
        for s in scores.iter_mut() {
            *s -= lo;
        }
    }
    scores
}

fn incumbent(model: &GpModel) -> Option<Vec<f64>> {
    let data = model.data();
    (0..data.len())
        .filter(|i| !data.is_fantasy(*i))
        .max_by(|a, b| data.outputs()[*a].total_cmp(&data.outputs()[*b]).then(b.cmp(a)))
        .map(|i| data.inputs().row(i).iter().copied().collect())
}

fn rows_to_matrix(rows: &[Vec<f64>], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}

/// Deterministic joint value used for reporting.
fn report_value(spec: &AcquisitionSpec, model: &GpModel, x: &DMatrix<f64>, seed: u64) -> Result<f64> {
    let z = BaseSamples::draw(spec.mc_samples, x.nrows(), SampleMode::Deterministic, seed)?;
    mc_value(spec, x, model, &z)
}

fn check_request(spec: &AcquisitionSpec, q: usize, cfg: &MaximizerConfig) -> Result<()> {
    if q == 0 {
        return Err(Error::config("batch size q must be at least 1"));
    }
    spec.validate()?;
    cfg.validate()
}

/// Greedy batch selection: `q` rounds, each adding the point that maximizes
/// the joint acquisition of the chosen set plus the candidate, with the budget
/// split evenly across rounds.
///
/// With `pending_fantasies`, earlier picks are conditioned on at their
/// predictive means (noiselessly). Their outcomes are then known, so the joint
/// utility reduces to `E max(C, l(y_x))` with `C` the best utility among the
/// picks, which keeps each round a single-point problem.
pub fn greedy_select(spec: &AcquisitionSpec, q: usize, model: &GpModel, cfg: &MaximizerConfig) -> Result<SelectionResult> {
    check_request(spec, q, cfg)?;
    let started = Instant::now();
    let d = model.dim();
    let bounds = cfg.bounds_for(d)?;
    let round_budget = cfg.budget.scaled(1.0 / q as f64);
    let inc = incumbent(model);
    let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut fantasy_model = model.clone();
    let mut floor = f64::NEG_INFINITY;
    let (mut evaluations, mut used, mut warning) = (0usize, 0.0, None);
    let mut round_values = Vec::with_capacity(q);
    for round in 0..q {
        let seed = stream::derive(cfg.seed, round as u64);
        let (round_model, prefix, round_floor) = if cfg.pending_fantasies {
            (&fantasy_model, DMatrix::zeros(0, d), floor)
        } else {
            (model, rows_to_matrix(&chosen, d), f64::NEG_INFINITY)
        };
        let make = |samples: usize| -> Result<Box<dyn Objective + '_>> {
            let obj =
                SetObjective::new(spec, round_model, prefix.clone(), 1, round_floor, cfg.minibatch, samples, seed, q)?;
            Ok(Box::new(obj))
        };
        let scores = |pool: &[Vec<f64>]| marginal_scores(spec, &fantasy_model, pool);
        let out = maximize_points(cfg, &bounds, 1, round_budget, &make, &scores, inc.as_deref(), seed)?;
        evaluations += out.evaluations;
        used += out.used;
        warning = warning.or(out.warning);
        let (mu, _) = fantasy_model.marginal(&out.x)?;
        if spec.kind.is_myopic_maximal() {
            floor = floor.max(pointwise_utility(spec, mu, mu));
        }
        fantasy_model = fantasy_model.condition_on(&out.x, mu)?;
        chosen.push(out.x);
        round_values.push(report_value(spec, model, &rows_to_matrix(&chosen, d), cfg.seed)?);
    }
    Ok(SelectionResult {
        x: rows_to_matrix(&chosen, d),
        acq_value: *round_values.last().expect("q >= 1"),
        evaluations,
        elapsed_s: started.elapsed().as_secs_f64(),
        budget_used: used,
        round_values,
        warning,
    })
}

/// Maximizes the `q * d`-dimensional joint acquisition in one shot.
pub fn joint_select(spec: &AcquisitionSpec, q: usize, model: &GpModel, cfg: &MaximizerConfig) -> Result<SelectionResult> {
    check_request(spec, q, cfg)?;
    let started = Instant::now();
    let d = model.dim();
    let bounds = cfg.bounds_for(d)?;
    // Same stream as the first greedy round, so q = 1 coincides with greedy.
    let seed = stream::derive(cfg.seed, 0);
    let make = |samples: usize| -> Result<Box<dyn Objective + '_>> {
        let obj =
            SetObjective::new(spec, model, DMatrix::zeros(0, d), q, f64::NEG_INFINITY, cfg.minibatch, samples, seed, q)?;
        Ok(Box::new(obj))
    };
    let scores = |pool: &[Vec<f64>]| marginal_scores(spec, model, pool);
    let inc = incumbent(model);
    let out = maximize_points(cfg, &bounds, q, cfg.budget, &make, &scores, inc.as_deref(), seed)?;
    let x = DMatrix::from_row_slice(q, d, &out.x);
    let acq_value = report_value(spec, model, &x, cfg.seed)?;
    Ok(SelectionResult {
        x,
        acq_value,
        evaluations: out.evaluations,
        elapsed_s: started.elapsed().as_secs_f64(),
        budget_used: out.used,
        round_values: vec![acq_value],
        warning: out.warning,
    })
}

/// How fantasized outcomes are drawn for incremental greedy selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FantasyOutcomes {
    /// `mu_s + sigma z_s` with independent standard normals per state.
    #[default]
    Sampled,
    /// Every state takes its posterior mean.
    PosteriorMean,
}

/// Greedy EI selection in incremental form: round one maximizes closed-form
/// EI; later rounds maximize closed-form EI averaged over `n_fantasies` fantasy
/// states, each extended by one outcome per round and never resampled.
pub fn incremental_greedy_select(
    spec: &AcquisitionSpec,
    q: usize,
    n_fantasies: usize,
    outcomes: FantasyOutcomes,
    model: &GpModel,
    cfg: &MaximizerConfig,
) -> Result<SelectionResult> {
    if spec.kind != AcqKind::Ei {
        return Err(Error::config(format!("incremental greedy selection needs EI, got {}", spec.kind)));
    }
    if n_fantasies == 0 {
        return Err(Error::config("need at least one fantasy state"));
    }
    check_request(spec, q, cfg)?;
    let started = Instant::now();
    let d = model.dim();
    let bounds = cfg.bounds_for(d)?;
    let round_budget = cfg.budget.scaled(1.0 / q as f64);
    let inc = incumbent(model);
    let alpha = spec.alpha;
    let (mut evaluations, mut used, mut warning) = (0usize, 0.0, None);
    let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut round_values = Vec::with_capacity(q);
    let mut states: Option<FantasyStates> = None;
    for round in 0..q {
        let seed = stream::derive(cfg.seed, round as u64);
        let cost = n_fantasies.max(1) as f64 / REFERENCE_SAMPLES as f64 / q as f64;
        let out = match &states {
            None => {
                let unit = 1.0 / REFERENCE_SAMPLES as f64 / q as f64;
                let make = |_: usize| -> Result<Box<dyn Objective + '_>> {
                    Ok(Box::new(FnObjective {
                        dim: d,
                        grad: |x: &[f64], _| marginal_ei_with_gradient(x, model, alpha),
                        value: |x: &[f64]| marginal_ei_closed_form(x, model, alpha),
                        gradient_cost: 2.0 * unit,
                        value_cost: unit,
                    }))
                };
                let scores = |pool: &[Vec<f64>]| marginal_scores(spec, model, pool);
                maximize_points(cfg, &bounds, 1, round_budget, &make, &scores, inc.as_deref(), seed)?
            }
            Some(st) => {
                let make = |_: usize| -> Result<Box<dyn Objective + '_>> {
                    Ok(Box::new(FnObjective {
                        dim: d,
                        grad: |x: &[f64], _| st.value_and_gradient(x),
                        value: |x: &[f64]| st.value(x),
                        gradient_cost: 2.0 * cost,
                        value_cost: cost,
                    }))
                };
                let scores = |pool: &[Vec<f64>]| {
                    use rayon::prelude::*;
                    pool.par_iter().map(|x| st.value(x).unwrap_or(0.0)).collect()
                };
                maximize_points(cfg, &bounds, 1, round_budget, &make, &scores, inc.as_deref(), seed)?
            }
        };
        evaluations += out.evaluations;
        used += out.used;
        warning = warning.or(out.warning);
        if round + 1 < q {
            let base = match states.take() {
                Some(st) => st,
                None => FantasyStates::new(model, n_fantasies, alpha)?,
            };
            let z = match outcomes {
                FantasyOutcomes::Sampled => DVector::from_fn(n_fantasies, |s, _| {
                    stream::normal(stream::derive(cfg.seed, FANTASY_TAG + round as u64), s as u64)
                }),
                FantasyOutcomes::PosteriorMean => DVector::zeros(n_fantasies),
            };
            states = Some(base.extend(&out.x, &z)?);
        }
        chosen.push(out.x);
        round_values.push(report_value(spec, model, &rows_to_matrix(&chosen, d), cfg.seed)?);
    }
    Ok(SelectionResult {
        x: rows_to_matrix(&chosen, d),
        acq_value: *round_values.last().expect("q >= 1"),
        evaluations,
        elapsed_s: started.elapsed().as_secs_f64(),
        budget_used: used,
        round_values,
        warning,
    })
}

/// Greedy selection over a finite ground set under fixed base samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteGreedy {
    /// Chosen row indices of the ground set, in selection order.
    pub indices: Vec<usize>,
    /// Normalized set-function value after each round.
    pub values: Vec<f64>,
}

/// Normalized set function `E max(v_min, max_i l(y_i)) - v_min` of the rows
/// `indices` of `ground`, under base samples `z`.
pub fn normalized_set_value(
    spec: &AcquisitionSpec,
    model: &GpModel,
    ground: &DMatrix<f64>,
    indices: &[usize],
    z: &BaseSamples,
    offset: NormalizationOffset,
) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    if !spec.kind.is_myopic_maximal() {
        return Err(Error::config(format!("{} is not in the myopic-maximal family", spec.kind)));
    }
    let x = DMatrix::from_fn(indices.len(), ground.ncols(), |i, j| ground[(indices[i], j)]);
    Ok(mc_estimate_with_floor(spec, &x, model, z, offset.v_min, false)?.value - offset.v_min)
}

/// Greedy maximization of [`normalized_set_value`] over rows of `ground`;
/// ties go to the lowest index.
pub fn greedy_select_discrete(
    spec: &AcquisitionSpec,
    model: &GpModel,
    ground: &DMatrix<f64>,
    q: usize,
    z: &BaseSamples,
    offset: NormalizationOffset,
) -> Result<DiscreteGreedy> {
    if q == 0 || q > ground.nrows() {
        return Err(Error::config(format!("need 1 <= q <= {}, got {q}", ground.nrows())));
    }
    let mut indices = Vec::with_capacity(q);
    let mut values = Vec::with_capacity(q);
    for _ in 0..q {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..ground.nrows()).filter(|c| !indices.contains(c)) {
            let mut trial = indices.clone();
            trial.push(c);
            let v = normalized_set_value(spec, model, ground, &trial, z, offset)?;
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((c, v));
            }
        }
        let (c, v) = best.expect("ground set has unchosen rows");
        indices.push(c);
        values.push(v);
    }
    Ok(DiscreteGreedy { indices, values })
}
