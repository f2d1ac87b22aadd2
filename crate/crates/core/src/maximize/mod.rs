//! Inner-loop solvers: multi-start Adam, random search, acquisition-weighted
//! initialization, and greedy / joint / incremental batch selection.

mod select;

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{ei_from_moments, normal_cdf, AcqKind, AcquisitionSpec};
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::stream;

pub use select::{
    greedy_select, greedy_select_discrete, incremental_greedy_select, joint_select, normalized_set_value, DiscreteGreedy,
    FantasyOutcomes,
};

/// Acquisition evaluations with this many samples on a full query set cost one unit.
pub const REFERENCE_SAMPLES: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaximizerKind {
    #[serde(alias = "grad")]
    GradAscent,
    #[serde(alias = "rs")]
    RandomSearch,
}

/// Decay of the Adam learning rate from its initial value `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    Constant,
    /// `eta / sqrt(t)` at step `t`.
    #[default]
    InvSqrt,
}

impl StepSchedule {
    pub fn rate(self, eta: f64, step: usize) -> f64 {
        match self {
            StepSchedule::Constant => eta,
            StepSchedule::InvSqrt => eta / (step.max(1) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetMode {
    /// Counted in acquisition evaluations (reproducible).
    Evals,
    /// Wall-clock seconds.
    Seconds,
}

/// Compute allotment for one selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub mode: BudgetMode,
    pub amount: f64,
}

impl Budget {
    pub fn evals(amount: f64) -> Self {
        Self { mode: BudgetMode::Evals, amount }
    }

    pub fn seconds(amount: f64) -> Self {
        Self { mode: BudgetMode::Seconds, amount }
    }

    pub(crate) fn scaled(self, factor: f64) -> Self {
        Self { amount: self.amount * factor, ..self }
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unit(d: usize) -> Self {
        Self { lower: vec![0.0; d], upper: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(Error::config("bounds need matching, non-empty lower and upper vectors"));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::config("bounds need finite lower <= upper"));
        }
        Ok(())
    }

    /// Clamps a flattened set of points (row-major, `d` per point).
    pub fn project(&self, x: &mut [f64]) {
        let d = self.dim();
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i % d], self.upper[i % d]);
        }
    }

    fn sample(&self, seed: u64, row: usize, n_points: usize) -> Vec<f64> {
        let d = self.dim();
        (0..n_points * d)
            .map(|c| {
                let u = stream::uniform(seed, stream::cell(row, c), 0);
                self.lower[c % d] + (self.upper[c % d] - self.lower[c % d]) * (1.0 - u)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaximizerConfig {
    pub kind: MaximizerKind,
    /// Starting positions for gradient ascent; unset means 32 for one free
    /// point (greedy rounds) and 64 for joint optimization of several.
    pub n_starts: Option<usize>,
    /// Initial Adam learning rate.
    pub step_size: f64,
    pub step_schedule: StepSchedule,
    /// Fresh base samples per gradient step.
    pub minibatch: usize,
    /// Cap on Adam steps per start, whatever budget remains.
    pub max_steps: usize,
    /// Budget for one whole selection (split evenly across greedy rounds).
    pub budget: Budget,
    pub bounds: Option<Bounds>,
    pub seed: u64,
    /// Condition greedy rounds on earlier picks fantasized at their predictive mean.
    pub pending_fantasies: bool,
    /// Samples per random-search evaluation.
    pub rs_samples: usize,
    /// Candidates per random-search batch.
    pub rs_batch: usize,
    /// Samples of the deterministic estimate used to pick among starts.
    pub selection_samples: usize,
    /// Share of the budget spent on initialization.
    pub init_fraction: f64,
    pub init_pool: usize,
    pub init_local: usize,
    /// Standard deviation of incumbent perturbations in the initialization pool.
    pub init_local_scale: f64,
}

impl Default for MaximizerConfig {
    fn default() -> Self {
        Self {
            kind: MaximizerKind::GradAscent,
            n_starts: None,
            step_size: 1.0 / 40.0,
            step_schedule: StepSchedule::InvSqrt,
            minibatch: 128,
            max_steps: 1000,
            budget: Budget::evals(4096.0),
            bounds: None,
            seed: 0,
            pending_fantasies: true,
            rs_samples: 1024,
            rs_batch: 32,
            selection_samples: 128,
            init_fraction: 0.1,
            init_pool: 2048,
            init_local: 512,
            init_local_scale: 0.05,
        }
    }
}

impl MaximizerConfig {
    /// Starts used when optimizing `k` points at once.
    pub fn starts_for(&self, k: usize) -> usize {
        self.n_starts.unwrap_or(if k > 1 { 64 } else { 32 })
    }

    pub fn greedy_default() -> Self {
        Self::default()
    }

    pub fn joint_default() -> Self {
        Self { n_starts: Some(64), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_starts == Some(0) {
            return Err(Error::config("n_starts must be at least 1"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::config("step_size must be positive"));
        }
        if !(self.budget.amount > 0.0) || !self.budget.amount.is_finite() {
            return Err(Error::config("budget must be positive"));
        }
        if self.max_steps == 0 || self.minibatch == 0 || self.rs_samples == 0 || self.rs_batch == 0 || self.selection_samples == 0 {
            return Err(Error::config("sample counts must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.init_fraction) {
            return Err(Error::config("init_fraction must lie in [0, 1)"));
        }
        if let Some(b) = &self.bounds {
            b.validate()?;
        }
        Ok(())
    }

    pub(crate) fn bounds_for(&self, d: usize) -> Result<Bounds> {
        match &self.bounds {
            None => Ok(Bounds::unit(d)),
            Some(b) if b.dim() == d => Ok(b.clone()),
            Some(b) => Err(Error::config(format!("bounds have dimension {}, problem has {d}", b.dim()))),
        }
    }
}

/// Outcome of one inner optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub x: DMatrix<f64>,
    /// Joint acquisition value at `x` under the deterministic estimator.
    pub acq_value: f64,
    pub evaluations: usize,
    pub elapsed_s: f64,
    /// Budget consumed, in the budget's own units.
    pub budget_used: f64,
    /// Joint value after each greedy round (one entry for one-shot solvers).
    pub round_values: Vec<f64>,
    pub warning: Option<String>,
}

/// Tracks budget consumption in evaluation units or seconds.
#[derive(Debug, Clone)]
pub struct BudgetMeter {
    budget: Budget,
    used: f64,
    started: Instant,
    evaluations: usize,
}

impl BudgetMeter {
    pub fn new(budget: Budget) -> Self {
        Self { budget, used: 0.0, started: Instant::now(), evaluations: 0 }
    }

    pub fn charge(&mut self, units: f64, evaluations: usize) {
        self.used += units;
        self.evaluations += evaluations;
    }

    pub fn used(&self) -> f64 {
        match self.budget.mode {
            BudgetMode::Evals => self.used,
            BudgetMode::Seconds => self.elapsed_s(),
        }
    }

    /// Whether `units` more evaluation work fits. In seconds mode this only
    /// checks that time remains.
    pub fn can_afford(&self, units: f64) -> bool {
        match self.budget.mode {
            BudgetMode::Evals => self.used + units <= self.budget.amount * (1.0 + 1e-12),
            BudgetMode::Seconds => self.elapsed_s() < self.budget.amount,
        }
    }

    pub fn elapsed_s(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }
}

/// Objective over a flattened set of points, maximized by the solvers below.
pub trait Objective: Sync {
    /// Length of the flattened decision vector.
    fn dim(&self) -> usize;
    /// Stochastic value and gradient; `step` selects the minibatch.
    fn value_and_gradient(&self, x: &[f64], step: u64) -> Result<(f64, Vec<f64>)>;
    /// Deterministic value used to rank candidates.
    fn value(&self, x: &[f64]) -> Result<f64>;
    /// Cost of one `value_and_gradient` call, in evaluation units.
    fn gradient_cost(&self) -> f64;
    /// Cost of one `value` call.
    fn value_cost(&self) -> f64;
}

/// An [`Objective`] built from closures.
pub struct FnObjective<G, V> {
    pub dim: usize,
    pub grad: G,
    pub value: V,
    pub gradient_cost: f64,
    pub value_cost: f64,
}

impl<G, V> Objective for FnObjective<G, V>
where
    G: Fn(&[f64], u64) -> Result<(f64, Vec<f64>)> + Sync,
    V: Fn(&[f64]) -> Result<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_and_gradient(&self, x: &[f64], step: u64) -> Result<(f64, Vec<f64>)> {
        (self.grad)(x, step)
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        (self.value)(x)
    }

    fn gradient_cost(&self) -> f64 {
        self.gradient_cost
    }

    fn value_cost(&self) -> f64 {
        self.value_cost
    }
}

/// Best candidate by deterministic value, ties to the lowest index; failed
/// evaluations rank last.
fn pick_best(objective: &dyn Objective, candidates: &[Vec<f64>], meter: &mut BudgetMeter) -> (usize, f64) {
    let values: Vec<f64> = candidates.par_iter().map(|x| objective.value(x).unwrap_or(f64::NEG_INFINITY)).collect();
    meter.charge(objective.value_cost() * candidates.len() as f64, candidates.len());
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Multi-start Adam ascent in lockstep, projected onto `bounds`. Stops when
/// the next step (plus the final ranking of the starts) would exceed the
/// budget, then returns the start with the best deterministic value.
pub fn grad_ascend_multistart(
    objective: &dyn Objective,
    starts: &[Vec<f64>],
    bounds: &Bounds,
    step_size: f64,
    schedule: StepSchedule,
    meter: &mut BudgetMeter,
    max_steps: Option<usize>,
) -> Result<(Vec<f64>, f64, Option<String>)> {
    if starts.is_empty() {
        return Err(Error::config("need at least one start"));
    }
    let n = objective.dim();
    if starts.iter().any(|s| s.len() != n) {
        return Err(Error::input("start has the wrong length"));
    }
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut xs: Vec<Vec<f64>> = starts.to_vec();
    for x in xs.iter_mut() {
        bounds.project(x);
    }
    let mut m1 = vec![vec![0.0; n]; xs.len()];
    let mut m2 = vec![vec![0.0; n]; xs.len()];
    let mut frozen = vec![false; xs.len()];
    let ranking_cost = objective.value_cost() * xs.len() as f64;
    let mut steps = 0usize;
    loop {
        if max_steps.is_some_and(|k| steps >= k) {
            break;
        }
        let active = frozen.iter().filter(|f| !**f).count();
        if active == 0 || !meter.can_afford(objective.gradient_cost() * active as f64 + ranking_cost) {
            break;
        }
        steps += 1;
        let t = steps as i32;
        let grads: Vec<Option<Vec<f64>>> = xs
            .par_iter()
            .zip(frozen.par_iter())
            .map(|(x, f)| if *f { None } else { objective.value_and_gradient(x, steps as u64).ok().map(|(_, g)| g) })
            .collect();
        meter.charge(objective.gradient_cost() * active as f64, active);
        let rate = schedule.rate(step_size, steps);
        for (s, g) in grads.into_iter().enumerate() {
            if frozen[s] {
                continue;
            }
            let Some(g) = g.filter(|g| g.iter().all(|v| v.is_finite())) else {
                // Degenerate or failed evaluation: keep the start where it is.
                frozen[s] = true;
                continue;
            };
            for p in 0..n {
                m1[s][p] = b1 * m1[s][p] + (1.0 - b1) * g[p];
                m2[s][p] = b2 * m2[s][p] + (1.0 - b2) * g[p] * g[p];
                let mh = m1[s][p] / (1.0 - b1.powi(t));
                let vh = m2[s][p] / (1.0 - b2.powi(t));
                xs[s][p] += rate * mh / (vh.sqrt() + eps);
            }
            bounds.project(&mut xs[s]);
        }
    }
    let warning = (steps == 0).then(|| "budget too small for a gradient step; returning the best start".to_string());
    let (best, value) = pick_best(objective, &xs, meter);
    Ok((xs.swap_remove(best), value, warning))
}

/// Uniform random search over `bounds^k` in batches; at least one batch is
/// always evaluated.
pub fn random_search(
    objective: &dyn Objective,
    bounds: &Bounds,
    batch: usize,
    seed: u64,
    meter: &mut BudgetMeter,
) -> Result<(Vec<f64>, f64)> {
    let n = objective.dim();
    let d = bounds.dim();
    if n % d != 0 {
        return Err(Error::input("objective dimension is not a multiple of the bounds dimension"));
    }
    let mut best: (Vec<f64>, f64) = (Vec::new(), f64::NEG_INFINITY);
    let mut drawn = 0usize;
    loop {
        // Shrink the last batch to what the budget still covers; the first
        // batch always holds at least one candidate.
        let size = match meter.budget.mode {
            BudgetMode::Evals => {
                let room = ((meter.budget.amount - meter.used) / objective.value_cost()).floor();
                if room.is_nan() { batch } else { (room.max(0.0) as usize).min(batch) }
            }
            BudgetMode::Seconds => {
                if meter.can_afford(0.0) { batch } else { 0 }
            }
        };
        let size = if drawn == 0 { size.max(1) } else { size };
        if size == 0 {
            break;
        }
        let candidates: Vec<Vec<f64>> = (drawn..drawn + size).map(|i| bounds.sample(seed, i, n / d)).collect();
        let (i, v) = pick_best(objective, &candidates, meter);
        if v > best.1 || best.0.is_empty() {
            best = (candidates[i].clone(), v);
        }
        drawn += size;
    }
    Ok(best)
}

/// Closed-form (or cheap) marginal acquisition used to score initialization
/// pools. ES and KG fall back to EI at the spec's threshold.
pub fn marginal_acquisition(spec: &AcquisitionSpec, model: &GpModel, x: &[f64]) -> Result<f64> {
    let (mu, var) = model.marginal(x)?;
    let sigma = var.sqrt();
    Ok(match spec.kind {
        AcqKind::Ei | AcqKind::Es | AcqKind::Kg => ei_from_moments(mu, sigma, spec.alpha),
        AcqKind::Pi => {
            if sigma > 0.0 {
                normal_cdf((mu - spec.alpha) / sigma)
            } else if mu > spec.alpha {
                1.0
            } else {
                0.0
            }
        }
        AcqKind::Sr => mu,
        AcqKind::Ucb => mu + spec.beta.sqrt() * sigma,
    })
}

/// Draws `n_points` starting points with probability proportional to positive
/// scores over a pool of uniform points plus perturbations of the incumbent.
/// Falls back to uniform draws from the pool when no score is positive.
#[allow(clippy::too_many_arguments)]
pub fn multi_start_init(
    score: &(dyn Fn(&[f64]) -> f64 + Sync),
    bounds: &Bounds,
    incumbent: Option<&[f64]>,
    n_points: usize,
    pool_uniform: usize,
    pool_local: usize,
    local_scale: f64,
    seed: u64,
) -> DMatrix<f64> {
    let pool = init_pool(bounds, incumbent, pool_uniform, pool_local, local_scale, seed);
    let scores: Vec<f64> = pool.par_iter().map(|p| score(p)).collect();
    select_proportional(&pool, &scores, n_points, stream::derive(seed, 2))
}

pub(crate) fn init_pool(
    bounds: &Bounds,
    incumbent: Option<&[f64]>,
    pool_uniform: usize,
    pool_local: usize,
    local_scale: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let d = bounds.dim();
    let mut pool: Vec<Vec<f64>> = (0..pool_uniform).map(|i| bounds.sample(seed, i, 1)).collect();
    if let Some(inc) = incumbent {
        for i in 0..pool_local {
            let mut p: Vec<f64> = (0..d)
                .map(|j| {
                    let width = bounds.upper[j] - bounds.lower[j];
                    inc[j] + local_scale * width * stream::normal(stream::derive(seed, 1), stream::cell(i, j))
                })
                .collect();
            bounds.project(&mut p);
            pool.push(p);
        }
    }
    if pool.is_empty() {
        pool.push(bounds.sample(seed, 0, 1));
    }
    pool
}

pub(crate) fn select_proportional(pool: &[Vec<f64>], scores: &[f64], n_points: usize, seed: u64) -> DMatrix<f64> {
    let d = pool[0].len();
    let weights: Vec<f64> = scores.iter().map(|s| if s.is_finite() && *s > 0.0 { *s } else { 0.0 }).collect();
    let total: f64 = weights.iter().sum();
    let mut out = DMatrix::zeros(n_points, d);
    for r in 0..n_points {
        let u = stream::uniform(seed, r as u64, 0);
        let idx = if total > 0.0 {
            let target = (1.0 - u) * total;
            let mut acc = 0.0;
            let mut pick = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
            for (i, w) in weights.iter().enumerate() {
                acc += w;
                if *w > 0.0 && acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            ((u * pool.len() as f64) as usize).min(pool.len() - 1)
        };
        for j in 0..d {
            out[(r, j)] = pool[idx][j];
        }
    }
    out
}
