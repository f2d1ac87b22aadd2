//! Bayesian-optimization outer loop, inner-budget calibration, trial
//! orchestration and results emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::{mc_value, AcqKind, AcquisitionSpec};
use crate::error::{Error, Result};
use crate::gp::{fit_hyperparameters_map_with, Dataset, FitOptions, GpModel, Hyperparams, PriorConfig};
use crate::maximize::{
    greedy_select, incremental_greedy_select, joint_select, Budget, BudgetMode, FantasyOutcomes, MaximizerConfig,
    SelectionResult,
};
use crate::reparam::{BaseSamples, SampleMode};
use crate::stream;
use crate::tasks::{observe, ObservationChannel, Task, TaskSpec};

/// Exact CSV header of emitted results.
pub const CSV_HEADER: &str = "trial,iteration,wall_time_s,best_observed,log10_regret,acq_value";

/// Regrets below this are clamped before taking log10.
pub const REGRET_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParallelMode {
    Greedy,
    Joint,
    Incremental,
}

impl std::str::FromStr for ParallelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "joint" => Ok(Self::Joint),
            "incremental" => Ok(Self::Incremental),
            other => Err(Error::config(format!("unknown parallel mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateMode {
    /// Hyperparameters of the prior the task was drawn from (synthetic tasks only).
    KnownPrior,
    /// MAP hyperparameters refit every iteration.
    MapFit,
}

/// Acquisition settings; EI and PI thresholds track the best observed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    pub kind: AcqKind,
    pub beta: f64,
    pub tau: f64,
    pub mc_samples: usize,
    /// Discretization size for ES and KG.
    pub discretization: usize,
    pub inner_mc_samples: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self { kind: AcqKind::Ei, beta: 2.0, tau: 0.05, mc_samples: 128, discretization: 64, inner_mc_samples: 64 }
    }
}

/// Inner budget: `n` acquisition evaluations, or the time they take.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerBudget {
    pub n: usize,
    pub mode: BudgetMode,
}

impl Default for InnerBudget {
    fn default() -> Self {
        Self { n: 1 << 12, mode: BudgetMode::Evals }
    }
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub d: usize,
    pub q: usize,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    #[serde(default)]
    pub maximizer: MaximizerConfig,
    #[serde(default = "default_parallel_mode")]
    pub parallel_mode: ParallelMode,
    #[serde(default = "default_surrogate")]
    pub surrogate: SurrogateMode,
    #[serde(default = "default_n_initial")]
    pub n_initial: usize,
    pub n_iterations: usize,
    /// Optional cap on total observations, initial design included.
    #[serde(default)]
    pub max_evaluations: Option<usize>,
    #[serde(default = "default_n_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub inner_budget: InnerBudget,
    #[serde(default = "default_noise")]
    pub noise_variance: f64,
    /// Fantasy states for incremental selection.
    #[serde(default = "default_n_fantasies")]
    pub n_fantasies: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_parallel_mode() -> ParallelMode {
    ParallelMode::Greedy
}
fn default_surrogate() -> SurrogateMode {
    SurrogateMode::KnownPrior
}
fn default_n_initial() -> usize {
    3
}
fn default_n_trials() -> usize {
    32
}
fn default_noise() -> f64 {
    1e-3
}
fn default_n_fantasies() -> usize {
    64
}

impl RunConfig {
    /// Defaults for a synthetic task of dimension `d` with batch size `q`.
    pub fn synthetic(d: usize, q: usize, n_iterations: usize) -> Self {
        Self {
            task: TaskSpec::synthetic(),
            d,
            q,
            acquisition: AcquisitionConfig::default(),
            maximizer: MaximizerConfig::default(),
            parallel_mode: default_parallel_mode(),
            surrogate: default_surrogate(),
            n_initial: default_n_initial(),
            n_iterations,
            max_evaluations: None,
            n_trials: default_n_trials(),
            inner_budget: InnerBudget::default(),
            noise_variance: default_noise(),
            n_fantasies: default_n_fantasies(),
            seed: 0,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_initial == 0 || self.q == 0 || self.n_trials == 0 || self.d == 0 {
            return Err(Error::config("n_initial, q, n_trials and d must be at least 1"));
        }
        if let Some(fixed) = self.task.fixed_dim() {
            if fixed != self.d {
                return Err(Error::config(format!("task is {fixed}-dimensional but d = {}", self.d)));
            }
        }
        if self.surrogate == SurrogateMode::KnownPrior && !matches!(self.task, TaskSpec::Synthetic { .. }) {
            return Err(Error::config("known_prior needs a synthetic task; use map_fit for benchmarks"));
        }
        if self.parallel_mode == ParallelMode::Incremental && self.acquisition.kind != AcqKind::Ei {
            return Err(Error::config("incremental mode supports EI only"));
        }
        if self.inner_budget.n == 0 {
            return Err(Error::config("inner budget must be positive"));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(Error::config("noise_variance must be non-negative"));
        }
        let probe = AcquisitionSpec { discretization: Some(DMatrix::zeros(1, self.d)), ..self.acquisition_spec(0.0) };
        probe.validate()?;
        self.maximizer.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    fn acquisition_spec(&self, best: f64) -> AcquisitionSpec {
        let a = &self.acquisition;
        AcquisitionSpec {
            kind: a.kind,
            alpha: best,
            beta: a.beta,
            tau: a.tau,
            discretization: None,
            mc_samples: a.mc_samples,
            base_mode: SampleMode::Deterministic,
            inner_mc_samples: a.inner_mc_samples,
        }
    }
}

/// One logged outer-loop iteration (row 0 is the initial design).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub iteration: usize,
    pub wall_time_s: f64,
    pub best_observed: f64,
    pub log10_regret: f64,
    pub acq_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub rows: Vec<TrialRow>,
    /// Diagnostic when the trial stopped early.
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn final_log10_regret(&self) -> Option<f64> {
        self.rows.last().map(|r| r.log10_regret)
    }
}

/// Turns an evaluation count into a budget: passthrough in evaluation mode,
/// otherwise the median wall time of three timed batches of `n` evaluations.
pub fn calibrate_inner_budget(
    n: usize,
    mode: BudgetMode,
    model: &GpModel,
    spec: &AcquisitionSpec,
    q: usize,
    seed: u64,
) -> Result<Budget> {
    if n == 0 || q == 0 {
        return Err(Error::config("calibration needs n >= 1 and q >= 1"));
    }
    match mode {
        BudgetMode::Evals => Ok(Budget::evals(n as f64)),
        BudgetMode::Seconds => {
            let d = model.dim();
            let z = BaseSamples::draw(spec.mc_samples, q, SampleMode::Deterministic, seed)?;
            let mut times: Vec<f64> = (0..3u64)
                .map(|rep| {
                    let started = Instant::now();
                    (0..n).into_par_iter().for_each(|i| {
                        let x = DMatrix::from_fn(q, d, |r, c| {
                            stream::uniform(stream::derive(seed, rep), stream::cell(i * q + r, c), 0)
                        });
                        let _ = mc_value(spec, &x, model, &z);
                    });
                    started.elapsed().as_secs_f64()
                })
                .collect();
            times.sort_by(f64::total_cmp);
            Ok(Budget::seconds(times[1]))
        }
    }
}

/// Prior the synthetic tasks are drawn from, with the observation noise.
pub fn known_prior(d: usize, noise_variance: f64) -> Result<Hyperparams> {
    Hyperparams::new(vec![(d as f64 / 16.0).sqrt(); d], 1.0, noise_variance, 0.0)
}

struct TrialState {
    task: Task,
    channel: ObservationChannel,
    data: Dataset,
    observations: u64,
    /// Row of the best noisy observation.
    best: usize,
    true_values: Vec<f64>,
}

impl TrialState {
    fn observe(&mut self, x: &[f64]) -> Result<()> {
        let y = observe(&self.task, x, &self.channel, self.observations)?;
        self.observations += 1;
        self.true_values.push(self.task.evaluate(x)?);
        self.data = self.data.with_observation(x, y)?;
        let n = self.data.len();
        if n == 1 || y > self.data.outputs()[self.best] {
            self.best = n - 1;
        }
        Ok(())
    }

    fn row(&self, iteration: usize, wall_time_s: f64, acq_value: f64) -> TrialRow {
        let regret = (self.task.optimum() - self.true_values[self.best]).abs().max(REGRET_FLOOR);
        TrialRow {
            iteration,
            wall_time_s,
            best_observed: self.data.outputs()[self.best],
            log10_regret: regret.log10(),
            acq_value,
        }
    }
}

/// Runs one BO trial. Failures after the initial design end the trial with
/// the rows logged so far and a diagnostic.
pub fn run_trial(cfg: &RunConfig, trial: usize, trial_seed: u64) -> Result<TrialRecord> {
    cfg.validate()?;
    let started = Instant::now();
    let timed = cfg.inner_budget.mode == BudgetMode::Seconds;
    let clock = |s: &Instant| if timed { s.elapsed().as_secs_f64() } else { 0.0 };
    let task = cfg.task.build(cfg.d, stream::derive(trial_seed, 1))?;
    let mut state = TrialState {
        task,
        channel: ObservationChannel::new(cfg.noise_variance, stream::derive(trial_seed, 2))?,
        data: Dataset::empty(cfg.d),
        observations: 0,
        best: 0,
        true_values: Vec::new(),
    };
    let init_seed = stream::derive(trial_seed, 3);
    for i in 0..cfg.n_initial {
        let x: Vec<f64> = (0..cfg.d).map(|j| 1.0 - stream::uniform(init_seed, stream::cell(i, j), 0)).collect();
        state.observe(&x)?;
    }
    let mut rows = vec![state.row(0, clock(&started), f64::NAN)];
    let mut error = None;
    for iteration in 1..=cfg.n_iterations {
        if cfg.max_evaluations.is_some_and(|cap| state.data.len() >= cap) {
            break;
        }
        let iter_seed = stream::derive(trial_seed, 1000 + iteration as u64);
        match select_batch(cfg, &state, iter_seed) {
            Ok(sel) => {
                let take = cfg.max_evaluations.map_or(cfg.q, |cap| cfg.q.min(cap - state.data.len()));
                for i in 0..take {
                    let x: Vec<f64> = sel.x.row(i).iter().copied().collect();
                    state.observe(&x)?;
                }
                rows.push(state.row(iteration, clock(&started), sel.acq_value));
            }
            Err(e) => {
                log::warn!("trial {trial} stopped at iteration {iteration}: {e}");
                error = Some(format!("iteration {iteration}: {e}"));
                break;
            }
        }
    }
    Ok(TrialRecord { trial, seed: trial_seed, rows, error })
}

fn select_batch(cfg: &RunConfig, state: &TrialState, seed: u64) -> Result<SelectionResult> {
    let hp = match cfg.surrogate {
        SurrogateMode::KnownPrior => known_prior(cfg.d, cfg.noise_variance)?,
        SurrogateMode::MapFit => {
            let opts = FitOptions { seed: stream::derive(seed, 1), ..FitOptions::default() };
            fit_hyperparameters_map_with(&state.data, &PriorConfig::default(), &opts)?
        }
    };
    let model = GpModel::new(state.data.clone(), hp)?;
    let best = state.data.outputs()[state.best];
    let mut spec = cfg.acquisition_spec(best);
    if spec.kind.needs_discretization() {
        spec.discretization = Some(discretization(&state.data, cfg.acquisition.discretization, seed));
    }
    let budget = calibrate_inner_budget(cfg.inner_budget.n, cfg.inner_budget.mode, &model, &spec, cfg.q, seed)?;
    let mcfg = MaximizerConfig { budget, seed: stream::derive(seed, 2), ..cfg.maximizer.clone() };
    match cfg.parallel_mode {
        ParallelMode::Greedy => greedy_select(&spec, cfg.q, &model, &mcfg),
        ParallelMode::Joint => joint_select(&spec, cfg.q, &model, &mcfg),
        ParallelMode::Incremental => {
            incremental_greedy_select(&spec, cfg.q, cfg.n_fantasies, FantasyOutcomes::Sampled, &model, &mcfg)
        }
    }
}

/// Sobol points plus the best observed input.
fn discretization(data: &Dataset, n: usize, seed: u64) -> DMatrix<f64> {
    let d = data.dim();
    let outputs: &DVector<f64> = data.outputs();
    let best = outputs.argmax().0;
    let scramble = seed as u32;
    DMatrix::from_fn(n.max(1), d, |i, j| {
        if i == 0 {
            data.inputs()[(best, j)]
        } else {
            sobol_burley::sample(i as u32, j as u32, scramble) as f64
        }
    })
}

/// Runs all trials (concurrently); trial `t` uses seed `derive(cfg.seed, t)`,
/// so results do not depend on scheduling.
pub fn run_trials(cfg: &RunConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    (0..cfg.n_trials).into_par_iter().map(|t| run_trial(cfg, t, stream::derive(cfg.seed, t as u64))).collect()
}

/// Metadata written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub config: RunConfig,
    pub software_version: String,
    pub benchmark_constants_version: u32,
    pub trial_seeds: Vec<u64>,
    pub trial_errors: Vec<Option<String>>,
}

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

/// CSV text for `records` (header included).
pub fn render_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for rec in records {
        for r in &rec.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                rec.trial,
                r.iteration,
                fmt_float(r.wall_time_s),
                fmt_float(r.best_observed),
                fmt_float(r.log10_regret),
                fmt_float(r.acq_value)
            ));
        }
    }
    out
}

/// Path of the metadata sidecar for a CSV path.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Writes the CSV and its JSON sidecar, each via a temporary file and an
/// atomic rename.
pub fn emit_results(records: &[TrialRecord], cfg: &RunConfig, out_path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::input("no records to emit"));
    }
    if out_path.file_name().is_none() || out_path.is_dir() {
        return Err(Error::input(format!("{} is not a file path", out_path.display())));
    }
    let meta = RunMetadata {
        config_hash: cfg.hash(),
        config: cfg.clone(),
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        benchmark_constants_version: crate::tasks::constants_version(),
        trial_seeds: records.iter().map(|r| r.seed).collect(),
        trial_errors: records.iter().map(|r| r.error.clone()).collect(),
    };
    let mut meta_json = serde_json::to_string_pretty(&meta)?;
    meta_json.push('\n');
    write_atomic(out_path, render_csv(records).as_bytes())?;
    write_atomic(&sidecar_path(out_path), meta_json.as_bytes())?;
    Ok(())
}

/// Reads a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::from_json(&fs::read_to_string(path)?)
}

/// Median of the final log10 regrets across trials (NaN if none).
pub fn median_final_regret(records: &[TrialRecord]) -> f64 {
    let mut v: Vec<f64> = records.iter().filter_map(|r| r.final_log10_regret()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
