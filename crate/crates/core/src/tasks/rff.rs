use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maximize::{grad_ascend_multistart, Bounds, Budget, BudgetMeter, FnObjective, StepSchedule};

/// Spectral family of the sampled features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spectrum {
    /// Multivariate t with the given degrees of freedom (5 gives Matérn-5/2).
    StudentT(f64),
    /// Gaussian spectrum, i.e. the squared-exponential kernel.
    Gaussian,
}

/// How `true_max` is estimated: screen `candidates` quasi-random points, then
/// refine the best `refine` of them by projected Adam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxSearch {
    pub candidates: usize,
    pub refine: usize,
    pub steps: usize,
}

impl Default for MaxSearch {
    fn default() -> Self {
        Self { candidates: 4096, refine: 32, steps: 300 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RffOptions {
    pub dim: usize,
    pub n_basis: usize,
    pub spectrum: Spectrum,
    /// Kernel lengthscale; `sqrt(d / 16)` by default.
    pub lengthscale: f64,
    pub amplitude: f64,
    pub max_search: MaxSearch,
}

impl RffOptions {
    pub fn matern52(dim: usize, n_basis: usize) -> Self {
        Self {
            dim,
            n_basis,
            spectrum: Spectrum::StudentT(5.0),
            lengthscale: (dim as f64 / 16.0).sqrt(),
            amplitude: 1.0,
            max_search: MaxSearch::default(),
        }
    }
}

/// Approximate GP prior draw `f(x) = a * sum_i w_i cos(omega_i . x + b_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TaskFile", try_from = "TaskFile")]
pub struct SyntheticTask {
    frequencies: DMatrix<f64>,
    phases: DVector<f64>,
    weights: DVector<f64>,
    amplitude: f64,
    seed: u64,
    true_max: f64,
    argmax_estimate: Vec<f64>,
}

/// On-disk form of a [`SyntheticTask`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub dim: usize,
    pub seed: u64,
    pub amplitude: f64,
    /// One row per basis function.
    pub frequencies: Vec<Vec<f64>>,
    pub phases: Vec<f64>,
    pub weights: Vec<f64>,
    pub true_max: f64,
    pub argmax_estimate: Vec<f64>,
}

impl From<SyntheticTask> for TaskFile {
    fn from(t: SyntheticTask) -> Self {
        Self {
            dim: t.dim(),
            seed: t.seed,
            amplitude: t.amplitude,
            frequencies: t.frequencies.row_iter().map(|r| r.iter().copied().collect()).collect(),
            phases: t.phases.iter().copied().collect(),
            weights: t.weights.iter().copied().collect(),
            true_max: t.true_max,
            argmax_estimate: t.argmax_estimate,
        }
    }
}

impl TryFrom<TaskFile> for SyntheticTask {
    type Error = Error;

    fn try_from(f: TaskFile) -> Result<Self> {
        let n = f.frequencies.len();
        if f.dim == 0 || f.phases.len() != n || f.weights.len() != n || f.argmax_estimate.len() != f.dim {
            return Err(Error::input("task file has inconsistent lengths"));
        }
        if f.frequencies.iter().any(|r| r.len() != f.dim) {
            return Err(Error::input("frequency rows must have `dim` entries"));
        }
        Ok(Self {
            frequencies: DMatrix::from_fn(n, f.dim, |i, j| f.frequencies[i][j]),
            phases: DVector::from_vec(f.phases),
            weights: DVector::from_vec(f.weights),
            amplitude: f.amplitude,
            seed: f.seed,
            true_max: f.true_max,
            argmax_estimate: f.argmax_estimate,
        })
    }
}

/// Draws a Matérn-5/2 task with `Lambda = (d/16) I` and estimates its maximum.
pub fn sample_matern_task(d: usize, n_basis: usize, seed: u64) -> Result<SyntheticTask> {
    sample_rff_task(&RffOptions::matern52(d, n_basis), seed)
}

pub fn sample_rff_task(opts: &RffOptions, seed: u64) -> Result<SyntheticTask> {
    let (d, n) = (opts.dim, opts.n_basis);
    if d == 0 || n == 0 {
        return Err(Error::config("synthetic tasks need d >= 1 and n_basis >= 1"));
    }
    if !(opts.lengthscale > 0.0) || !(opts.amplitude > 0.0) {
        return Err(Error::config("lengthscale and amplitude must be positive"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let chi = match opts.spectrum {
        Spectrum::StudentT(nu) if nu > 0.0 => Some((nu, ChiSquared::new(nu).map_err(|e| Error::config(e.to_string()))?)),
        Spectrum::StudentT(_) => return Err(Error::config("degrees of freedom must be positive")),
        Spectrum::Gaussian => None,
    };
    let mut frequencies = DMatrix::zeros(n, d);
    for i in 0..n {
        // Multivariate t: a Gaussian row scaled by sqrt(nu / chi^2_nu).
        let scale = match &chi {
            Some((nu, dist)) => (nu / dist.sample(&mut rng)).sqrt(),
            None => 1.0,
        };
        for j in 0..d {
            let g: f64 = StandardNormal.sample(&mut rng);
            frequencies[(i, j)] = g * scale / opts.lengthscale;
        }
    }
    let phases = DVector::from_fn(n, |_, _| rng.gen_range(0.0..std::f64::consts::TAU));
    let norm = (2.0 / n as f64).sqrt();
    let weights = DVector::from_fn(n, |_, _| {
        let g: f64 = StandardNormal.sample(&mut rng);
        norm * g
    });
    let mut task = SyntheticTask {
        frequencies,
        phases,
        weights,
        amplitude: opts.amplitude,
        seed,
        true_max: f64::NAN,
        argmax_estimate: vec![0.5; d],
    };
    task.estimate_max(opts.max_search)?;
    Ok(task)
}

impl SyntheticTask {
    /// Builds a task from explicit fields; `true_max` is estimated.
    pub fn from_parts(
        frequencies: DMatrix<f64>,
        phases: DVector<f64>,
        weights: DVector<f64>,
        amplitude: f64,
        search: MaxSearch,
    ) -> Result<Self> {
        let n = frequencies.nrows();
        if frequencies.ncols() == 0 || phases.len() != n || weights.len() != n {
            return Err(Error::input("frequencies, phases and weights must agree in length"));
        }
        let d = frequencies.ncols();
        let mut task =
            Self { frequencies, phases, weights, amplitude, seed: 0, true_max: f64::NAN, argmax_estimate: vec![0.5; d] };
        task.estimate_max(search)?;
        Ok(task)
    }

    pub fn dim(&self) -> usize {
        self.frequencies.ncols()
    }

    pub fn n_basis(&self) -> usize {
        self.frequencies.nrows()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frequencies(&self) -> &DMatrix<f64> {
        &self.frequencies
    }

    pub fn phases(&self) -> &DVector<f64> {
        &self.phases
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn true_max(&self) -> f64 {
        self.true_max
    }

    pub fn argmax_estimate(&self) -> &[f64] {
        &self.argmax_estimate
    }

    /// Same task with every weight scaled by `factor`.
    pub fn with_scaled_weights(&self, factor: f64) -> Result<Self> {
        let mut t = self.clone();
        t.weights *= factor;
        t.estimate_max(MaxSearch { candidates: 256, refine: 4, steps: 100 })?;
        Ok(t)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::input(format!("task has dimension {}, point has {}", self.dim(), x.len())));
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::input("point lies outside the unit cube"));
        }
        Ok(self.raw_value(x))
    }

    fn raw_value(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let arg = &self.frequencies * xv + &self.phases;
        self.amplitude * arg.iter().zip(self.weights.iter()).map(|(a, w)| w * a.cos()).sum::<f64>()
    }

    fn raw_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let xv = DVector::from_column_slice(x);
        let arg = &self.frequencies * xv + &self.phases;
        let value = self.amplitude * arg.iter().zip(self.weights.iter()).map(|(a, w)| w * a.cos()).sum::<f64>();
        let s = DVector::from_fn(arg.len(), |i, _| -self.amplitude * self.weights[i] * arg[i].sin());
        let g = self.frequencies.transpose() * s;
        (value, g.iter().copied().collect())
    }

    /// Covariance of `f` over the rows of `x` with the weights integrated out
    /// (frequencies and phases held fixed): `a^2 (2/n) sum_i cos(.)cos(.)`.
    pub fn feature_covariance(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut arg = x * self.frequencies.transpose();
        for mut row in arg.row_iter_mut() {
            row += self.phases.transpose();
        }
        arg.apply(|a| *a = a.cos());
        let scale = self.amplitude * self.amplitude * 2.0 / self.n_basis() as f64;
        (&arg * arg.transpose()) * scale
    }

    /// Values at the rows of `x` (unchecked), computed in blocks.
    pub fn evaluate_batch(&self, x: &DMatrix<f64>) -> DVector<f64> {
        const BLOCK: usize = 256;
        let mut out = DVector::zeros(x.nrows());
        let mut start = 0;
        while start < x.nrows() {
            let len = BLOCK.min(x.nrows() - start);
            let mut arg = x.rows(start, len) * self.frequencies.transpose();
            for mut row in arg.row_iter_mut() {
                row += self.phases.transpose();
            }
            arg.apply(|a| *a = a.cos());
            let v = arg * &self.weights * self.amplitude;
            out.rows_mut(start, len).copy_from(&v);
            start += len;
        }
        out
    }

    fn estimate_max(&mut self, search: MaxSearch) -> Result<()> {
        let d = self.dim();
        let n = search.candidates.max(1);
        let pts = DMatrix::from_fn(n, d, |i, j| {
            sobol_burley::sample(i as u32, j as u32, self.seed as u32) as f64
        });
        let vals = self.evaluate_batch(&pts);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| vals[*b].total_cmp(&vals[*a]).then(a.cmp(b)));
        let (mut best_x, mut best) = (pts.row(order[0]).iter().copied().collect::<Vec<_>>(), vals[order[0]]);
        let refine = search.refine.min(n);
        if refine > 0 && search.steps > 0 {
            let starts: Vec<Vec<f64>> = order[..refine].iter().map(|i| pts.row(*i).iter().copied().collect()).collect();
            let obj = FnObjective {
                dim: d,
                grad: |x: &[f64], _| Ok(self.raw_gradient(x)),
                value: |x: &[f64]| Ok(self.raw_value(x)),
                gradient_cost: 1.0,
                value_cost: 1.0,
            };
            let mut meter = BudgetMeter::new(Budget::evals(f64::INFINITY));
            let (x, v, _) =
                grad_ascend_multistart(&obj, &starts, &Bounds::unit(d), 0.01, StepSchedule::Constant, &mut meter, Some(search.steps))?;
            if v > best {
                best = v;
                best_x = x;
            }
        }
        self.true_max = best;
        self.argmax_estimate = best_x;
        Ok(())
    }
}
