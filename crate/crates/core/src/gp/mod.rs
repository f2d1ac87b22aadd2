//! Gaussian process surrogate: posterior moments over query sets, their input
//! derivatives, fantasy conditioning, and MAP hyperparameter fitting.

mod fit;
pub mod kernel;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reparam::stable_cholesky;

pub use fit::{fit_hyperparameters_map, fit_hyperparameters_map_with, FitOptions, LogNormalPrior, PriorConfig};
pub use kernel::matern52_cross_covariance;

/// Rows closer than this (max-abs, unit-cube coordinates) count as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-9;

const BOUNDS_TOL: f64 = 1e-12;

/// Observed input/output pairs on the unit cube.
///
/// Fantasized pairs are flagged: they stand for noiseless function values and
/// are conditioned on without observation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    outputs: DVector<f64>,
    fantasy: Vec<bool>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, outputs: DVector<f64>) -> Result<Self> {
        if inputs.nrows() != outputs.len() {
            return Err(Error::input(format!(
                "{} inputs but {} outputs",
                inputs.nrows(),
                outputs.len()
            )));
        }
        if inputs.ncols() == 0 {
            return Err(Error::input("dataset dimension must be at least 1"));
        }
        check_unit_cube(&inputs)?;
        if outputs.iter().any(|y| !y.is_finite()) {
            return Err(Error::input("outputs must be finite"));
        }
        let n = outputs.len();
        Ok(Self { inputs, outputs, fantasy: vec![false; n] })
    }

    pub fn empty(dim: usize) -> Self {
        Self { inputs: DMatrix::zeros(0, dim.max(1)), outputs: DVector::zeros(0), fantasy: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &DVector<f64> {
        &self.outputs
    }

    pub fn is_fantasy(&self, i: usize) -> bool {
        self.fantasy[i]
    }

    /// Largest real (non-fantasy) observation.
    pub fn best_observed(&self) -> Option<f64> {
        self.outputs
            .iter()
            .zip(&self.fantasy)
            .filter(|(_, f)| !**f)
            .map(|(y, _)| *y)
            .fold(None, |acc, y| Some(acc.map_or(y, |a: f64| a.max(y))))
    }

    /// Largest fantasized outcome, if any.
    pub fn max_fantasy(&self) -> Option<f64> {
        self.outputs
            .iter()
            .zip(&self.fantasy)
            .filter(|(_, f)| **f)
            .map(|(y, _)| *y)
            .fold(None, |acc, y| Some(acc.map_or(y, |a: f64| a.max(y))))
    }

    /// Appends a real observation.
    pub fn with_observation(&self, x: &[f64], y: f64) -> Result<Self> {
        self.append(x, y, false)
    }

    fn append(&self, x: &[f64], y: f64, fantasy: bool) -> Result<Self> {
        if x.len() != self.dim() {
            return Err(Error::input(format!("point has {} coordinates, dataset has {}", x.len(), self.dim())));
        }
        if x.iter().any(|v| !(-BOUNDS_TOL..=1.0 + BOUNDS_TOL).contains(v)) {
            return Err(Error::input("point lies outside the unit cube"));
        }
        if !y.is_finite() {
            return Err(Error::input("output must be finite"));
        }
        let n = self.len();
        let mut inputs = self.inputs.clone().resize_vertically(n + 1, 0.0);
        for (j, v) in x.iter().enumerate() {
            inputs[(n, j)] = *v;
        }
        let outputs = self.outputs.clone().push(y);
        let mut flags = self.fantasy.clone();
        flags.push(fantasy);
        Ok(Self { inputs, outputs, fantasy: flags })
    }
}

/// Appends a fantasized (noiseless) pair, leaving `data` untouched.
pub fn fantasize(data: &Dataset, x: &[f64], y: f64) -> Result<Dataset> {
    data.append(x, y, true)
}

fn check_unit_cube(x: &DMatrix<f64>) -> Result<()> {
    if x.iter().any(|v| !(-BOUNDS_TOL..=1.0 + BOUNDS_TOL).contains(v) || !v.is_finite()) {
        return Err(Error::input("inputs must lie in the unit cube"));
    }
    Ok(())
}

/// GP hyperparameters: anisotropic lengthscales, signal and noise variances,
/// and a constant prior mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub mean_constant: f64,
}

impl Hyperparams {
    pub fn new(lengthscales: Vec<f64>, signal_variance: f64, noise_variance: f64, mean_constant: f64) -> Result<Self> {
        let hp = Self { lengthscales, signal_variance, noise_variance, mean_constant };
        hp.validate()?;
        Ok(hp)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(Error::config("at least one lengthscale is required"));
        }
        if self.lengthscales.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::config("lengthscales must be positive and finite"));
        }
        if !(self.signal_variance > 0.0) || !self.signal_variance.is_finite() {
            return Err(Error::config("signal variance must be positive"));
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(Error::config("noise variance must be non-negative"));
        }
        if !self.mean_constant.is_finite() {
            return Err(Error::config("mean constant must be finite"));
        }
        Ok(())
    }
}

/// Multivariate normal belief over a query set.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub chol: DMatrix<f64>,
    pub jitter_used: f64,
}

impl MvnMoments {
    /// Builds moments from a mean and covariance, factorizing with the jitter ladder.
    pub fn from_mean_cov(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let q = mean.len();
        if cov.shape() != (q, q) {
            return Err(Error::input("mean and covariance sizes differ"));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let scale = (cov.trace() / q.max(1) as f64).abs().max(f64::MIN_POSITIVE);
        let (chol, jitter_used) = stable_cholesky(&cov, 1e-4 * scale)?;
        Ok(Self { mean, cov, chol, jitter_used })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Derivatives of posterior moments with respect to the query inputs.
///
/// Column `i * d + j` of `dmean` and entry `i * d + j` of `dcov` hold the
/// derivative with respect to coordinate `j` of query row `i`.
#[derive(Debug, Clone)]
pub struct PosteriorJacobians {
    pub dmean: DMatrix<f64>,
    pub dcov: Vec<DMatrix<f64>>,
}

/// Posterior pieces reused by reverse-mode sensitivities.
#[derive(Debug, Clone)]
pub(crate) struct PosteriorParts {
    pub moments: MvnMoments,
    /// `L_train^-1 K(X_train, X)`, absent for an empty dataset.
    v: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
struct TrainCache {
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

/// A GP conditioned on a dataset, with the training factorization cached.
#[derive(Debug, Clone)]
pub struct GpModel {
    data: Dataset,
    hp: Hyperparams,
    train: Option<TrainCache>,
}

/// Marginal posterior at a single point and its input gradient.
#[derive(Debug, Clone)]
pub struct MarginalGradient {
    pub mean: f64,
    pub variance: f64,
    pub dmean: Vec<f64>,
    pub dvariance: Vec<f64>,
}

impl GpModel {
    pub fn new(data: Dataset, hp: Hyperparams) -> Result<Self> {
        hp.validate()?;
        if hp.dim() != data.dim() {
            return Err(Error::input(format!(
                "hyperparameters have {} lengthscales, data has dimension {}",
                hp.dim(),
                data.dim()
            )));
        }
        let train = if data.is_empty() { None } else { Some(Self::factorize(&data, &hp)?) };
        Ok(Self { data, hp, train })
    }

    fn factorize(data: &Dataset, hp: &Hyperparams) -> Result<TrainCache> {
        let n = data.len();
        let mut k = kernel::cross_covariance_unchecked(&data.inputs, &data.inputs, hp);
        for i in 0..n {
            if !data.fantasy[i] {
                k[(i, i)] += hp.noise_variance;
            }
        }
        let max_jitter = 1e-4 * k.trace() / n as f64;
        let (chol, jitter) = stable_cholesky(&k, max_jitter)?;
        let alpha = solve_chol(&chol, &data.outputs.add_scalar(-hp.mean_constant))?;
        Ok(TrainCache { chol, alpha, jitter })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// Jitter added to the training covariance diagonal.
    pub fn train_jitter(&self) -> f64 {
        self.train.as_ref().map_or(0.0, |t| t.jitter)
    }

    fn check_query(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::input("query set must contain at least one point"));
        }
        if x.ncols() != self.dim() {
            return Err(Error::input(format!("query has {} columns, model dimension is {}", x.ncols(), self.dim())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("query contains non-finite coordinates"));
        }
        Ok(())
    }

    /// Posterior mean and covariance of the latent function at `x` (rows are points).
    pub fn posterior(&self, x: &DMatrix<f64>) -> Result<MvnMoments> {
        Ok(self.posterior_parts(x)?.moments)
    }

    pub(crate) fn posterior_parts(&self, x: &DMatrix<f64>) -> Result<PosteriorParts> {
        self.check_query(x)?;
        let q = x.nrows();
        let kxx = kernel::cross_covariance_unchecked(x, x, &self.hp);
        let prior_scale = kxx.trace() / q as f64;
        let (mean, cov, v) = match &self.train {
            None => (DVector::from_element(q, self.hp.mean_constant), kxx, None),
            Some(t) => {
                let ks = kernel::cross_covariance_unchecked(x, &self.data.inputs, &self.hp);
                let mean = (&ks * &t.alpha).add_scalar(self.hp.mean_constant);
                let v = t
                    .chol
                    .solve_lower_triangular(&ks.transpose())
                    .ok_or_else(|| Error::numerical("singular training factor"))?;
                let cov = kxx - v.transpose() * &v;
                (mean, cov, Some(v))
            }
        };
        let cov = (&cov + cov.transpose()) * 0.5;
        let (chol, jitter_used) = stable_cholesky(&cov, 1e-4 * prior_scale)?;
        Ok(PosteriorParts { moments: MvnMoments { mean, cov, chol, jitter_used }, v })
    }

    /// Pulls sensitivities of a scalar with respect to the posterior mean and
    /// (symmetric) covariance back to the first `n_rows` query inputs.
    pub(crate) fn posterior_vjp(
        &self,
        x: &DMatrix<f64>,
        parts: &PosteriorParts,
        mean_bar: &DVector<f64>,
        cov_bar: &DMatrix<f64>,
        n_rows: usize,
    ) -> Result<DMatrix<f64>> {
        let (q, d) = x.shape();
        let cov_bar = (cov_bar + cov_bar.transpose()) * 0.5;
        let rows: Vec<Vec<f64>> = (0..q).map(|i| kernel::row(x, i)).collect();
        let mut out = DMatrix::zeros(n_rows, d);

        // Prior covariance terms: 2 * sum_b cov_bar[i, b] * d k(x_i, x_b) / d x_i.
        for i in 0..n_rows {
            let g = kernel::covariance_gradient(&rows[i], x, &self.hp);
            for b in 0..q {
                let w = 2.0 * cov_bar[(i, b)];
                if w != 0.0 {
                    for j in 0..d {
                        out[(i, j)] += w * g[(b, j)];
                    }
                }
            }
        }

        if let (Some(t), Some(v)) = (&self.train, &parts.v) {
            // u = K^-1 K(Xt, X) cov_bar, one column per query row.
            let u = t
                .chol
                .tr_solve_lower_triangular(&(v * cov_bar.columns(0, n_rows)))
                .ok_or_else(|| Error::numerical("singular training factor"))?;
            for i in 0..n_rows {
                let g = kernel::covariance_gradient(&rows[i], &self.data.inputs, &self.hp);
                let gm = g.transpose() * &t.alpha;
                let gu = g.transpose() * u.column(i);
                for j in 0..d {
                    out[(i, j)] += mean_bar[i] * gm[j] - 2.0 * gu[j];
                }
            }
        }
        Ok(out)
    }

    /// Full Jacobian tensors of the posterior moments with respect to `x`.
    pub fn input_jacobians(&self, x: &DMatrix<f64>) -> Result<PosteriorJacobians> {
        self.check_query(x)?;
        check_distinct(x)?;
        let parts = self.posterior_parts(x)?;
        let (q, d) = x.shape();
        let rows: Vec<Vec<f64>> = (0..q).map(|i| kernel::row(x, i)).collect();
        let mut dmean = DMatrix::zeros(q, q * d);
        let mut dcov = vec![DMatrix::zeros(q, q); q * d];
        for i in 0..q {
            let gq = kernel::covariance_gradient(&rows[i], x, &self.hp);
            // Projected training gradients: w_ij = L^-1 dk(Xt, x_i)/dx_ij.
            let train_terms = match (&self.train, &parts.v) {
                (Some(t), Some(v)) => {
                    let g = kernel::covariance_gradient(&rows[i], &self.data.inputs, &self.hp);
                    let w = t
                        .chol
                        .solve_lower_triangular(&g)
                        .ok_or_else(|| Error::numerical("singular training factor"))?;
                    Some((g.transpose() * &t.alpha, w.transpose() * v))
                }
                _ => None,
            };
            for j in 0..d {
                let c = i * d + j;
                let m = &mut dcov[c];
                for b in 0..q {
                    let mut val = gq[(b, j)];
                    if let Some((_, wv)) = &train_terms {
                        val -= wv[(j, b)];
                    }
                    m[(i, b)] += val;
                    m[(b, i)] += val;
                }
                if let Some((gm, _)) = &train_terms {
                    dmean[(i, c)] = gm[j];
                }
            }
        }
        Ok(PosteriorJacobians { dmean, dcov })
    }

    /// Posterior mean and variance at a single point.
    pub fn marginal(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.dim() {
            return Err(Error::input("point dimension mismatch"));
        }
        let s = self.hp.signal_variance;
        match &self.train {
            None => Ok((self.hp.mean_constant, s)),
            Some(t) => {
                let k = kernel::covariance_column(x, &self.data.inputs, &self.hp);
                let mean = self.hp.mean_constant + k.dot(&t.alpha);
                let v = t.chol.solve_lower_triangular(&k).ok_or_else(|| Error::numerical("singular training factor"))?;
                Ok((mean, (s - v.norm_squared()).max(0.0)))
            }
        }
    }

    /// Marginal posterior at a point together with its input gradient.
    pub fn marginal_with_gradient(&self, x: &[f64]) -> Result<MarginalGradient> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::input("point dimension mismatch"));
        }
        let s = self.hp.signal_variance;
        match &self.train {
            None => Ok(MarginalGradient {
                mean: self.hp.mean_constant,
                variance: s,
                dmean: vec![0.0; d],
                dvariance: vec![0.0; d],
            }),
            Some(t) => {
                let k = kernel::covariance_column(x, &self.data.inputs, &self.hp);
                let g = kernel::covariance_gradient(x, &self.data.inputs, &self.hp);
                let v = t.chol.solve_lower_triangular(&k).ok_or_else(|| Error::numerical("singular training factor"))?;
                let w = t.chol.tr_solve_lower_triangular(&v).ok_or_else(|| Error::numerical("singular training factor"))?;
                let dmean = g.transpose() * &t.alpha;
                let dvar = g.transpose() * w * -2.0;
                Ok(MarginalGradient {
                    mean: self.hp.mean_constant + k.dot(&t.alpha),
                    variance: (s - v.norm_squared()).max(0.0),
                    dmean: dmean.iter().copied().collect(),
                    dvariance: dvar.iter().copied().collect(),
                })
            }
        }
    }

    /// Conditions on a fantasized noiseless value, extending the cached
    /// factorization by one row when that is numerically safe.
    pub fn condition_on(&self, x: &[f64], y: f64) -> Result<GpModel> {
        let data = fantasize(&self.data, x, y)?;
        let Some(t) = &self.train else {
            return GpModel::new(data, self.hp.clone());
        };
        let n = self.data.len();
        let k = kernel::covariance_column(x, &self.data.inputs, &self.hp);
        let l = t.chol.solve_lower_triangular(&k).ok_or_else(|| Error::numerical("singular training factor"))?;
        let schur = self.hp.signal_variance + t.jitter - l.norm_squared();
        if !(schur > 1e-10 * self.hp.signal_variance) {
            return GpModel::new(data, self.hp.clone());
        }
        let mut chol = t.chol.clone().resize(n + 1, n + 1, 0.0);
        for j in 0..n {
            chol[(n, j)] = l[j];
        }
        chol[(n, n)] = schur.sqrt();
        let alpha = solve_chol(&chol, &data.outputs.add_scalar(-self.hp.mean_constant))?;
        Ok(GpModel { data, hp: self.hp.clone(), train: Some(TrainCache { chol, alpha, jitter: t.jitter }) })
    }

    /// Training factor and `K^-1 (y - c)`, absent for an empty dataset.
    pub(crate) fn train_factor(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        self.train.as_ref().map(|t| (&t.chol, &t.alpha))
    }
}

pub(crate) fn solve_chol(chol: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let y = chol.solve_lower_triangular(b).ok_or_else(|| Error::numerical("singular factor"))?;
    chol.tr_solve_lower_triangular(&y).ok_or_else(|| Error::numerical("singular factor"))
}

/// Fails if two query rows coincide within [`DUPLICATE_TOL`].
pub fn check_distinct(x: &DMatrix<f64>) -> Result<()> {
    for a in 0..x.nrows() {
        for b in (a + 1)..x.nrows() {
            let gap = x.row(a).iter().zip(x.row(b).iter()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            if gap <= DUPLICATE_TOL {
                return Err(Error::DegenerateQuery(a, b));
            }
        }
    }
    Ok(())
}

/// Posterior moments at `x` given `data`.
pub fn posterior_moments(x: &DMatrix<f64>, data: &Dataset, hp: &Hyperparams) -> Result<MvnMoments> {
    GpModel::new(data.clone(), hp.clone())?.posterior(x)
}

/// Jacobians of the posterior moments with respect to the query inputs.
pub fn posterior_input_jacobians(x: &DMatrix<f64>, data: &Dataset, hp: &Hyperparams) -> Result<PosteriorJacobians> {
    GpModel::new(data.clone(), hp.clone())?.input_jacobians(x)
}
