use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp::{kernel, Dataset, GpModel, Hyperparams};

pub fn normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u / std::f64::consts::SQRT_2)
}

/// Expected improvement over `alpha` of a `N(mu, sigma^2)` outcome.
pub fn ei_from_moments(mu: f64, sigma: f64, alpha: f64) -> f64 {
    if !(sigma > 0.0) {
        return (mu - alpha).max(0.0);
    }
    let u = (mu - alpha) / sigma;
    ((mu - alpha) * normal_cdf(u) + sigma * normal_pdf(u)).max(0.0)
}

/// `(EI, dEI/dmu, dEI/dsigma)`.
fn ei_partials(mu: f64, sigma: f64, alpha: f64) -> (f64, f64, f64) {
    if !(sigma > 0.0) {
        return if mu > alpha { (mu - alpha, 1.0, 0.0) } else { (0.0, 0.0, 0.0) };
    }
    let u = (mu - alpha) / sigma;
    let cdf = normal_cdf(u);
    let pdf = normal_pdf(u);
    (((mu - alpha) * cdf + sigma * pdf).max(0.0), cdf, pdf)
}

/// Closed-form expected improvement of the model's marginal belief at `x`.
pub fn marginal_ei_closed_form(x: &[f64], model: &GpModel, alpha: f64) -> Result<f64> {
    let (mu, var) = model.marginal(x)?;
    Ok(ei_from_moments(mu, var.sqrt(), alpha))
}

/// Closed-form marginal EI and its gradient in `x`.
pub fn marginal_ei_with_gradient(x: &[f64], model: &GpModel, alpha: f64) -> Result<(f64, Vec<f64>)> {
    let mg = model.marginal_with_gradient(x)?;
    let sigma = mg.variance.sqrt();
    let (v, d_mu, d_sigma) = ei_partials(mg.mean, sigma, alpha);
    let grad = (0..x.len())
        .map(|j| {
            let ds = if sigma > 0.0 { mg.dvariance[j] / (2.0 * sigma) } else { 0.0 };
            d_mu * mg.dmean[j] + d_sigma * ds
        })
        .collect();
    Ok((v, grad))
}

/// Average closed-form EI over fantasy states, each at its own incumbent
/// `max(alpha0, fantasized outcomes)`. Reference implementation; see
/// [`FantasyStates`] for the cached version.
pub fn incremental_ei_value(x: &[f64], states: &[Dataset], hp: &Hyperparams, alpha0: f64) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::config("incremental EI needs at least one fantasy state"));
    }
    let mut total = 0.0;
    for data in states {
        let threshold = data.max_fantasy().map_or(alpha0, |y| y.max(alpha0));
        let model = GpModel::new(data.clone(), hp.clone())?;
        total += marginal_ei_closed_form(x, &model, threshold)?;
    }
    Ok(total / states.len() as f64)
}

/// A population of fantasy states that share their inputs (the real data plus
/// the points selected so far) and differ only in fantasized outcomes, so one
/// Cholesky factor serves all of them.
#[derive(Debug, Clone)]
pub struct FantasyStates {
    model: GpModel,
    /// Rows of the model's data shared by all states.
    n_shared: usize,
    /// `K^-1 (y_s - c)`, one column per state.
    alphas: DMatrix<f64>,
    /// Fantasized outcomes, one row per state.
    outcomes: DMatrix<f64>,
    thresholds: DVector<f64>,
}

impl FantasyStates {
    /// `n_states` identical states over the real data, incumbent `alpha0`.
    pub fn new(model: &GpModel, n_states: usize, alpha0: f64) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::config("need at least one fantasy state"));
        }
        let n = model.data().len();
        let alpha = model.train_factor().map(|(_, a)| a.clone()).unwrap_or_else(|| DVector::zeros(0));
        let alphas = DMatrix::from_fn(n, n_states, |i, _| alpha[i]);
        Ok(Self {
            model: model.clone(),
            n_shared: n,
            alphas,
            outcomes: DMatrix::zeros(n_states, 0),
            thresholds: DVector::from_element(n_states, alpha0),
        })
    }

    pub fn n_states(&self) -> usize {
        self.thresholds.len()
    }

    pub fn n_fantasized(&self) -> usize {
        self.outcomes.ncols()
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    pub fn thresholds(&self) -> &DVector<f64> {
        &self.thresholds
    }

    /// Per-state posterior means and the shared variance at `x`.
    pub fn marginal(&self, x: &[f64]) -> Result<(DVector<f64>, f64)> {
        let hp = self.model.hyperparams();
        if x.len() != hp.dim() {
            return Err(Error::input("point dimension mismatch"));
        }
        match self.model.train_factor() {
            None => Ok((DVector::from_element(self.n_states(), hp.mean_constant), hp.signal_variance)),
            Some((chol, _)) => {
                let k = kernel::covariance_column(x, self.model.data().inputs(), hp);
                let means = (self.alphas.transpose() * &k).add_scalar(hp.mean_constant);
                let v = chol.solve_lower_triangular(&k).ok_or_else(|| Error::numerical("singular factor"))?;
                Ok((means, (hp.signal_variance - v.norm_squared()).max(0.0)))
            }
        }
    }

    /// Per-state closed-form EI at `x`.
    pub fn state_values(&self, x: &[f64]) -> Result<DVector<f64>> {
        let (means, var) = self.marginal(x)?;
        let sigma = var.sqrt();
        Ok(DVector::from_fn(self.n_states(), |s, _| ei_from_moments(means[s], sigma, self.thresholds[s])))
    }

    /// Average EI over states.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.state_values(x)?.mean())
    }

    /// Average EI over states and its gradient in `x`.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let hp = self.model.hyperparams();
        let d = hp.dim();
        if x.len() != d {
            return Err(Error::input("point dimension mismatch"));
        }
        let s_count = self.n_states() as f64;
        let Some((chol, _)) = self.model.train_factor() else {
            let sigma = hp.signal_variance.sqrt();
            let v = (0..self.n_states()).map(|s| ei_from_moments(hp.mean_constant, sigma, self.thresholds[s])).sum::<f64>();
            return Ok((v / s_count, vec![0.0; d]));
        };
        let inputs = self.model.data().inputs();
        let k = kernel::covariance_column(x, inputs, hp);
        let g = kernel::covariance_gradient(x, inputs, hp);
        let means = (self.alphas.transpose() * &k).add_scalar(hp.mean_constant);
        let v = chol.solve_lower_triangular(&k).ok_or_else(|| Error::numerical("singular factor"))?;
        let w = chol.tr_solve_lower_triangular(&v).ok_or_else(|| Error::numerical("singular factor"))?;
        let var = (hp.signal_variance - v.norm_squared()).max(0.0);
        let sigma = var.sqrt();
        let mut total = 0.0;
        // Weighted sum of state alphas: sum_s dEI_s/dmu_s * alpha_s.
        let mut weights = DVector::zeros(self.n_states());
        let mut d_sigma_total = 0.0;
        for s in 0..self.n_states() {
            let (val, dm, ds) = ei_partials(means[s], sigma, self.thresholds[s]);
            total += val;
            weights[s] = dm;
            d_sigma_total += ds;
        }
        let alpha_mix = &self.alphas * weights;
        let dmean = g.transpose() * alpha_mix;
        let dvar = g.transpose() * w * -2.0;
        let grad = (0..d)
            .map(|j| {
                let ds = if sigma > 0.0 { dvar[j] / (2.0 * sigma) } else { 0.0 };
                (dmean[j] + d_sigma_total * ds) / s_count
            })
            .collect();
        Ok((total / s_count, grad))
    }

    /// Extends every state with the outcome `mu_s(x) + sigma(x) z_s`.
    pub fn extend(&self, x: &[f64], z: &DVector<f64>) -> Result<Self> {
        if z.len() != self.n_states() {
            return Err(Error::input("need one variate per state"));
        }
        let (means, var) = self.marginal(x)?;
        let outcomes = means + z * var.sqrt();
        self.extend_with_outcomes(x, &outcomes)
    }

    /// Extends every state with an explicit fantasized outcome.
    pub fn extend_with_outcomes(&self, x: &[f64], outcomes: &DVector<f64>) -> Result<Self> {
        let s_count = self.n_states();
        if outcomes.len() != s_count {
            return Err(Error::input("need one outcome per state"));
        }
        let model = self.model.condition_on(x, outcomes[0])?;
        let hp = model.hyperparams();
        let data = model.data();
        let n = data.len();
        let c = hp.mean_constant;
        let mut all = self.outcomes.clone().insert_column(self.n_fantasized(), 0.0);
        all.set_column(self.n_fantasized(), outcomes);
        let resid = DMatrix::from_fn(n, s_count, |i, s| {
            if i < self.n_shared {
                data.outputs()[i] - c
            } else {
                all[(s, i - self.n_shared)] - c
            }
        });
        let (chol, _) = model.train_factor().expect("conditioned model has data");
        let alphas = {
            let y = chol.solve_lower_triangular(&resid).ok_or_else(|| Error::numerical("singular factor"))?;
            chol.tr_solve_lower_triangular(&y).ok_or_else(|| Error::numerical("singular factor"))?
        };
        let thresholds = DVector::from_fn(s_count, |s, _| self.thresholds[s].max(outcomes[s]));
        Ok(Self { model, n_shared: self.n_shared, alphas, outcomes: all, thresholds })
    }

    /// Dataset of state `s`, for cross-checking against the reference path.
    pub fn state_dataset(&self, s: usize) -> Result<Dataset> {
        let data = self.model.data();
        let mut out = Dataset::empty(data.dim());
        for i in 0..data.len() {
            let x: Vec<f64> = data.inputs().row(i).iter().copied().collect();
            out = if i >= self.n_shared {
                crate::gp::fantasize(&out, &x, self.outcomes[(s, i - self.n_shared)])?
            } else if data.is_fantasy(i) {
                crate::gp::fantasize(&out, &x, data.outputs()[i])?
            } else {
                out.with_observation(&x, data.outputs()[i])?
            };
        }
        Ok(out)
    }
}
