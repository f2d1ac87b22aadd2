//! MAP estimation of GP hyperparameters by projected Adam ascent in log space.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{kernel, Dataset, Hyperparams};
use crate::error::{Error, Result};
use crate::reparam::stable_cholesky;

/// Gaussian prior on the logarithm of a positive parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormalPrior {
    pub log_mean: f64,
    pub log_sd: f64,
}

impl LogNormalPrior {
    pub const fn new(log_mean: f64, log_sd: f64) -> Self {
        Self { log_mean, log_sd }
    }

    fn log_density(&self, t: f64) -> f64 {
        let z = (t - self.log_mean) / self.log_sd;
        -0.5 * z * z
    }

    fn grad(&self, t: f64) -> f64 {
        -(t - self.log_mean) / (self.log_sd * self.log_sd)
    }
}

/// Priors on the (standardized-scale) hyperparameters. `None` means flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub lengthscale: Option<LogNormalPrior>,
    pub signal_variance: Option<LogNormalPrior>,
    pub noise_variance: Option<LogNormalPrior>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            lengthscale: Some(LogNormalPrior::new(0.0, 1.0)),
            signal_variance: Some(LogNormalPrior::new(0.0, 1.0)),
            noise_variance: Some(LogNormalPrior::new(-6.0, 1.0)),
        }
    }
}

impl PriorConfig {
    /// Maximum-likelihood fitting: no priors at all.
    pub fn flat() -> Self {
        Self { lengthscale: None, signal_variance: None, noise_variance: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub restarts: usize,
    pub iterations: usize,
    pub step_size: f64,
    /// Lower bound on the standardized noise variance.
    pub noise_floor: f64,
    pub lengthscale_bounds: (f64, f64),
    pub signal_bounds: (f64, f64),
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            iterations: 300,
            step_size: 0.1,
            noise_floor: 1e-6,
            lengthscale_bounds: (1e-2, 20.0),
            signal_bounds: (1e-3, 1e2),
            seed: 0,
        }
    }
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    y: DVector<f64>,
    noisy: Vec<bool>,
    prior: &'a PriorConfig,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn unpack(&self, theta: &[f64]) -> Hyperparams {
        let d = self.dim();
        Hyperparams {
            lengthscales: theta[..d].iter().map(|t| t.exp()).collect(),
            signal_variance: theta[d].exp(),
            noise_variance: theta[d + 1].exp(),
            mean_constant: theta[d + 2],
        }
    }

    /// Log marginal likelihood plus log prior, and its gradient in `theta`.
    fn objective(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let d = self.dim();
        let n = self.y.len();
        let hp = self.unpack(theta);
        let kf = kernel::cross_covariance_unchecked(self.x, self.x, &hp);
        let mut k = kf.clone();
        for i in 0..n {
            if self.noisy[i] {
                k[(i, i)] += hp.noise_variance;
            }
        }
        let (l, _) = stable_cholesky(&k, 1e-6 * k.trace() / n as f64).ok()?;
        let resid = self.y.add_scalar(-hp.mean_constant);
        let alpha = super::solve_chol(&l, &resid).ok()?;
        let log_det: f64 = l.diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let mut value = -0.5 * resid.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (std::f64::consts::TAU).ln();

        let k_inv = {
            let li = l.solve_lower_triangular(&DMatrix::identity(n, n))?;
            li.transpose() * li
        };
        let w = &alpha * alpha.transpose() - k_inv;

        let mut grad = vec![0.0; d + 3];
        for i in 0..n {
            for j in (i + 1)..n {
                let a = kernel::row(self.x, i);
                let b = kernel::row(self.x, j);
                let r = kernel::scaled_distance(&a, &b, &hp.lengthscales);
                let f = kernel::matern52_radial_factor(r, hp.signal_variance);
                for p in 0..d {
                    let delta = (a[p] - b[p]) / hp.lengthscales[p];
                    // Symmetric pair counted twice, halved by the 0.5 prefactor.
                    grad[p] += w[(i, j)] * f * delta * delta;
                }
            }
        }
        grad[d] = 0.5 * w.component_mul(&kf).sum();
        grad[d + 1] = 0.5 * (0..n).filter(|&i| self.noisy[i]).map(|i| w[(i, i)]).sum::<f64>() * hp.noise_variance;
        grad[d + 2] = alpha.sum();

        let priors = [(self.prior.lengthscale, 0..d), (self.prior.signal_variance, d..d + 1), (self.prior.noise_variance, d + 1..d + 2)];
        for (prior, range) in priors {
            if let Some(p) = prior {
                for idx in range {
                    value += p.log_density(theta[idx]);
                    grad[idx] += p.grad(theta[idx]);
                }
            }
        }
        value.is_finite().then_some((value, grad))
    }

    fn project(&self, theta: &mut [f64]) {
        for (t, (lo, hi)) in theta.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *t = t.clamp(*lo, *hi);
        }
    }
}

/// MAP hyperparameters with default optimizer options and `restarts` restarts.
pub fn fit_hyperparameters_map(data: &Dataset, prior: &PriorConfig, restarts: usize) -> Result<Hyperparams> {
    let opts = FitOptions { restarts, ..FitOptions::default() };
    fit_hyperparameters_map_with(data, prior, &opts)
}

/// MAP hyperparameters; outputs are standardized internally and the result is
/// mapped back to the original output scale.
pub fn fit_hyperparameters_map_with(data: &Dataset, prior: &PriorConfig, opts: &FitOptions) -> Result<Hyperparams> {
    let n = data.len();
    if n < 2 {
        return Err(Error::Fit(format!("need at least 2 observations, got {n}")));
    }
    if opts.restarts == 0 || opts.iterations == 0 || !(opts.step_size > 0.0) || !(opts.noise_floor > 0.0) {
        return Err(Error::config("fit options need restarts, iterations, step size and noise floor > 0"));
    }
    let d = data.dim();
    let y = data.outputs();
    let y_mean = y.mean();
    let mut y_sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if !(y_sd > 1e-12) {
        y_sd = 1.0;
    }
    let (ls_lo, ls_hi) = opts.lengthscale_bounds;
    let (s_lo, s_hi) = opts.signal_bounds;
    let mut lower = vec![ls_lo.ln(); d];
    let mut upper = vec![ls_hi.ln(); d];
    lower.extend([s_lo.ln(), opts.noise_floor.ln(), -5.0]);
    upper.extend([s_hi.ln(), 0.0, 5.0]);
    let problem = Problem {
        x: data.inputs(),
        y: y.map(|v| (v - y_mean) / y_sd),
        noisy: (0..n).map(|i| !data.is_fantasy(i)).collect(),
        prior,
        lower,
        upper,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut failures = Vec::new();
    for restart in 0..opts.restarts {
        let mut theta = initial_point(&problem, restart, &mut rng);
        problem.project(&mut theta);
        let (mut m1, mut m2) = (vec![0.0; d + 3], vec![0.0; d + 3]);
        let mut evaluated = false;
        for it in 1..=opts.iterations {
            let Some((value, grad)) = problem.objective(&theta) else {
                break;
            };
            evaluated = true;
            if best.as_ref().map_or(true, |(b, _)| value > *b) {
                best = Some((value, theta.clone()));
            }
            let (b1, b2) = (0.9f64, 0.999f64);
            for p in 0..theta.len() {
                m1[p] = b1 * m1[p] + (1.0 - b1) * grad[p];
                m2[p] = b2 * m2[p] + (1.0 - b2) * grad[p] * grad[p];
                let mh = m1[p] / (1.0 - b1.powi(it as i32));
                let vh = m2[p] / (1.0 - b2.powi(it as i32));
                theta[p] += opts.step_size * mh / (vh.sqrt() + 1e-8);
            }
            problem.project(&mut theta);
        }
        if let Some((value, _)) = problem.objective(&theta) {
            if best.as_ref().map_or(true, |(b, _)| value > *b) {
                best = Some((value, theta.clone()));
            }
        } else if !evaluated {
            failures.push(restart);
        }
    }
    let Some((_, theta)) = best else {
        return Err(Error::Fit(format!("all {} restarts failed to factorize the covariance", opts.restarts)));
    };
    let hp = problem.unpack(&theta);
    Hyperparams::new(
        hp.lengthscales,
        hp.signal_variance * y_sd * y_sd,
        hp.noise_variance * y_sd * y_sd,
        hp.mean_constant * y_sd + y_mean,
    )
}

fn initial_point(problem: &Problem<'_>, restart: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = problem.dim();
    let centre = |p: Option<LogNormalPrior>, fallback: f64| p.map_or(fallback, |p| p.log_mean);
    if restart == 0 {
        let mut t = vec![centre(problem.prior.lengthscale, -1.0); d];
        t.push(centre(problem.prior.signal_variance, 0.0));
        t.push(centre(problem.prior.noise_variance, -6.0));
        t.push(0.0);
        return t;
    }
    let mut draw = |p: Option<LogNormalPrior>, lo: f64, hi: f64| match p {
        Some(p) => Normal::new(p.log_mean, p.log_sd).expect("positive sd").sample(rng),
        None => rng.gen_range(lo..=hi),
    };
    let mut t: Vec<f64> = (0..d).map(|i| draw(problem.prior.lengthscale, problem.lower[i], problem.upper[i])).collect();
    t.push(draw(problem.prior.signal_variance, problem.lower[d], problem.upper[d]));
    t.push(draw(problem.prior.noise_variance, problem.lower[d + 1], problem.upper[d + 1]));
    t.push(0.0);
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream;

    fn sample_prior_data(hp: &Hyperparams, n: usize, seed: u64) -> Dataset {
        let d = hp.dim();
        let x = DMatrix::from_fn(n, d, |i, j| stream::uniform(seed, stream::cell(i, j), 0));
        let mut k = kernel::cross_covariance_unchecked(&x, &x, hp);
        for i in 0..n {
            k[(i, i)] += hp.noise_variance;
        }
        let (l, _) = stable_cholesky(&k, 1e-6).unwrap();
        let z = DVector::from_fn(n, |i, _| stream::normal(seed ^ 0xABCD, i as u64));
        let y = (l * z).add_scalar(hp.mean_constant);
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn recovers_lengthscales_from_prior_draw() {
        let truth = Hyperparams::new(vec![0.25, 0.6], 1.0, 1e-3, 0.0).unwrap();
        let data = sample_prior_data(&truth, 128, 17);
        let fit = fit_hyperparameters_map(&data, &PriorConfig::default(), 8).unwrap();
        for (got, want) in fit.lengthscales.iter().zip(&truth.lengthscales) {
            assert!((got.ln() - want.ln()).abs() < 0.5, "fitted {got}, truth {want}");
        }
    }

    #[test]
    fn flat_data_drives_noise_to_floor() {
        let x = DMatrix::from_row_slice(2, 1, &[0.2, 0.7]);
        let data = Dataset::new(x, DVector::from_vec(vec![1.5, 1.5])).unwrap();
        let opts = FitOptions { restarts: 2, ..FitOptions::default() };
        let fit = fit_hyperparameters_map_with(&data, &PriorConfig::flat(), &opts).unwrap();
        assert!((fit.noise_variance / opts.noise_floor - 1.0).abs() < 1e-6, "noise {}", fit.noise_variance);
    }

    #[test]
    fn fit_is_deterministic() {
        let truth = Hyperparams::new(vec![0.3], 2.0, 1e-2, 1.0).unwrap();
        let data = sample_prior_data(&truth, 20, 3);
        let a = fit_hyperparameters_map(&data, &PriorConfig::default(), 3).unwrap();
        let b = fit_hyperparameters_map(&data, &PriorConfig::default(), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_little_data_is_a_fit_error() {
        let data = Dataset::new(DMatrix::from_row_slice(1, 1, &[0.5]), DVector::from_vec(vec![0.0])).unwrap();
        assert!(matches!(fit_hyperparameters_map(&data, &PriorConfig::default(), 1), Err(Error::Fit(_))));
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let truth = Hyperparams::new(vec![0.3, 0.5], 1.0, 1e-2, 0.0).unwrap();
        let data = sample_prior_data(&truth, 15, 9);
        let prior = PriorConfig::default();
        let problem = Problem {
            x: data.inputs(),
            y: data.outputs().clone(),
            noisy: vec![true; 15],
            prior: &prior,
            lower: vec![],
            upper: vec![],
        };
        let theta = vec![-1.1, -0.4, 0.2, -3.0, 0.1];
        let (_, grad) = problem.objective(&theta).unwrap();
        for p in 0..theta.len() {
            let h = 1e-5;
            let mut tp = theta.clone();
            tp[p] += h;
            let mut tm = theta.clone();
            tm[p] -= h;
            let fd = (problem.objective(&tp).unwrap().0 - problem.objective(&tm).unwrap().0) / (2.0 * h);
            assert!((fd - grad[p]).abs() <= 1e-5 * (1.0 + fd.abs()), "param {p}: fd {fd}, analytic {}", grad[p]);
        }
    }
}
