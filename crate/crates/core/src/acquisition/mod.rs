//! Monte Carlo acquisition functions built on reparameterized sample paths.
//!
//! The myopic-maximal family (EI, PI, SR, UCB) evaluates a pointwise utility
//! on each sampled outcome and takes the max over the query set. ES and KG
//! additionally condition on a discretization `X_b` of the domain.

mod analytic;
mod mc;
mod submodular;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reparam::{SampleMode, SamplePaths};

pub use analytic::{
    ei_from_moments, incremental_ei_value, marginal_ei_closed_form, marginal_ei_with_gradient, normal_cdf, normal_pdf,
    FantasyStates,
};
pub use mc::{
    es_concrete_value, es_hard_value, kg_value, mc_estimate, mc_estimate_with_floor, mc_gradient, mc_value,
    mc_value_and_gradient, pi_hard_value, McEstimate, ES_INNER_TAG,
};
pub use submodular::{discrete_derivative_mc, normalization_offset, NormalizationOffset};

/// Acquisition families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcqKind {
    Ei,
    Pi,
    Sr,
    Ucb,
    Es,
    Kg,
}

impl AcqKind {
    /// Members of the myopic-maximal family, whose set functions are submodular.
    pub fn is_myopic_maximal(self) -> bool {
        matches!(self, AcqKind::Ei | AcqKind::Pi | AcqKind::Sr | AcqKind::Ucb)
    }

    pub fn needs_discretization(self) -> bool {
        matches!(self, AcqKind::Es | AcqKind::Kg)
    }

    pub fn name(self) -> &'static str {
        match self {
            AcqKind::Ei => "ei",
            AcqKind::Pi => "pi",
            AcqKind::Sr => "sr",
            AcqKind::Ucb => "ucb",
            AcqKind::Es => "es",
            AcqKind::Kg => "kg",
        }
    }
}

impl fmt::Display for AcqKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AcqKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ei" => Ok(AcqKind::Ei),
            "pi" => Ok(AcqKind::Pi),
            "sr" => Ok(AcqKind::Sr),
            "ucb" => Ok(AcqKind::Ucb),
            "es" => Ok(AcqKind::Es),
            "kg" => Ok(AcqKind::Kg),
            other => Err(Error::config(format!("unknown acquisition '{other}'"))),
        }
    }
}

/// Acquisition kind and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionSpec {
    pub kind: AcqKind,
    /// Improvement threshold for EI and PI.
    pub alpha: f64,
    /// Confidence parameter for UCB.
    pub beta: f64,
    /// Temperature of the PI sigmoid and ES softmax relaxations.
    pub tau: f64,
    /// Discretization `X_b` (rows are points) for ES and KG.
    pub discretization: Option<DMatrix<f64>>,
    pub mc_samples: usize,
    pub base_mode: SampleMode,
    /// Inner draws `z_b` used by ES.
    pub inner_mc_samples: usize,
}

impl AcquisitionSpec {
    fn base(kind: AcqKind) -> Self {
        Self {
            kind,
            alpha: 0.0,
            beta: 2.0,
            tau: 0.05,
            discretization: None,
            mc_samples: 128,
            base_mode: SampleMode::Deterministic,
            inner_mc_samples: 64,
        }
    }

    pub fn ei(alpha: f64) -> Self {
        Self { alpha, ..Self::base(AcqKind::Ei) }
    }

    pub fn pi(alpha: f64, tau: f64) -> Self {
        Self { alpha, tau, ..Self::base(AcqKind::Pi) }
    }

    pub fn sr() -> Self {
        Self::base(AcqKind::Sr)
    }

    pub fn ucb(beta: f64) -> Self {
        Self { beta, ..Self::base(AcqKind::Ucb) }
    }

    pub fn es(discretization: DMatrix<f64>, tau: f64) -> Self {
        Self { tau, discretization: Some(discretization), ..Self::base(AcqKind::Es) }
    }

    pub fn kg(discretization: DMatrix<f64>) -> Self {
        Self { discretization: Some(discretization), ..Self::base(AcqKind::Kg) }
    }

    pub fn with_mc_samples(mut self, m: usize) -> Self {
        self.mc_samples = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config("tau must be positive"));
        }
        if self.mc_samples == 0 || self.inner_mc_samples == 0 {
            return Err(Error::config("sample counts must be at least 1"));
        }
        if !(self.beta >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::config("beta must be non-negative and alpha finite"));
        }
        if self.kind.needs_discretization() && self.discretization.as_ref().map_or(true, |x| x.nrows() == 0) {
            return Err(Error::config(format!("{} needs a non-empty discretization", self.kind)));
        }
        Ok(())
    }

    /// `sqrt(beta * pi / 2)`, the factor turning `E|gamma|` into `sqrt(beta) sigma`.
    pub fn ucb_scale(&self) -> f64 {
        (self.beta * std::f64::consts::FRAC_PI_2).sqrt()
    }

    pub(crate) fn discretization(&self) -> Result<&DMatrix<f64>> {
        self.discretization
            .as_ref()
            .filter(|x| x.nrows() > 0)
            .ok_or_else(|| Error::config(format!("{} needs a non-empty discretization", self.kind)))
    }
}

/// Per-sample utilities and their sensitivities.
#[derive(Debug, Clone)]
pub struct UtilityBatch {
    pub values: DVector<f64>,
    /// `d value_k / d y_k`.
    pub grad_y: DMatrix<f64>,
    /// Direct dependence on the mean beyond the path through `y` (UCB only).
    pub grad_mu: Option<DMatrix<f64>>,
}

/// Pointwise utility of one outcome, with derivatives in `y` and (directly) in `mu`.
#[inline]
pub(crate) fn pointwise(spec: &AcquisitionSpec, y: f64, mu: f64) -> (f64, f64, f64) {
    match spec.kind {
        AcqKind::Ei => {
            let t = y - spec.alpha;
            if t > 0.0 {
                (t, 1.0, 0.0)
            } else {
                (0.0, 0.0, 0.0)
            }
        }
        AcqKind::Pi => {
            let s = sigmoid((y - spec.alpha) / spec.tau);
            (s, s * (1.0 - s) / spec.tau, 0.0)
        }
        AcqKind::Sr | AcqKind::Es | AcqKind::Kg => (y, 1.0, 0.0),
        AcqKind::Ucb => {
            let c = spec.ucb_scale();
            let g = y - mu;
            let sign = if g > 0.0 {
                1.0
            } else if g < 0.0 {
                -1.0
            } else {
                0.0
            };
            (mu + c * g.abs(), c * sign, 1.0 - c * sign)
        }
    }
}

/// Pointwise utility value only.
pub fn pointwise_utility(spec: &AcquisitionSpec, y: f64, mu: f64) -> f64 {
    pointwise(spec, y, mu).0
}

#[inline]
pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Applies the utility row-wise: `max_i l(y_ki)`, subgradient one-hot at the
/// first maximizer.
pub fn utility(spec: &AcquisitionSpec, y: &SamplePaths, mu: &DVector<f64>) -> Result<UtilityBatch> {
    utility_with_floor(spec, y, mu, f64::NEG_INFINITY)
}

/// Row-wise `max(floor, max_i l(y_ki))`; the floor stands in for outcomes that
/// are already known (e.g. pending points fantasized without noise) or for the
/// normalization offset. Samples where the floor wins have zero gradient.
pub fn utility_with_floor(spec: &AcquisitionSpec, y: &SamplePaths, mu: &DVector<f64>, floor: f64) -> Result<UtilityBatch> {
    if !spec.kind.is_myopic_maximal() {
        return Err(Error::config(format!("{} is not a pointwise utility; use its dedicated estimator", spec.kind)));
    }
    let (m, q) = y.y.shape();
    if q != mu.len() || q == 0 {
        return Err(Error::input(format!("paths have {q} columns, mean has {}", mu.len())));
    }
    let mut values = DVector::zeros(m);
    let mut grad_y = DMatrix::zeros(m, q);
    let mut grad_mu = (spec.kind == AcqKind::Ucb).then(|| DMatrix::zeros(m, q));
    for k in 0..m {
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0);
        for i in 0..q {
            let (v, dy, dmu) = pointwise(spec, y.y[(k, i)], mu[i]);
            if v > best.0 {
                best = (v, dy, dmu, i);
            }
        }
        if floor >= best.0 {
            values[k] = floor;
            continue;
        }
        values[k] = best.0;
        grad_y[(k, best.3)] = best.1;
        if let Some(g) = grad_mu.as_mut() {
            g[(k, best.3)] = best.2;
        }
    }
    Ok(UtilityBatch { values, grad_y, grad_mu })
}

#[cfg(test)]
mod tests;
