//! Anisotropic Matérn-5/2 covariance and its derivatives.

use nalgebra::{DMatrix, DVector, RowDVector};

use super::Hyperparams;
use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

/// `k(r) = s (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r)` for scaled distance `r`.
#[inline]
pub fn matern52(r: f64, signal_variance: f64) -> f64 {
    let sr = SQRT5 * r;
    signal_variance * (1.0 + sr + sr * sr / 3.0) * (-sr).exp()
}

/// `-(1/r) dk/dr = s (5/3)(1 + sqrt5 r) exp(-sqrt5 r)`, finite at `r = 0`.
#[inline]
pub(crate) fn matern52_radial_factor(r: f64, signal_variance: f64) -> f64 {
    let sr = SQRT5 * r;
    signal_variance * (5.0 / 3.0) * (1.0 + sr) * (-sr).exp()
}

#[inline]
pub(crate) fn scaled_distance(a: &[f64], b: &[f64], lengthscales: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(lengthscales)
        .map(|((x, y), l)| {
            let t = (x - y) / l;
            t * t
        })
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn check(x1: &DMatrix<f64>, x2: &DMatrix<f64>, hp: &Hyperparams) -> Result<()> {
    let d = hp.lengthscales.len();
    if x1.ncols() != d || x2.ncols() != d {
        return Err(Error::input(format!(
            "dimension mismatch: inputs have {} and {} columns, kernel expects {d}",
            x1.ncols(),
            x2.ncols()
        )));
    }
    hp.validate()
}

/// Covariance matrix `K(X1, X2)`.
pub fn matern52_cross_covariance(x1: &DMatrix<f64>, x2: &DMatrix<f64>, hp: &Hyperparams) -> Result<DMatrix<f64>> {
    check(x1, x2, hp)?;
    Ok(cross_covariance_unchecked(x1, x2, hp))
}

pub(crate) fn cross_covariance_unchecked(x1: &DMatrix<f64>, x2: &DMatrix<f64>, hp: &Hyperparams) -> DMatrix<f64> {
    let ls = hp.lengthscales.as_slice();
    let r1: Vec<Vec<f64>> = (0..x1.nrows()).map(|i| row(x1, i)).collect();
    let r2: Vec<Vec<f64>> = (0..x2.nrows()).map(|i| row(x2, i)).collect();
    DMatrix::from_fn(x1.nrows(), x2.nrows(), |i, j| matern52(scaled_distance(&r1[i], &r2[j], ls), hp.signal_variance))
}

/// Column of covariances between one point and a set of points.
pub(crate) fn covariance_column(x: &[f64], others: &DMatrix<f64>, hp: &Hyperparams) -> DVector<f64> {
    let ls = hp.lengthscales.as_slice();
    DVector::from_fn(others.nrows(), |t, _| {
        let o: Vec<f64> = others.row(t).iter().copied().collect();
        matern52(scaled_distance(x, &o, ls), hp.signal_variance)
    })
}

/// Gradient of `k(x, others_t)` with respect to `x`: row `t` holds `d k / d x`.
pub(crate) fn covariance_gradient(x: &[f64], others: &DMatrix<f64>, hp: &Hyperparams) -> DMatrix<f64> {
    let ls = hp.lengthscales.as_slice();
    let d = x.len();
    let mut g = DMatrix::zeros(others.nrows(), d);
    for t in 0..others.nrows() {
        let o: RowDVector<f64> = others.row(t).into_owned();
        let r = scaled_distance(x, o.as_slice(), ls);
        let f = matern52_radial_factor(r, hp.signal_variance);
        for j in 0..d {
            g[(t, j)] = -f * (x[j] - o[j]) / (ls[j] * ls[j]);
        }
    }
    g
}
