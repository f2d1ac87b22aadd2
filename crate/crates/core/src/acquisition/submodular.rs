use nalgebra::DMatrix;

use super::{pointwise_utility, AcqKind, AcquisitionSpec};
use crate::error::{Error, Result};
use crate::gp::{GpModel, DUPLICATE_TOL};
use crate::reparam::BaseSamples;

/// Lower bound on the pointwise utility; plays the role of `max(empty set)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationOffset {
    pub v_min: f64,
}

/// Offset that makes the set function normalized (`F(empty) = 0`).
///
/// EI and PI are already normalized. UCB uses the smallest posterior mean on
/// `grid`. SR has no finite lower bound; the grid minimum of `mu - 3 sigma` is
/// a heuristic stand-in.
pub fn normalization_offset(spec: &AcquisitionSpec, model: &GpModel, grid: &DMatrix<f64>) -> Result<NormalizationOffset> {
    let over_grid = |f: &dyn Fn(f64, f64) -> f64| -> Result<f64> {
        if grid.nrows() == 0 {
            return Err(Error::input("normalization needs a non-empty grid"));
        }
        let mut lo = f64::INFINITY;
        for i in 0..grid.nrows() {
            let x: Vec<f64> = grid.row(i).iter().copied().collect();
            let (mu, var) = model.marginal(&x)?;
            lo = lo.min(f(mu, var.sqrt()));
        }
        Ok(lo)
    };
    let v_min = match spec.kind {
        AcqKind::Ei | AcqKind::Pi => 0.0,
        AcqKind::Ucb => over_grid(&|mu, _| mu)?,
        AcqKind::Sr => over_grid(&|mu, sigma| mu - 3.0 * sigma)?,
        AcqKind::Es | AcqKind::Kg => {
            return Err(Error::config(format!("{} is not in the myopic-maximal family", spec.kind)))
        }
    };
    Ok(NormalizationOffset { v_min })
}

/// MC estimate of the marginal gain `L(X_old + x_new) - L(X_old)`, computed
/// per sample as `ReLU(l(y_new) - max(v_min, max l(y_old)))`.
///
/// Base-sample columns are assigned in order `[X_old; x_new]`, matching the
/// leading columns used by [`super::mc_value`] on `X_old` alone.
pub fn discrete_derivative_mc(
    spec: &AcquisitionSpec,
    x_new: &[f64],
    x_old: &DMatrix<f64>,
    model: &GpModel,
    z: &BaseSamples,
    offset: NormalizationOffset,
) -> Result<f64> {
    if !spec.kind.is_myopic_maximal() {
        return Err(Error::config(format!("{} is not in the myopic-maximal family", spec.kind)));
    }
    spec.validate()?;
    let d = model.dim();
    if x_new.len() != d || (x_old.nrows() > 0 && x_old.ncols() != d) {
        return Err(Error::input("point dimension mismatch"));
    }
    let q_old = x_old.nrows();
    // Re-adding a selected point shares its outcome, so the gain is exactly zero.
    let duplicate = (0..q_old).any(|i| x_old.row(i).iter().zip(x_new).all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL));
    if duplicate {
        return Ok(0.0);
    }
    let q = q_old + 1;
    if z.width() < q {
        return Err(Error::input(format!("base samples have {} columns, need {q}", z.width())));
    }
    let joint = DMatrix::from_fn(q, d, |i, j| if i < q_old { x_old[(i, j)] } else { x_new[j] });
    let mom = model.posterior(&joint)?;
    let zq = z.z.columns(0, q);
    let y = zq * mom.chol.transpose();
    let mut total = 0.0;
    for k in 0..y.nrows() {
        let mut incumbent = offset.v_min;
        for i in 0..q_old {
            incumbent = incumbent.max(pointwise_utility(spec, y[(k, i)] + mom.mean[i], mom.mean[i]));
        }
        let new = pointwise_utility(spec, y[(k, q_old)] + mom.mean[q_old], mom.mean[q_old]);
        total += (new - incumbent).max(0.0);
    }
    Ok(total / y.nrows() as f64)
}
