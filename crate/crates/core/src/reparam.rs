//! Gaussian reparameterization `y = mu + L z` and the linear algebra needed to
//! push sensitivities back through it.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream;

/// Whether base samples are reused across calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    /// Same `(seed, m, q)` gives bitwise-identical variates.
    #[default]
    Deterministic,
    /// Fresh variates on every draw; the seed actually used is recorded.
    Stochastic,
}

/// Standard normal variates `z`, one row per Monte Carlo sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseSamples {
    pub z: DMatrix<f64>,
    pub mode: SampleMode,
    pub seed: u64,
}

impl BaseSamples {
    /// Draws an `m x q` matrix of standard normals.
    ///
    /// Entry `(k, i)` depends only on `(seed, k, i)`, so the first `q'` columns
    /// of a wider draw equal a narrower draw with the same seed.
    pub fn draw(m: usize, q: usize, mode: SampleMode, seed: u64) -> Result<Self> {
        if m == 0 || q == 0 {
            return Err(Error::input(format!("base samples need m >= 1 and q >= 1, got m={m}, q={q}")));
        }
        let seed = match mode {
            SampleMode::Deterministic => seed,
            SampleMode::Stochastic => stream::derive(seed, rand::random::<u64>()),
        };
        let z = DMatrix::from_fn(m, q, |k, i| stream::normal(seed, stream::cell(k, i)));
        Ok(Self { z, mode, seed })
    }

    /// Builds base samples from explicit variates.
    pub fn from_matrix(z: DMatrix<f64>) -> Self {
        Self { z, mode: SampleMode::Deterministic, seed: 0 }
    }

    pub fn n_samples(&self) -> usize {
        self.z.nrows()
    }

    pub fn width(&self) -> usize {
        self.z.ncols()
    }

    /// First `q` columns.
    pub fn prefix(&self, q: usize) -> Self {
        Self { z: self.z.columns(0, q).into_owned(), mode: self.mode, seed: self.seed }
    }
}

/// Free-function form of [`BaseSamples::draw`].
pub fn draw_base_samples(m: usize, q: usize, mode: SampleMode, seed: u64) -> Result<BaseSamples> {
    BaseSamples::draw(m, q, mode, seed)
}

/// Reparameterized outcomes, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePaths {
    pub y: DMatrix<f64>,
}

/// Maps base samples through `y_k = mu + L z_k`.
pub fn reparameterize(mu: &DVector<f64>, chol: &DMatrix<f64>, z: &BaseSamples) -> Result<SamplePaths> {
    let q = mu.len();
    if chol.nrows() != q || chol.ncols() != q || z.width() != q {
        return Err(Error::input(format!(
            "shape mismatch: mean {q}, chol {}x{}, samples with {} columns",
            chol.nrows(),
            chol.ncols(),
            z.width()
        )));
    }
    let mut y = &z.z * chol.transpose();
    for mut row in y.row_iter_mut() {
        row += mu.transpose();
    }
    Ok(SamplePaths { y })
}

/// Cholesky factor with the diagonal jitter that was needed to obtain it.
///
/// Tries jitter 0 first, then `1e-6 * max_jitter` escalating by factors of ten
/// up to `max_jitter`.
pub fn stable_cholesky(cov: &DMatrix<f64>, max_jitter: f64) -> Result<(DMatrix<f64>, f64)> {
    let q = cov.nrows();
    if cov.ncols() != q {
        return Err(Error::input(format!("covariance must be square, got {}x{}", q, cov.ncols())));
    }
    if q == 0 {
        return Ok((DMatrix::zeros(0, 0), 0.0));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("covariance has non-finite entries"));
    }
    let mut jitter = 0.0;
    let mut next = max_jitter * 1e-6;
    loop {
        let mut a = cov.clone();
        for i in 0..q {
            a[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(a) {
            let l = chol.unpack();
            if l.diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                return Ok((l, jitter));
            }
        }
        if !(next > 0.0) || next > max_jitter * (1.0 + 1e-12) {
            return Err(Error::NotPositiveDefinite { max_jitter });
        }
        jitter = next;
        next *= 10.0;
    }
}

/// Reverse-mode step through `L = chol(Sigma)`.
///
/// Given the sensitivity `chol_bar` of a scalar with respect to the lower
/// triangle of `L`, returns the symmetric sensitivity with respect to `Sigma`:
/// `sym(L^-T Phi(L^T Lbar) L^-1)` where `Phi` keeps the lower triangle and
/// halves the diagonal.
pub fn cholesky_pullback(chol: &DMatrix<f64>, chol_bar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = chol.nrows();
    if chol.ncols() != q || chol_bar.shape() != (q, q) {
        return Err(Error::input("cholesky_pullback: shape mismatch"));
    }
    if chol.diagonal().iter().any(|d| *d == 0.0 || !d.is_finite()) {
        return Err(Error::numerical("cholesky_pullback: singular factor"));
    }
    let lbar = chol_bar.lower_triangle();
    let mut p = (chol.transpose() * lbar).lower_triangle();
    for i in 0..q {
        p[(i, i)] *= 0.5;
    }
    // A = L^-T P, then S = A L^-1 = (L^-T A^T)^T.
    let a = chol
        .tr_solve_lower_triangular(&p)
        .ok_or_else(|| Error::numerical("cholesky_pullback: triangular solve failed"))?;
    let s_t = chol
        .tr_solve_lower_triangular(&a.transpose())
        .ok_or_else(|| Error::numerical("cholesky_pullback: triangular solve failed"))?;
    let s = s_t.transpose();
    Ok((&s + s.transpose()) * 0.5)
}
