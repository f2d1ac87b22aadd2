use nalgebra::{DMatrix, DVector};

use super::{utility_with_floor, AcqKind, AcquisitionSpec};
use crate::error::{Error, Result};
use crate::gp::{check_distinct, GpModel, PosteriorParts};
use crate::reparam::{cholesky_pullback, BaseSamples, SampleMode, SamplePaths};
use crate::stream;

/// Tag used to derive the ES inner-sample seed from the outer one.
pub const ES_INNER_TAG: u64 = 0xE5_1A7E;

/// Monte Carlo estimate with its standard error and, optionally, its gradient
/// with respect to the query set.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub gradient: Option<DMatrix<f64>>,
}

fn mean_and_se(values: &DVector<f64>) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.sum() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

fn leading_columns(z: &DMatrix<f64>, q: usize) -> Result<DMatrix<f64>> {
    if z.ncols() < q {
        return Err(Error::input(format!("base samples have {} columns, query set has {q} rows", z.ncols())));
    }
    Ok(z.columns(0, q).into_owned())
}

fn paths(z: &DMatrix<f64>, mean: &DVector<f64>, chol: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = z * chol.transpose();
    for mut row in y.row_iter_mut() {
        row += mean.transpose();
    }
    y
}

/// MC value, standard error and no gradient.
pub fn mc_estimate(spec: &AcquisitionSpec, x: &DMatrix<f64>, model: &GpModel, z: &BaseSamples) -> Result<McEstimate> {
    evaluate(spec, x, model, z, false)
}

/// MC estimate of the acquisition value at query set `x`.
pub fn mc_value(spec: &AcquisitionSpec, x: &DMatrix<f64>, model: &GpModel, z: &BaseSamples) -> Result<f64> {
    Ok(evaluate(spec, x, model, z, false)?.value)
}

/// Sample-path gradient of [`mc_value`] with respect to `x`.
pub fn mc_gradient(spec: &AcquisitionSpec, x: &DMatrix<f64>, model: &GpModel, z: &BaseSamples) -> Result<DMatrix<f64>> {
    Ok(evaluate(spec, x, model, z, true)?.gradient.expect("gradient requested"))
}

/// Value and gradient in one pass.
pub fn mc_value_and_gradient(
    spec: &AcquisitionSpec,
    x: &DMatrix<f64>,
    model: &GpModel,
    z: &BaseSamples,
) -> Result<McEstimate> {
    evaluate(spec, x, model, z, true)
}

/// MC estimate of `E max(floor, max_i l(y_i))` for the myopic-maximal family;
/// ES and KG ignore the floor.
pub fn mc_estimate_with_floor(
    spec: &AcquisitionSpec,
    x: &DMatrix<f64>,
    model: &GpModel,
    z: &BaseSamples,
    floor: f64,
    gradient: bool,
) -> Result<McEstimate> {
    spec.validate()?;
    if gradient {
        check_distinct(x)?;
    }
    if spec.kind.is_myopic_maximal() {
        myopic_eval(spec, x, model, &z.z, gradient, floor)
    } else {
        evaluate(spec, x, model, z, gradient)
    }
}

fn evaluate(spec: &AcquisitionSpec, x: &DMatrix<f64>, model: &GpModel, z: &BaseSamples, grad: bool) -> Result<McEstimate> {
    spec.validate()?;
    if grad {
        check_distinct(x)?;
    }
    match spec.kind {
        AcqKind::Es => {
            let zb = inner_samples(spec, z)?;
            joint_eval(spec, x, model, &z.z, Some(&zb.z), grad)
        }
        AcqKind::Kg => joint_eval(spec, x, model, &z.z, None, grad),
        _ => myopic_eval(spec, x, model, &z.z, grad, f64::NEG_INFINITY),
    }
}

fn inner_samples(spec: &AcquisitionSpec, z: &BaseSamples) -> Result<BaseSamples> {
    let b = spec.discretization()?.nrows();
    BaseSamples::draw(spec.inner_mc_samples, b, SampleMode::Deterministic, stream::derive(z.seed, ES_INNER_TAG))
}

fn myopic_eval(
    spec: &AcquisitionSpec,
    x: &DMatrix<f64>,
    model: &GpModel,
    z: &DMatrix<f64>,
    grad: bool,
    floor: f64,
) -> Result<McEstimate> {
    let q = x.nrows();
    let zq = leading_columns(z, q)?;
    let parts = model.posterior_parts(x)?;
    let mom = &parts.moments;
    let y = SamplePaths { y: paths(&zq, &mom.mean, &mom.chol) };
    let batch = utility_with_floor(spec, &y, &mom.mean, floor)?;
    let (value, std_error) = mean_and_se(&batch.values);
    let gradient = if grad {
        let m = zq.nrows() as f64;
        let mut mean_bar: DVector<f64> = batch.grad_y.row_sum().transpose() / m;
        if let Some(g) = &batch.grad_mu {
            mean_bar += g.row_sum().transpose() / m;
        }
        let chol_bar = batch.grad_y.transpose() * &zq / m;
        Some(pull_back(model, x, &parts, &mean_bar, &chol_bar, q)?)
    } else {
        None
    };
    Ok(McEstimate { value, std_error, gradient })
}

fn pull_back(
    model: &GpModel,
    x: &DMatrix<f64>,
    parts: &PosteriorParts,
    mean_bar: &DVector<f64>,
    chol_bar: &DMatrix<f64>,
    n_rows: usize,
) -> Result<DMatrix<f64>> {
    let cov_bar = cholesky_pullback(&parts.moments.chol, chol_bar)?;
    model.posterior_vjp(x, parts, mean_bar, &cov_bar, n_rows)
}

fn stack(xa: &DMatrix<f64>, xb: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if xa.ncols() != xb.ncols() {
        return Err(Error::input("discretization dimension differs from query dimension"));
    }
    let q = xa.nrows();
    Ok(DMatrix::from_fn(q + xb.nrows(), xa.ncols(), |i, j| if i < q { xa[(i, j)] } else { xb[(i - q, j)] }))
}

/// Joint posterior over `[X_a; X_b]`; returns the parts and the fantasy-updated
/// discretization means `mu_b + L_ba z_a`, one row per outer sample.
fn joint_paths(
    spec: &AcquisitionSpec,
    xa: &DMatrix<f64>,
    model: &GpModel,
    za: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, PosteriorParts, DMatrix<f64>)> {
    let q = xa.nrows();
    let joint = stack(xa, spec.discretization()?)?;
    let parts = model.posterior_parts(&joint)?;
    let b = joint.nrows() - q;
    let mom = &parts.moments;
    let l_ba = mom.chol.view((q, 0), (b, q));
    let mut a = za * l_ba.transpose();
    let mu_b = mom.mean.rows(q, b);
    for mut row in a.row_iter_mut() {
        row += mu_b.transpose();
    }
    Ok((joint, parts, a))
}

fn joint_eval(
    spec: &AcquisitionSpec,
    xa: &DMatrix<f64>,
    model: &GpModel,
    z: &DMatrix<f64>,
    zb: Option<&DMatrix<f64>>,
    grad: bool,
) -> Result<McEstimate> {
    let q = xa.nrows();
    let za = leading_columns(z, q)?;
    let (joint, parts, a) = joint_paths(spec, xa, model, &za)?;
    let (m, b) = a.shape();
    let n = q + b;
    // Sensitivities of the value with respect to `a` (m x b) and, for ES, the
    // inner paths' contribution to L_bb.
    let mut a_bar = DMatrix::zeros(m, b);
    let mut lbb_bar = DMatrix::zeros(b, b);
    let mut values = DVector::zeros(m);
    match zb {
        None => {
            for k in 0..m {
                let (c, v) = argmax(a.row(k).iter().copied());
                values[k] = v;
                a_bar[(k, c)] = 1.0 / m as f64;
            }
        }
        Some(zb) => {
            let l_bb = parts.moments.chol.view((q, q), (b, b));
            let w = zb * l_bb.transpose();
            let inner = w.nrows();
            let tau = spec.tau;
            let mut soft = DMatrix::zeros(inner, b);
            let mut inner_bar = DMatrix::<f64>::zeros(inner, b);
            let scale = 1.0 / (m as f64 * inner as f64 * tau);
            let mut p = vec![0.0; b];
            for k in 0..m {
                p.iter_mut().for_each(|v| *v = 0.0);
                for j in 0..inner {
                    let top = (0..b).map(|c| a[(k, c)] + w[(j, c)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for c in 0..b {
                        let e = ((a[(k, c)] + w[(j, c)] - top) / tau).exp();
                        soft[(j, c)] = e;
                        total += e;
                    }
                    for c in 0..b {
                        soft[(j, c)] /= total;
                        p[c] += soft[(j, c)] / inner as f64;
                    }
                }
                values[k] = p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum();
                if grad {
                    let g: Vec<f64> = p.iter().map(|v| v.max(f64::MIN_POSITIVE).ln() + 1.0).collect();
                    for j in 0..inner {
                        let sg: f64 = (0..b).map(|c| soft[(j, c)] * g[c]).sum();
                        for c in 0..b {
                            let t = scale * soft[(j, c)] * (g[c] - sg);
                            a_bar[(k, c)] += t;
                            inner_bar[(j, c)] += t;
                        }
                    }
                }
            }
            if grad {
                lbb_bar = inner_bar.transpose() * zb;
            }
        }
    }
    let (value, std_error) = mean_and_se(&values);
    let gradient = if grad {
        let mut mean_bar = DVector::zeros(n);
        let mut chol_bar = DMatrix::zeros(n, n);
        let lba_bar = a_bar.transpose() * &za;
        for c in 0..b {
            mean_bar[q + c] = a_bar.column(c).sum();
            for i in 0..q {
                chol_bar[(q + c, i)] = lba_bar[(c, i)];
            }
            for e in 0..=c {
                chol_bar[(q + c, q + e)] = lbb_bar[(c, e)];
            }
        }
        Some(pull_back(model, &joint, &parts, &mean_bar, &chol_bar, q)?)
    } else {
        None
    };
    Ok(McEstimate { value, std_error, gradient })
}

fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Concrete (softmax-relaxed) entropy search with explicit outer and inner draws.
pub fn es_concrete_value(
    spec: &AcquisitionSpec,
    x: &DMatrix<f64>,
    model: &GpModel,
    z_a: &BaseSamples,
    z_b: &BaseSamples,
) -> Result<f64> {
    spec.validate()?;
    if spec.kind != AcqKind::Es {
        return Err(Error::config("es_concrete_value needs an ES spec"));
    }
    let b = spec.discretization()?.nrows();
    let zb = leading_columns(&z_b.z, b)?;
    Ok(joint_eval(spec, x, model, &z_a.z, Some(&zb), false)?.value)
}

/// Hard-indicator entropy search on the same draws (the `tau -> 0` limit).
pub fn es_hard_value(
    spec: &AcquisitionSpec,
    x: &DMatrix<f64>,
    model: &GpModel,
    z_a: &BaseSamples,
    z_b: &BaseSamples,
) -> Result<f64> {
    spec.validate()?;
    let q = x.nrows();
    let za = leading_columns(&z_a.z, q)?;
    let (_, parts, a) = joint_paths(spec, x, model, &za)?;
    let (m, b) = a.shape();
    let zb = leading_columns(&z_b.z, b)?;
    let w = zb * parts.moments.chol.view((q, q), (b, b)).transpose();
    let inner = w.nrows();
    let mut total = 0.0;
    for k in 0..m {
        let mut p = vec![0.0; b];
        for j in 0..inner {
            let (c, _) = argmax((0..b).map(|c| a[(k, c)] + w[(j, c)]));
            p[c] += 1.0 / inner as f64;
        }
        total += p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>();
    }
    Ok(total / m as f64)
}

/// Knowledge gradient: expected max of the fantasy-updated discretization means.
pub fn kg_value(spec: &AcquisitionSpec, x: &DMatrix<f64>, model: &GpModel, z_a: &BaseSamples) -> Result<f64> {
    spec.validate()?;
    if spec.kind != AcqKind::Kg {
        return Err(Error::config("kg_value needs a KG spec"));
    }
    Ok(joint_eval(spec, x, model, &z_a.z, None, false)?.value)
}

/// Probability of improvement with hard indicators (the `tau -> 0` limit).
pub fn pi_hard_value(spec: &AcquisitionSpec, x: &DMatrix<f64>, model: &GpModel, z: &BaseSamples) -> Result<f64> {
    let q = x.nrows();
    let zq = leading_columns(&z.z, q)?;
    let mom = model.posterior(x)?;
    let y = paths(&zq, &mom.mean, &mom.chol);
    let hits = y.row_iter().filter(|row| row.iter().any(|v| *v > spec.alpha)).count();
    Ok(hits as f64 / y.nrows() as f64)
}
