//! Dense reference implementations used to cross-check the low-rank fast
//! paths. Everything here forms full covariance matrices and inverts them
//! directly; none of it shares code with the sampling kernels it validates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{DataSet, ProjectionPair};

/// Log density of `N(mean, cov)` with a dense inverse and determinant.
pub fn log_mvn(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let k = x.len();
    let inv = cov
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numeric("reference covariance not invertible".into()))?;
    let det = cov.determinant();
    if det <= 0.0 {
        return Err(Error::Numeric(format!("reference covariance determinant {det} <= 0")));
    }
    let diff = x - mean;
    Ok(-0.5 * (diff.transpose() * inv * &diff)[(0, 0)]
        - 0.5 * det.ln()
        - 0.5 * k as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Log density of a scalar Gaussian.
pub fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (x - mean) * (x - mean) / var - 0.5 * var.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Log density of `IG(shape, scale)` at `x > 0`.
pub fn log_inverse_gamma(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// Lanczos approximation of `ln Γ(x)`, accurate to ~1e-13 for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Dense per-subject proxy covariance `C_i = Z_i Sᵀ Γ R Rᵀ Γᵀ S Z_iᵀ + I`,
/// formed by plain products.
pub fn dense_subject_cov(
    z_i: &DMatrix<f64>,
    proj: &ProjectionPair,
    gamma: &DVector<f64>,
) -> DMatrix<f64> {
    let gamma_mat = DMatrix::from_column_slice(proj.k1(), proj.k2(), gamma.as_slice());
    let wide = z_i * proj.s().transpose() * gamma_mat * proj.r();
    let m = z_i.nrows();
    &wide * wide.transpose() + DMatrix::identity(m, m)
}

/// Collapsed log likelihood `sum_i log N(y_i; X_i beta, tau2 C_i)` with the
/// `d_i` integrated out, via dense covariances.
pub fn dense_marginal_loglik(
    data: &DataSet,
    proj: &ProjectionPair,
    gamma: &DVector<f64>,
    beta: &DVector<f64>,
    tau2: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for b in data.blocks() {
        let cov = dense_subject_cov(&b.z, proj, gamma) * tau2;
        let mean = &b.x * beta;
        total += log_mvn(&b.y, &mean, &cov)?;
    }
    Ok(total)
}

/// Uncollapsed log likelihood
/// `sum_i log N(y_i; X_i beta + Z_i Sᵀ Γ d_i, tau2 I)` given the imputed
/// compressed effects.
pub fn dense_loglik_given_d(
    data: &DataSet,
    proj: &ProjectionPair,
    gamma: &DVector<f64>,
    beta: &DVector<f64>,
    tau2: f64,
    d: &[DVector<f64>],
) -> Result<f64> {
    if d.len() != data.n() {
        return Err(Error::Dimension(format!("{} d vectors for {} subjects", d.len(), data.n())));
    }
    let gamma_mat = DMatrix::from_column_slice(proj.k1(), proj.k2(), gamma.as_slice());
    let mut total = 0.0;
    for (i, b) in data.blocks().iter().enumerate() {
        let mean = &b.x * beta + &b.z * proj.s().transpose() * &gamma_mat * &d[i];
        let cov = DMatrix::identity(b.m(), b.m()) * tau2;
        total += log_mvn(&b.y, &mean, &cov)?;
    }
    Ok(total)
}

/// Log prior of the compressed random effects, `sum_i log N(d_i; 0, tau2 R Rᵀ)`.
pub fn dense_log_prior_d(proj: &ProjectionPair, tau2: f64, d: &[DVector<f64>]) -> Result<f64> {
    let cov = proj.rrt() * tau2;
    let zero = DVector::zeros(proj.k2());
    let mut total = 0.0;
    for d_i in d {
        total += log_mvn(d_i, &zero, &cov)?;
    }
    Ok(total)
}
