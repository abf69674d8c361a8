//! Numerical primitives: distribution functions, moments, whitening,
//! Hotelling statistics and least squares.

mod moments;
mod regression;
pub mod special;
mod whitening;

pub use moments::{estimate_moments, pooled_covariance, structured_covariance, MomentEstimate};
pub use regression::{least_squares, ols_fit, RegressionFit, RegressionForm};
pub use special::{chi2_cdf, chi2_quantile, f_cdf, f_quantile, ks_test, normal_cdf, t_cdf, t_quantile};
pub use whitening::{
    mahalanobis_sq, partial_zsq, t2_to_f, wilson_hilferty, RidgePolicy, WhiteningOperator, MAX_CONDITION,
};

use crate::error::{Error, Result};

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Welch's unequal-variance two-sample t-test; returns the two-sided p-value.
///
/// When both samples have zero variance the test degenerates: equal means
/// give `p = 1`, different means give `p = 0`.
pub fn mean_diff_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::domain(format!(
            "mean difference test needs at least 2 points per sample (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a), sample_variance(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (qa, qb) = (va / na, vb / nb);
    let se2 = qa + qb;
    if se2 <= 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    Ok(special::t_two_sided_p(t, df))
}
