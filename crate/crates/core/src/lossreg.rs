//! Regression of total leakage volume on the moving average of the F-scaled
//! statistic, in linear and log-linear form.

use chrono::NaiveDateTime;
use log::warn;
use serde::Serialize;

use crate::detection::DEFAULT_WINDOW;
use crate::error::{Error, Result};
use crate::stats::{ols_fit, RegressionFit, RegressionForm};

/// Minimum number of points for a fit.
pub const MIN_POINTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct LossModel {
    pub fit: RegressionFit,
    /// Moving-average window that produced the regressor.
    pub window: usize,
}

impl LossModel {
    /// Model with given intercept and slope and no fit diagnostics.
    pub fn from_coefficients(intercept: f64, slope: f64, form: RegressionForm, window: usize) -> Self {
        Self {
            fit: RegressionFit {
                coefficients: vec![intercept, slope],
                std_errors: vec![f64::NAN, f64::NAN],
                r_squared: f64::NAN,
                form,
                n: 0,
            },
            window,
        }
    }

    pub fn form(&self) -> RegressionForm {
        self.fit.form
    }
}

/// Least-squares fit of loss on `f` (loss in m^3).
pub fn fit_loss(f: &[f64], loss: &[f64], form: RegressionForm) -> Result<LossModel> {
    fit_loss_with_window(f, loss, form, DEFAULT_WINDOW)
}

pub fn fit_loss_with_window(f: &[f64], loss: &[f64], form: RegressionForm, window: usize) -> Result<LossModel> {
    if f.len() != loss.len() {
        return Err(Error::DimensionMismatch {
            expected: f.len(),
            actual: loss.len(),
        });
    }
    if f.len() < MIN_POINTS {
        return Err(Error::SeriesTooShort {
            len: f.len(),
            required: MIN_POINTS,
        });
    }
    Ok(LossModel {
        fit: ols_fit(f, loss, form)?,
        window,
    })
}

/// Predicted loss for regressor value `f`, floored at zero.
pub fn predict_loss(model: &LossModel, f: f64) -> Result<f64> {
    if !(f >= 0.0) {
        return Err(Error::domain(format!("regressor value {f} is negative")));
    }
    let (a, b) = (model.fit.intercept(), model.fit.slope());
    let raw = match model.form() {
        RegressionForm::Linear => a + b * f,
        RegressionForm::Loglinear => {
            if f <= 0.0 {
                return Err(Error::domain("log-linear prediction needs a positive regressor"));
            }
            (a + b * f.ln()).exp() - 1.0
        }
    };
    if raw < 0.0 {
        warn!("predicted loss {raw:.4} at f = {f} is negative; reporting 0");
        return Ok(0.0);
    }
    Ok(raw)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossRow {
    pub timestamp: NaiveDateTime,
    pub f: f64,
    pub predicted: f64,
    pub actual: Option<f64>,
    pub residual: Option<f64>,
}

/// Predictions along a series, with residuals when the actual loss is known.
/// Steps with an undefined regressor are skipped.
pub fn loss_table(
    model: &LossModel,
    timestamps: &[NaiveDateTime],
    f: &[Option<f64>],
    actual: Option<&[f64]>,
) -> Result<Vec<LossRow>> {
    if f.len() != timestamps.len() || actual.is_some_and(|a| a.len() != f.len()) {
        return Err(Error::GridMismatch("loss table inputs have different lengths".into()));
    }
    let mut rows = Vec::new();
    for (t, (ts, fv)) in timestamps.iter().zip(f).enumerate() {
        let Some(fv) = fv else { continue };
        if model.form() == RegressionForm::Loglinear && *fv <= 0.0 {
            continue;
        }
        let predicted = predict_loss(model, *fv)?;
        let actual = actual.map(|a| a[t]);
        rows.push(LossRow {
            timestamp: *ts,
            f: *fv,
            predicted,
            actual,
            residual: actual.map(|a| a - predicted),
        });
    }
    Ok(rows)
}

/// Pearson correlation; `None` when either series is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn exact_linear_data_is_recovered() {
        let f: Vec<f64> = (0..20).map(|i| 0.5 + 0.1 * i as f64).collect();
        let loss: Vec<f64> = f.iter().map(|x| 15.0 * x - 4.0).collect();
        let m = fit_loss(&f, &loss, RegressionForm::Linear).unwrap();
        assert!((m.fit.slope() - 15.0).abs() < 1e-9);
        assert!((m.fit.intercept() + 4.0).abs() < 1e-9);
        assert!((m.fit.r_squared - 1.0).abs() < 1e-12);
        for x in [0.6, 1.0, 2.3] {
            assert!((predict_loss(&m, x).unwrap() - (15.0 * x - 4.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn noisy_fit_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let f: Vec<f64> = (0..50).map(|i| 1.0 + 0.05 * i as f64).collect();
        let loss: Vec<f64> = f.iter().map(|x| 3.0 + 2.0 * x + noise.sample(&mut rng)).collect();
        let m = fit_loss(&f, &loss, RegressionForm::Linear).unwrap();
        let x = DMatrix::from_fn(50, 2, |i, j| if j == 0 { 1.0 } else { f[i] });
        let y = DVector::from_vec(loss);
        let beta = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * y;
        assert!((DVector::from_vec(m.fit.coefficients.clone()) - beta).amax() < 1e-9);
    }

    #[test]
    fn published_coefficients() {
        let lin = LossModel::from_coefficients(-4.038, 15.087, RegressionForm::Linear, 12);
        assert!((predict_loss(&lin, 1.0).unwrap() - 11.049).abs() < 1e-12);
        let log = LossModel::from_coefficients(2.197, 1.576, RegressionForm::Loglinear, 12);
        assert!((predict_loss(&log, 1.0).unwrap() - (2.197f64.exp() - 1.0)).abs() < 1e-12);
        assert!((predict_loss(&log, 1.0).unwrap() - 8.00).abs() < 0.01);
        assert_eq!(predict_loss(&lin, 0.1).unwrap(), 0.0);
        assert!(predict_loss(&log, 0.0).is_err());
    }

    #[test]
    fn input_checks() {
        assert!(matches!(fit_loss(&[1.0; 5], &[1.0; 5], RegressionForm::Linear), Err(Error::SeriesTooShort { .. })));
        assert!(fit_loss(&[1.0; 12], &[1.0; 11], RegressionForm::Linear).is_err());
        let mut f = vec![1.0; 12];
        f[3] = 0.0;
        assert!(fit_loss(&f, &[1.0; 12], RegressionForm::Loglinear).is_err());
    }

    #[test]
    fn residual_table_and_correlation() {
        let m = LossModel::from_coefficients(0.0, 2.0, RegressionForm::Linear, 12);
        let t0 = chrono::NaiveDate::from_ymd_opt(2018, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let ts: Vec<_> = (0..3).map(|i| t0 + chrono::Duration::hours(i)).collect();
        let rows = loss_table(&m, &ts, &[None, Some(1.0), Some(2.0)], Some(&[0.0, 3.0, 3.0])).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].residual, Some(1.0));
        assert_eq!(rows[1].residual, Some(-1.0));
        assert!((correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(correlation(&[1.0, 1.0], &[1.0, 2.0]), None);
    }
}
