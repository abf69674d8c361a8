use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionForm {
    /// `y = a + b x`
    Linear,
    /// `ln(1 + y) = a + b ln(x)`
    Loglinear,
}

impl std::str::FromStr for RegressionForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "loglinear" | "log-linear" => Ok(Self::Loglinear),
            other => Err(Error::Config(format!(
                "unknown regression form '{other}' (expected linear or loglinear)"
            ))),
        }
    }
}

/// Ordinary least-squares fit with an intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    /// Intercept first, then one slope per regressor.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub r_squared: f64,
    pub form: RegressionForm,
    pub n: usize,
}

impl RegressionFit {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn slope(&self) -> f64 {
        self.coefficients[1]
    }
}

/// Least squares on an explicit design (first column is usually the intercept).
///
/// Returns coefficients, conventional standard errors and the residual vector.
pub fn least_squares(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let (n, p) = design.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    if n <= p {
        return Err(Error::domain(format!(
            "least squares needs more observations ({n}) than parameters ({p})"
        )));
    }
    let qr = design.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    if scale == 0.0 || r.diagonal().iter().any(|d| d.abs() <= 1e-12 * scale) {
        return Err(Error::Collinear);
    }
    let qty = qr.q().tr_mul(y);
    let beta = r.solve_upper_triangular(&qty).ok_or(Error::Collinear)?;
    let residuals = y - design * &beta;
    let rss = residuals.norm_squared();
    let sigma2 = rss / (n - p) as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::Collinear)?;
    // (X^T X)^-1 = R^-1 R^-T
    let xtx_inv = &r_inv * r_inv.transpose();
    let se = DVector::from_fn(p, |i, _| (sigma2 * xtx_inv[(i, i)]).max(0.0).sqrt());
    Ok((beta, se, residuals))
}

/// Simple regression of `y` on `x` in the requested form.
pub fn ols_fit(x: &[f64], y: &[f64], form: RegressionForm) -> Result<RegressionFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::domain(format!("regression needs at least 3 points, got {n}")));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = match form {
        RegressionForm::Linear => (x.to_vec(), y.to_vec()),
        RegressionForm::Loglinear => {
            if let Some(bad) = x.iter().position(|&v| !(v > 0.0)) {
                return Err(Error::domain(format!(
                    "log-linear regressor must be positive (x[{bad}] = {})",
                    x[bad]
                )));
            }
            if let Some(bad) = y.iter().position(|&v| !(v >= 0.0)) {
                return Err(Error::domain(format!(
                    "log-linear response must be non-negative (y[{bad}] = {})",
                    y[bad]
                )));
            }
            (x.iter().map(|v| v.ln()).collect(), y.iter().map(|v| v.ln_1p()).collect())
        }
    };
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    let yv = DVector::from_vec(ys);
    let (beta, se, residuals) = least_squares(&design, &yv)?;
    let mean_y = yv.mean();
    let tss: f64 = yv.iter().map(|v| (v - mean_y) * (v - mean_y)).sum();
    let rss = residuals.norm_squared();
    let r_squared = if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 0.0 };
    Ok(RegressionFit {
        coefficients: beta.iter().copied().collect(),
        std_errors: se.iter().copied().collect(),
        r_squared,
        form,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_line() {
        let x: Vec<f64> = (1..=10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let fit = ols_fit(&x, &y, RegressionForm::Linear).unwrap();
        assert!((fit.slope() - 2.0).abs() < 1e-12);
        assert!(fit.intercept().abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.coefficients.len(), fit.std_errors.len());
    }

    #[test]
    fn constant_response() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let fit = ols_fit(&x, &[3.0; 5], RegressionForm::Linear).unwrap();
        assert_eq!(fit.r_squared, 0.0);
        assert!(fit.slope().abs() < 1e-12);
    }

    #[test]
    fn collinear_design_rejected() {
        let x = [2.0; 6];
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert!(matches!(ols_fit(&x, &y, RegressionForm::Linear), Err(Error::Collinear)));
    }

    #[test]
    fn loglinear_domain() {
        assert!(ols_fit(&[0.0, 1.0, 2.0], &[1.0, 2.0, 3.0], RegressionForm::Loglinear).is_err());
        assert!(ols_fit(&[1.0, 1.5, 2.0], &[1.0, -2.0, 3.0], RegressionForm::Loglinear).is_err());
        // zero response is representable through ln(1 + y)
        assert!(ols_fit(&[1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 2.5, 5.0], RegressionForm::Loglinear).is_ok());
    }

    #[test]
    fn matches_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..10.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 0.7 * v + rng.random_range(-1.0..1.0)).collect();
        let fit = ols_fit(&x, &y, RegressionForm::Linear).unwrap();

        // explicit (X^T X)^-1 X^T y on the 2x2 system
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let det = n * sxx - sx * sx;
        let b0 = (sxx * sy - sx * sxy) / det;
        let b1 = (n * sxy - sx * sy) / det;
        assert!((fit.intercept() - b0).abs() < 1e-9);
        assert!((fit.slope() - b1).abs() < 1e-9);

        let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - b0 - b1 * a).powi(2)).sum();
        let sigma2 = rss / (n - 2.0);
        let se1 = (sigma2 * n / det).sqrt();
        let se0 = (sigma2 * sxx / det).sqrt();
        assert!((fit.std_errors[1] - se1).abs() < 1e-9);
        assert!((fit.std_errors[0] - se0).abs() < 1e-9);
    }

    #[test]
    fn residuals_orthogonal_to_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 60;
        let design = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.random_range(-3.0..3.0) });
        let y = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let (_, _, res) = least_squares(&design, &y).unwrap();
        for j in 0..3 {
            let col = design.column(j);
            let dot = col.dot(&res);
            assert!(dot.abs() <= 1e-8 * col.norm() * y.norm());
        }
    }
}
