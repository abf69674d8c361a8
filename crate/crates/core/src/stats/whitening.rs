use log::warn;
use nalgebra::{DMatrix, DVector};

use super::moments::MomentEstimate;
use crate::error::{Error, Result};

/// Condition number above which the covariance is regularised.
pub const MAX_CONDITION: f64 = 1e10;
/// Ridge size relative to the mean variance `trace / s`.
pub const RIDGE_SCALE: f64 = 1e-8;

/// What to do with an ill-conditioned covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RidgePolicy {
    /// Add `RIDGE_SCALE * trace / s` to the diagonal and warn.
    #[default]
    Auto,
    /// Fail with a singular-covariance error.
    Never,
}

/// Linear map `z = W (x - mean)` with `W^T W = cov^-1`.
///
/// `W` is the inverse of the lower Cholesky factor of the covariance, so it
/// is itself lower triangular.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningOperator {
    w: DMatrix<f64>,
    mean: DVector<f64>,
    n: usize,
    cov: DMatrix<f64>,
    ridge: f64,
    condition: f64,
}

fn condition_number(cov: &DMatrix<f64>) -> (f64, f64) {
    let eig = cov.clone().symmetric_eigenvalues();
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let cond = if min <= 0.0 { f64::INFINITY } else { max / min };
    (cond, min)
}

impl WhiteningOperator {
    pub fn new(moments: &MomentEstimate, policy: RidgePolicy) -> Result<Self> {
        Self::build(moments, policy, None)
    }

    /// As [`WhiteningOperator::new`], tagging errors and warnings with a cluster id.
    pub fn for_cluster(moments: &MomentEstimate, policy: RidgePolicy, cluster: usize) -> Result<Self> {
        Self::build(moments, policy, Some(cluster))
    }

    fn build(moments: &MomentEstimate, policy: RidgePolicy, cluster: Option<usize>) -> Result<Self> {
        let s = moments.dim();
        let cov = &moments.cov;
        if cov.nrows() != s || cov.ncols() != s {
            return Err(Error::DimensionMismatch {
                expected: s,
                actual: cov.nrows(),
            });
        }
        if s == 0 {
            return Err(Error::domain("cannot whiten a zero-dimensional vector"));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularCovariance {
                cluster,
                condition: f64::INFINITY,
                reason: "covariance contains non-finite entries".into(),
            });
        }
        let (condition, _) = condition_number(cov);
        let mut used = cov.clone();
        let mut ridge = 0.0;
        if condition > MAX_CONDITION {
            let trace = cov.trace();
            match policy {
                RidgePolicy::Auto if trace > 0.0 => {
                    ridge = RIDGE_SCALE * trace / s as f64;
                    for i in 0..s {
                        used[(i, i)] += ridge;
                    }
                    let where_ = cluster.map(|k| format!(" in cluster {k}")).unwrap_or_default();
                    warn!(
                        "covariance{where_} has condition number {condition:.3e}; added ridge {ridge:.3e} to the diagonal"
                    );
                }
                _ => {
                    return Err(Error::SingularCovariance {
                        cluster,
                        condition,
                        reason: if trace > 0.0 {
                            format!("condition number exceeds {MAX_CONDITION:e}")
                        } else {
                            "covariance is identically zero".into()
                        },
                    });
                }
            }
        }
        let chol = used.clone().cholesky().ok_or_else(|| Error::SingularCovariance {
            cluster,
            condition,
            reason: "covariance is not positive definite".into(),
        })?;
        let l = chol.l();
        let w = l
            .solve_lower_triangular(&DMatrix::identity(s, s))
            .ok_or_else(|| Error::SingularCovariance {
                cluster,
                condition,
                reason: "Cholesky factor is singular".into(),
            })?;

        let op = Self {
            w,
            mean: moments.mean.clone(),
            n: moments.n,
            cov: used,
            ridge,
            condition,
        };
        let residual = op.whiteness_residual();
        let used_condition = if ridge > 0.0 { condition_number(&op.cov).0 } else { condition };
        let tol = 1e-8_f64.max(64.0 * f64::EPSILON * used_condition);
        if !(residual <= tol) {
            return Err(Error::SingularCovariance {
                cluster,
                condition: used_condition,
                reason: format!("whitening check failed: |W S W^T - I| = {residual:.3e}"),
            });
        }
        Ok(op)
    }

    /// Max-norm of `W cov W^T - I`, the whitening identity on the covariance in use.
    pub fn whiteness_residual(&self) -> f64 {
        let s = self.dim();
        let m = &self.w * &self.cov * self.w.transpose();
        (m - DMatrix::<f64>::identity(s, s)).amax()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Training observation count.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Covariance actually factorised, including any ridge.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Diagonal ridge that was added (zero when none).
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Condition number of the covariance before regularisation.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: len,
            })
        }
    }

    pub fn whiten(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x.len())?;
        let d = DVector::from_fn(x.len(), |i, _| x[i] - self.mean[i]);
        Ok(self.whiten_deviation(&d))
    }

    fn whiten_deviation(&self, d: &DVector<f64>) -> DVector<f64> {
        // W is lower triangular
        let s = self.dim();
        let mut z = DVector::zeros(s);
        for i in 0..s {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.w[(i, j)] * d[j];
            }
            z[i] = acc;
        }
        z
    }

    /// `cov^-1 (x - mean)`, computed as `W^T W (x - mean)`.
    pub fn precision_times_deviation(&self, x: &[f64]) -> Result<DVector<f64>> {
        let z = self.whiten(x)?;
        Ok(self.w.tr_mul(&z))
    }
}

/// Squared Mahalanobis distance `|W (x - mean)|^2`.
pub fn mahalanobis_sq(x: &[f64], op: &WhiteningOperator) -> Result<f64> {
    Ok(op.whiten(x)?.norm_squared())
}

/// Sum of squares of the selected whitened components.
pub fn partial_zsq(z: &[f64], idx: &[usize]) -> Result<f64> {
    let mut acc = 0.0;
    for &i in idx {
        let v = z.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            dim: z.len(),
        })?;
        acc += v * v;
    }
    Ok(acc)
}

/// Rescales Hotelling's T^2 so that it follows `F(s, n - s)`.
pub fn t2_to_f(t2: f64, s: usize, n: usize) -> Result<f64> {
    if s < 1 || n <= s {
        return Err(Error::DegreesOfFreedom(format!(
            "T^2 to F scaling needs n > s >= 1 (s = {s}, n = {n})"
        )));
    }
    if t2 < 0.0 {
        return Err(Error::domain(format!("T^2 = {t2} is negative")));
    }
    let (s, n) = (s as f64, n as f64);
    Ok((n - s) / (s * (n - 1.0)) * t2)
}

/// Cube-root transform `(z2 / s)^(1/3)` of a chi-squared-like statistic.
pub fn wilson_hilferty(z2: f64, s: usize) -> f64 {
    (z2.max(0.0) / s.max(1) as f64).cbrt()
}
