use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sample mean and unbiased covariance of a set of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

impl MomentEstimate {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Per-component standard deviations (square roots of the covariance diagonal).
    pub fn std_devs(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

/// Arithmetic mean and covariance with divisor `n - 1`.
pub fn estimate_moments<R: AsRef<[f64]>>(samples: &[R]) -> Result<MomentEstimate> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::domain(format!(
            "moment estimation needs at least 2 samples, got {n}"
        )));
    }
    let s = samples[0].as_ref().len();
    let mut mean = DVector::zeros(s);
    for row in samples {
        let row = row.as_ref();
        if row.len() != s {
            return Err(Error::DimensionMismatch {
                expected: s,
                actual: row.len(),
            });
        }
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean /= n as f64;

    let mut cov = DMatrix::zeros(s, s);
    let mut dev = vec![0.0; s];
    for row in samples {
        for (d, (&x, m)) in dev.iter_mut().zip(row.as_ref().iter().zip(mean.iter())) {
            *d = x - m;
        }
        for i in 0..s {
            for j in 0..=i {
                cov[(i, j)] += dev[i] * dev[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..s {
        for j in 0..=i {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(MomentEstimate { mean, cov, n })
}

/// Pooled covariance over independent simulation runs around per-time means.
///
/// `runs[i][t]` is the observation of run `i` at time `t`; `means[t]` is the
/// reference mean at time `t`. The result is normalised by `N * |times|`.
pub fn pooled_covariance<R: AsRef<[f64]>, M: AsRef<[f64]>>(
    runs: &[Vec<R>],
    times: &[usize],
    means: &[M],
) -> Result<DMatrix<f64>> {
    if runs.is_empty() {
        return Err(Error::domain("pooled covariance needs at least one run"));
    }
    if times.is_empty() {
        return Err(Error::domain("cluster time set is empty"));
    }
    let len = runs[0].len();
    let s = means
        .first()
        .map(|m| m.as_ref().len())
        .ok_or_else(|| Error::domain("no per-time means supplied"))?;
    if means.len() != len {
        return Err(Error::DimensionMismatch {
            expected: len,
            actual: means.len(),
        });
    }
    for run in runs {
        if run.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: run.len(),
            });
        }
    }
    let mut acc = DMatrix::zeros(s, s);
    let mut dev = vec![0.0; s];
    for run in runs {
        for &t in times {
            if t >= len {
                return Err(Error::IndexOutOfRange { index: t, dim: len });
            }
            let x = run[t].as_ref();
            let mu = means[t].as_ref();
            if x.len() != s || mu.len() != s {
                return Err(Error::DimensionMismatch {
                    expected: s,
                    actual: x.len().min(mu.len()),
                });
            }
            for (d, (a, b)) in dev.iter_mut().zip(x.iter().zip(mu)) {
                *d = a - b;
            }
            for i in 0..s {
                for j in 0..s {
                    acc[(i, j)] += dev[i] * dev[j];
                }
            }
        }
    }
    Ok(acc / (runs.len() * times.len()) as f64)
}

/// Covariance assembled from a fixed correlation matrix and per-component scales.
pub fn structured_covariance(corr: &DMatrix<f64>, sigmas: &[f64]) -> Result<DMatrix<f64>> {
    let s = sigmas.len();
    if corr.nrows() != s || corr.ncols() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            actual: corr.nrows(),
        });
    }
    for i in 0..s {
        if (corr[(i, i)] - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!(
                "correlation diagonal entry {i} is {} (must be 1)",
                corr[(i, i)]
            )));
        }
        if !(sigmas[i] > 0.0) {
            return Err(Error::domain(format!(
                "standard deviation {i} is {} (must be positive)",
                sigmas[i]
            )));
        }
        for j in 0..i {
            if (corr[(i, j)] - corr[(j, i)]).abs() > 1e-12 {
                return Err(Error::domain(format!(
                    "correlation matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(DMatrix::from_fn(s, s, |i, j| sigmas[i] * sigmas[j] * corr[(i, j)]))
}
