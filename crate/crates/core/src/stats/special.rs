//! Distribution functions and their inverses.
//!
//! CDFs are expressed through the regularized incomplete gamma and beta
//! functions. Quantiles are found by bracketing followed by bisection down
//! to adjacent floating-point values, so the returned point is as exact as
//! the CDF evaluation allows.

use statrs::function::{beta::beta_reg, erf::erfc, gamma::gamma_lr};

use crate::error::{Error, Result};

fn check_probability(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("probability {q} is outside (0, 1)")))
    }
}

fn check_df(name: &str, df: f64) -> Result<()> {
    if df.is_finite() && df > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} = {df} must be positive")))
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// CDF of the chi-squared distribution with `df` degrees of freedom.
pub fn chi2_cdf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    gamma_lr(0.5 * df, 0.5 * x)
}

/// CDF of the Fisher F distribution with `(d1, d2)` degrees of freedom.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let u = d1 * x / (d1 * x + d2);
    beta_reg(0.5 * d1, 0.5 * d2, u)
}

/// CDF of Student's t distribution; `df` may be fractional (Welch).
pub fn t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * beta_reg(0.5 * df, 0.5, df / (df + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided tail probability `P(|T| >= |t|)`.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(0.5 * df, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Inverts a non-decreasing CDF on `[0, inf)`.
///
/// The upper bracket grows geometrically from `guess`; bisection then runs
/// until the bracket collapses to neighbouring doubles.
fn invert_nonnegative<F: Fn(f64) -> f64>(cdf: F, q: f64, guess: f64) -> f64 {
    let mut lo = 0.0_f64;
    let mut hi = guess.max(1.0);
    while cdf(hi) < q {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return f64::MAX;
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // pick whichever end of the collapsed bracket sits closer in probability
    if (cdf(lo) - q).abs() < (cdf(hi) - q).abs() {
        lo
    } else {
        hi
    }
}

/// Quantile of the chi-squared distribution.
pub fn chi2_quantile(q: f64, df: u32) -> Result<f64> {
    check_probability(q)?;
    if df < 1 {
        return Err(Error::domain("chi-squared degrees of freedom must be >= 1"));
    }
    let df = f64::from(df);
    Ok(invert_nonnegative(|x| chi2_cdf(x, df), q, df))
}

/// Quantile of the F distribution with integer degrees of freedom.
pub fn f_quantile(q: f64, d1: u32, d2: u32) -> Result<f64> {
    check_probability(q)?;
    if d1 < 1 || d2 < 1 {
        return Err(Error::domain(format!(
            "F degrees of freedom ({d1}, {d2}) must both be >= 1"
        )));
    }
    let (a, b) = (f64::from(d1), f64::from(d2));
    Ok(invert_nonnegative(|x| f_cdf(x, a, b), q, 1.0))
}

/// Quantile of Student's t distribution.
pub fn t_quantile(q: f64, df: f64) -> Result<f64> {
    check_probability(q)?;
    check_df("t degrees of freedom", df)?;
    if q == 0.5 {
        return Ok(0.0);
    }
    // symmetric: solve on the upper half and reflect
    let upper = if q > 0.5 { q } else { 1.0 - q };
    let x = invert_nonnegative(|x| t_cdf(x, df), upper, 1.0);
    Ok(if q > 0.5 { x } else { -x })
}

/// Asymptotic Kolmogorov distribution survival function `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.3 {
        // series below converges slowly here; the true value is 1 to double precision
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = f64::from(k);
        let term = (-2.0 * k * k * lambda * lambda).exp();
        let signed = if k as u32 % 2 == 1 { term } else { -term };
        sum += signed;
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
///
/// Returns `(D, p)` where the p-value uses the Stephens finite-sample
/// correction of the asymptotic distribution.
pub fn ks_test<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> (f64, f64) {
    let n = sample.len();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let above = (i as f64 + 1.0) / nf - f;
        let below = f - i as f64 / nf;
        d = d.max(above).max(below);
    }
    let sq = nf.sqrt();
    let p = kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d);
    (d, p)
}
