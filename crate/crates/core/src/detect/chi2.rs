//! Chi-squared distribution function and quantile.

use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

fn check_dof(dof: usize) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidArgument("chi-squared needs at least one degree of freedom".into()));
    }
    Ok(dof as f64)
}

/// `P(X <= x)` for `X ~ chi^2_dof`.
pub fn chi2_cdf(dof: usize, x: f64) -> Result<f64> {
    let k = check_dof(dof)?;
    if x.is_nan() {
        return Err(Error::InvalidArgument("chi-squared CDF at NaN".into()));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x == f64::INFINITY {
        return Ok(1.0);
    }
    Ok(gamma_lr(0.5 * k, 0.5 * x))
}

fn chi2_pdf(k: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = 0.5 * k;
    ((a - 1.0) * x.ln() - 0.5 * x - a * std::f64::consts::LN_2 - ln_gamma(a)).exp()
}

/// The `x` with `chi2_cdf(dof, x) = p`.
///
/// Two degrees of freedom use the closed form `-2 ln(1 - p)`; otherwise
/// Newton steps on the CDF are kept inside a shrinking bracket and replaced
/// by bisection whenever they would leave it.
pub fn chi2_quantile(dof: usize, p: f64) -> Result<f64> {
    let k = check_dof(dof)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("chi-squared quantile needs p in (0, 1), got {p}")));
    }
    if dof == 2 {
        return Ok(-2.0 * (-p).ln_1p());
    }
    let cdf = |x: f64| gamma_lr(0.5 * k, 0.5 * x);
    let (mut lo, mut hi) = (0.0, k.max(1.0));
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = cdf(x) - p;
        if f.abs() <= 1e-14 {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = chi2_pdf(k, x);
        let newton = if d > 0.0 { x - f / d } else { f64::NAN };
        x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(x)
}
