//! Student-t distribution functions.
//!
//! The CDF goes through the regularized incomplete beta function, evaluated
//! by its continued fraction with the modified Lentz method. The quantile
//! inverts the CDF by safeguarded Newton iteration inside a bracket.

use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("degrees of freedom must be at least 1")]
    DegreesOfFreedom,
    #[error("probability {0} outside (0, 1)")]
    Probability(f64),
    #[error("argument is not finite")]
    NonFinite,
}

const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 10_000;

/// Continued fraction for `I_x(a, b)`; `y = 1 - x` is passed separately so
/// callers can supply it without cancellation.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)` with `y = 1 - x`.
pub fn beta_reg(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * y.ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, y) / b
    }
}

fn check_df(df: u32) -> Result<f64, DistributionError> {
    if df == 0 {
        Err(DistributionError::DegreesOfFreedom)
    } else {
        Ok(df as f64)
    }
}

/// Density of Student's t with `df` degrees of freedom.
pub fn t_pdf(x: f64, df: u32) -> Result<f64, DistributionError> {
    let nu = check_df(df)?;
    if x.is_nan() {
        return Err(DistributionError::NonFinite);
    }
    let ln = ln_gamma((nu + 1.0) / 2.0)
        - ln_gamma(nu / 2.0)
        - 0.5 * (nu * std::f64::consts::PI).ln()
        - (nu + 1.0) / 2.0 * (x * x / nu).ln_1p();
    Ok(ln.exp())
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn t_cdf(x: f64, df: u32) -> Result<f64, DistributionError> {
    let nu = check_df(df)?;
    if x.is_nan() {
        return Err(DistributionError::NonFinite);
    }
    if x == 0.0 {
        return Ok(0.5);
    }
    if x.is_infinite() {
        return Ok(if x > 0.0 { 1.0 } else { 0.0 });
    }
    let x2 = x * x;
    let z = nu / (nu + x2);
    let tail = 0.5 * beta_reg(nu / 2.0, 0.5, z, x2 / (nu + x2));
    Ok(if x > 0.0 { 1.0 - tail } else { tail })
}

/// Quantile (inverse CDF) of Student's t.
pub fn t_quantile(p: f64, df: u32) -> Result<f64, DistributionError> {
    check_df(df)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(DistributionError::Probability(p));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p < 0.5 {
        return Ok(-upper_quantile(1.0 - p, df));
    }
    Ok(upper_quantile(p, df))
}

/// Quantile for `p > 0.5`; the root lies in `(0, inf)`.
fn upper_quantile(p: f64, df: u32) -> f64 {
    let cdf = |x: f64| t_cdf(x, df).expect("df checked");
    let mut lo = 0.0;
    let mut hi = 1.0;
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let err = cdf(x) - p;
        if err.abs() <= 1e-15 {
            break;
        }
        if err > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let density = t_pdf(x, df).expect("df checked");
        let newton = x - err / density;
        x = if density > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    // Simpson's rule on the t density, independent of the incomplete beta path.
    fn integrated_cdf(x: f64, df: u32) -> f64 {
        let n = 200_000;
        let h = x / n as f64;
        let f = |t: f64| t_pdf(t, df).unwrap();
        let mut s = f(0.0) + f(x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        0.5 + s * h / 3.0
    }

    #[test]
    fn cdf_symmetry_and_cauchy() {
        for df in 1..10 {
            assert_eq!(t_cdf(0.0, df).unwrap(), 0.5);
        }
        assert!((t_cdf(1.0, 1).unwrap() - (0.5 + 1f64.atan() / PI)).abs() < 1e-14);
        assert!((t_cdf(1.0, 1).unwrap() - 0.75).abs() < 1e-14);
        for x in [-30.0, -3.0, -0.2, 0.7, 5.0, 100.0] {
            let exact = 0.5 + f64::atan(x) / PI;
            assert!((t_cdf(x, 1).unwrap() - exact).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn cdf_df2_against_quadrature() {
        // the df=2 CDF also has the closed form 1/2 + x / (2 sqrt(2 + x^2))
        let x = 2.919986;
        let quad = integrated_cdf(x, 2);
        assert!((quad - 0.95).abs() < 1e-6, "{quad}");
        assert!((t_cdf(x, 2).unwrap() - quad).abs() < 1e-10);
        for x in [0.1, 1.3, 4.0] {
            assert!((t_cdf(x, 7).unwrap() - integrated_cdf(x, 7)).abs() < 1e-10);
        }
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(t_quantile(0.5, 7).unwrap(), 0.0);
        let cauchy = |p: f64| (PI * (p - 0.5)).tan();
        assert!((t_quantile(0.95, 1).unwrap() - 6.313752).abs() < 1e-4);
        assert!((t_quantile(0.95, 1).unwrap() - cauchy(0.95)).abs() < 1e-9);
        assert!((t_quantile(0.975, 1).unwrap() - 12.70620).abs() < 1e-3);
        assert!((t_quantile(0.975, 1).unwrap() - cauchy(0.975)).abs() < 1e-8);
        assert!((t_quantile(0.05, 1).unwrap() + cauchy(0.95)).abs() < 1e-9);
    }

    #[test]
    fn domain_errors() {
        assert_eq!(t_cdf(1.0, 0), Err(DistributionError::DegreesOfFreedom));
        assert_eq!(t_quantile(0.0, 3), Err(DistributionError::Probability(0.0)));
        assert_eq!(t_quantile(1.0, 3), Err(DistributionError::Probability(1.0)));
        assert!(t_cdf(f64::NAN, 3).is_err());
    }

    #[test]
    fn agrees_with_statrs() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        for df in [1u32, 2, 3, 5, 12, 30] {
            let d = StudentsT::new(0.0, 1.0, df as f64).unwrap();
            for x in [-8.0, -2.5, -0.3, 0.4, 1.7, 6.0] {
                assert!((t_cdf(x, df).unwrap() - d.cdf(x)).abs() < 1e-10, "df={df} x={x}");
            }
        }
    }

    #[test]
    fn inversion_grid() {
        for df in 1..=30 {
            for i in 1..=199 {
                let p = i as f64 * 0.005;
                let q = t_quantile(p, df).unwrap();
                assert!((t_cdf(q, df).unwrap() - p).abs() <= 1e-8, "df={df} p={p}");
            }
        }
    }
}
