//! The four weight estimators.
//!
//! CL, MCL and DID carry an unpenalized intercept. Rather than optimizing
//! it jointly, the columns of `X` and `y` are demeaned over the training
//! rows, the weights are fitted on the demeaned data, and the intercept is
//! recovered as `mean(y) - mean(X)' w`. Both routes give the same weights.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::solvers::{constrained_least_squares, ConstraintSet, SolverError, SolverOptions, WeightFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Canonical synthetic control: simplex weights, no intercept.
    Sc,
    /// Constrained lasso: l1-ball weights plus intercept.
    Cl,
    /// Modified constrained lasso: l1-ball weights summing to one, plus intercept.
    Mcl,
    /// Difference-in-differences: equal weights plus intercept.
    Did,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sc, Method::Cl, Method::Mcl, Method::Did];

    /// l1 radius used when none is given.
    pub fn default_q(self) -> f64 {
        match self {
            Method::Mcl => 1.5,
            _ => 1.0,
        }
    }

    pub fn default_intercept(self) -> bool {
        !matches!(self, Method::Sc)
    }

    pub fn constraint(self, q: f64) -> ConstraintSet {
        match self {
            Method::Sc => ConstraintSet::Simplex,
            Method::Cl => ConstraintSet::L1Ball { q },
            Method::Mcl => ConstraintSet::L1BallAffine { q },
            Method::Did => ConstraintSet::FixedEqual,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sc => "sc",
            Method::Cl => "cl",
            Method::Mcl => "mcl",
            Method::Did => "did",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_uppercase())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sc" => Ok(Method::Sc),
            "cl" => Ok(Method::Cl),
            "mcl" => Ok(Method::Mcl),
            "did" => Ok(Method::Did),
            other => Err(format!("unknown method `{other}` (expected sc, cl, mcl or did)")),
        }
    }
}

/// Fits `method` on `(x, y)` with the method's default intercept handling.
pub fn fit_weights(
    method: Method,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    q: f64,
    opts: &SolverOptions,
) -> Result<WeightFit, SolverError> {
    fit_weights_with_intercept(method, x, y, q, method.default_intercept(), opts)
}

pub fn fit_weights_with_intercept(
    method: Method,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    q: f64,
    intercept: bool,
    opts: &SolverOptions,
) -> Result<WeightFit, SolverError> {
    let constraint = method.constraint(q);
    if !intercept {
        return constrained_least_squares(x, y, constraint, opts);
    }
    let m = x.nrows();
    if m < 2 {
        return Err(SolverError::Dimension(format!(
            "{m} training rows; an intercept needs at least 2"
        )));
    }
    if y.len() != m {
        return Err(SolverError::Dimension(format!(
            "X has {m} rows, y has {}",
            y.len()
        )));
    }
    let x_mean: RowDVector<f64> = x.row_mean();
    let y_mean = y.mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let yc = y.add_scalar(-y_mean);

    let mut fit = constrained_least_squares(&xc, &yc, constraint, opts)?;
    let mu = y_mean - (x_mean * &fit.w)[0];
    fit.intercept = Some(mu);
    fit.objective = (y - x * &fit.w).add_scalar(-mu).norm_squared();
    Ok(fit)
}

/// `y_t - mu - x_t' w` for every row, with a missing intercept read as 0.
pub fn residuals(fit: &WeightFit, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    if x.ncols() != fit.w.len() {
        return Err(SolverError::Dimension(format!(
            "fit has {} weights, X has {} columns",
            fit.w.len(),
            x.ncols()
        )));
    }
    if x.nrows() != y.len() {
        return Err(SolverError::Dimension(format!(
            "X has {} rows, y has {}",
            x.nrows(),
            y.len()
        )));
    }
    Ok((y - x * &fit.w).add_scalar(-fit.intercept.unwrap_or(0.0)))
}
