//! Euclidean projections onto the weight sets and the constrained
//! least-squares solver shared by every weight estimator.
//!
//! The solver is FISTA with objective-based adaptive restart. Each feasible
//! set only has to supply an exact projection:
//!
//! ```text
//! Simplex        {w : w >= 0, sum w = 1}
//! L1Ball(q)      {w : |w|_1 <= q}
//! L1BallAffine(q){w : |w|_1 <= q, sum w = 1}
//! FixedEqual     {(1/N, ..., 1/N)}
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("empty input")]
    Empty,
    #[error("non-finite value in solver input")]
    NonFinite,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("l1 radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("l1 radius {0} < 1 leaves no weights summing to one")]
    Infeasible(f64),
    #[error("Dykstra projection did not converge in {0} iterations")]
    DykstraNoConvergence(usize),
}

/// Feasible set for the weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintSet {
    Simplex,
    L1Ball { q: f64 },
    L1BallAffine { q: f64 },
    FixedEqual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative objective change below which an iteration counts as stalled.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

/// Estimated weights, optional intercept and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFit {
    pub w: DVector<f64>,
    pub intercept: Option<f64>,
    /// Sum of squared training residuals, intercept included.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub constraint: ConstraintSet,
}

const STALL_WINDOW: usize = 10;
const POWER_ITERS: usize = 50;
const POWER_TOL: f64 = 1e-9;
const LIPSCHITZ_SAFETY: f64 = 1.05;

impl ConstraintSet {
    pub fn validate(&self) -> Result<(), SolverError> {
        match *self {
            ConstraintSet::L1Ball { q } if !(q > 0.0 && q.is_finite()) => {
                Err(SolverError::InvalidRadius(q))
            }
            ConstraintSet::L1BallAffine { q } if !q.is_finite() || q <= 0.0 => {
                Err(SolverError::InvalidRadius(q))
            }
            ConstraintSet::L1BallAffine { q } if q < 1.0 => Err(SolverError::Infeasible(q)),
            _ => Ok(()),
        }
    }

    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
        match *self {
            ConstraintSet::Simplex => project_simplex(v),
            ConstraintSet::L1Ball { q } => project_l1_ball(v, q),
            ConstraintSet::L1BallAffine { q } => project_l1_affine(v, q),
            ConstraintSet::FixedEqual => {
                if v.is_empty() {
                    return Err(SolverError::Empty);
                }
                Ok(DVector::from_element(v.len(), 1.0 / v.len() as f64))
            }
        }
    }

    /// Whether `w` satisfies the set's defining constraints within `tol`.
    /// Whether every feasible point has weights summing to one.
    pub fn sums_to_one(&self) -> bool {
        !matches!(self, ConstraintSet::L1Ball { .. })
    }

    pub fn contains(&self, w: &DVector<f64>, tol: f64) -> bool {
        let sum: f64 = w.iter().sum();
        let l1: f64 = w.iter().map(|x| x.abs()).sum();
        match *self {
            ConstraintSet::Simplex => (sum - 1.0).abs() <= tol && w.iter().all(|&x| x >= -tol),
            ConstraintSet::L1Ball { q } => l1 <= q + tol,
            ConstraintSet::L1BallAffine { q } => l1 <= q + tol && (sum - 1.0).abs() <= tol,
            ConstraintSet::FixedEqual => {
                let e = 1.0 / w.len() as f64;
                w.iter().all(|&x| (x - e).abs() <= tol)
            }
        }
    }
}

/// Threshold `theta` with `sum (v_i - theta)_+ = radius`, for `radius > 0`.
fn simplex_threshold(v: &DVector<f64>, radius: f64) -> f64 {
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - radius) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    theta
}

/// Projection onto `{w >= 0, sum w = radius}` by sort-and-threshold.
fn project_scaled_simplex(v: &DVector<f64>, radius: f64) -> DVector<f64> {
    let theta = simplex_threshold(v, radius);
    v.map(|x| (x - theta).max(0.0))
}

fn check_vector(v: &DVector<f64>) -> Result<(), SolverError> {
    if v.is_empty() {
        return Err(SolverError::Empty);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(SolverError::NonFinite);
    }
    Ok(())
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    check_vector(v)?;
    Ok(project_scaled_simplex(v, 1.0))
}

/// Euclidean projection onto the l1 ball of radius `q`.
pub fn project_l1_ball(v: &DVector<f64>, q: f64) -> Result<DVector<f64>, SolverError> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(SolverError::InvalidRadius(q));
    }
    check_vector(v)?;
    if v.lp_norm(1) <= q {
        return Ok(v.clone());
    }
    let magnitudes = v.abs();
    let shrunk = project_scaled_simplex(&magnitudes, q);
    Ok(shrunk.zip_map(v, |m, x| m.copysign(x)))
}

fn project_hyperplane(v: &DVector<f64>) -> DVector<f64> {
    let shift = (v.sum() - 1.0) / v.len() as f64;
    v.add_scalar(-shift)
}

/// Euclidean projection onto `{|w|_1 <= q, sum w = 1}`.
///
/// The solution has the form `w_i = (v_i - a)_+ - (b - v_i)_+`. Unless the
/// plain hyperplane projection already lies in the ball, the l1 constraint is
/// active, so the positive parts sum to `(q + 1) / 2` and the negative parts
/// to `(q - 1) / 2`; each threshold then follows from one sort.
pub fn project_l1_affine(v: &DVector<f64>, q: f64) -> Result<DVector<f64>, SolverError> {
    ConstraintSet::L1BallAffine { q }.validate()?;
    check_vector(v)?;
    let plane = project_hyperplane(v);
    if plane.lp_norm(1) <= q {
        return Ok(plane);
    }
    let a = simplex_threshold(v, 0.5 * (q + 1.0));
    let neg = 0.5 * (q - 1.0);
    let b = if neg > 0.0 {
        -simplex_threshold(&(-v), neg)
    } else {
        f64::NEG_INFINITY
    };
    Ok(v.map(|x| (x - a).max(0.0) - (b - x).max(0.0)))
}

/// Same projection by Dykstra's alternating projections between the l1 ball
/// and the hyperplane. Slower; kept as an independent check.
pub fn project_l1_affine_dykstra(
    v: &DVector<f64>,
    q: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>, SolverError> {
    ConstraintSet::L1BallAffine { q }.validate()?;
    check_vector(v)?;
    let n = v.len();
    let mut x = v.clone();
    let mut p = DVector::zeros(n);
    let mut r = DVector::zeros(n);
    let mut prev_ball = x.clone();
    for _ in 0..max_iter {
        let ball = project_l1_ball(&(&x + &p), q)?;
        p = &x + &p - &ball;
        let plane = project_hyperplane(&(&ball + &r));
        r = &ball + &r - &plane;
        // The hyperplane iterate alone can sit still while the correction
        // terms are still moving, so both iterates and their gap must settle.
        let change = (&plane - &x)
            .amax()
            .max((&ball - &prev_ball).amax())
            .max((&ball - &plane).amax());
        x = plane;
        prev_ball = ball;
        if change < tol {
            return Ok(x);
        }
    }
    Err(SolverError::DykstraNoConvergence(max_iter))
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn top_eigenvalue(gram: &DMatrix<f64>) -> f64 {
    let n = gram.nrows();
    // An irregular start: symmetric ones-like vectors are orthogonal to the
    // top eigenvector of row-centred designs.
    let mut v = DVector::from_fn(n, |i, _| ((i as f64 + 1.0) * 0.754_877_666_2).fract() - 0.5);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        let gv = gram * &v;
        let next = v.dot(&gv);
        let norm = gv.norm();
        if norm == 0.0 {
            // Unlucky start in the null space; the trace bounds lambda_max.
            return gram.trace().max(0.0);
        }
        v = gv / norm;
        let done = (next - lambda).abs() <= POWER_TOL * next.abs();
        lambda = next;
        if done {
            break;
        }
    }
    lambda.max((gram * &v).norm())
}

fn sum_squares(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> f64 {
    (y - x * w).norm_squared()
}

/// Minimizes `|y - X w|^2` over `w` in `c`.
pub fn constrained_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    c: ConstraintSet,
    opts: &SolverOptions,
) -> Result<WeightFit, SolverError> {
    let (m, n) = x.shape();
    if m == 0 || n == 0 {
        return Err(SolverError::Empty);
    }
    if y.len() != m {
        return Err(SolverError::Dimension(format!(
            "X has {m} rows, y has {}",
            y.len()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite);
    }
    c.validate()?;

    let w = c.project(&DVector::zeros(n))?;
    if c == ConstraintSet::FixedEqual {
        return Ok(WeightFit {
            objective: sum_squares(x, y, &w),
            w,
            intercept: None,
            iterations: 0,
            converged: true,
            constraint: c,
        });
    }

    // On sets where the weights sum to one, subtracting the cross-sectional
    // mean from every row of X and from y leaves the objective unchanged and
    // removes the common component that otherwise dominates the step size.
    let (w, iterations, converged) = if c.sums_to_one() {
        let avg = x.column_mean();
        let mut xc = x.clone();
        for mut col in xc.column_iter_mut() {
            col -= &avg;
        }
        fista(&xc, &(y - &avg), c, w, opts)?
    } else {
        fista(x, y, c, w, opts)?
    };
    Ok(WeightFit {
        objective: sum_squares(x, y, &w),
        w,
        intercept: None,
        iterations,
        converged,
        constraint: c,
    })
}

/// FISTA with objective restart from the feasible point `w`.
fn fista(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    c: ConstraintSet,
    mut w: DVector<f64>,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, usize, bool), SolverError> {
    let m = x.nrows();
    let mut f = sum_squares(x, y, &w);
    let xt = x.transpose();
    let gram = &xt * x * 2.0;
    let xty = &xt * y * 2.0;
    let mut lipschitz = LIPSCHITZ_SAFETY * top_eigenvalue(&gram);
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        // X is identically zero: every feasible point is optimal.
        return Ok((w, 0, true));
    }

    // Sum of squares at the rounding level of the residuals themselves.
    let floor = 4.0 * m as f64 * (f64::EPSILON * (1.0 + y.amax())).powi(2);
    let mut momentum = w.clone();
    let mut t = 1.0_f64;
    let mut momentum_free = true;
    let mut stalled = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let grad = &gram * &momentum - &xty;
        let candidate = c.project(&(&momentum - grad / lipschitz))?;
        let f_new = sum_squares(x, y, &candidate);
        let slack = 1e-14 * f.max(floor);
        if f_new > f + slack {
            // A plain projected-gradient step cannot increase the objective
            // with a valid step size, so an increase from a momentum-free
            // point means L was underestimated.
            if momentum_free {
                lipschitz *= 2.0;
            }
            momentum = w.clone();
            t = 1.0;
            momentum_free = true;
            stalled = 0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        momentum = &candidate + (&candidate - &w) * ((t - 1.0) / t_next);
        momentum_free = false;
        t = t_next;
        let rel = (f - f_new).max(0.0) / f.max(floor);
        w = candidate;
        f = f_new;
        if rel < opts.tol || f <= floor {
            stalled += 1;
            if stalled >= STALL_WINDOW {
                converged = true;
                break;
            }
        } else {
            stalled = 0;
        }
    }
    Ok((w, iterations, converged))
}
