#![allow(dead_code)]

use crossfit_sc::inference::{build_blocks, CrossFitResult};
use crossfit_sc::montecarlo::{DgpConfig, LinearTrend, MuW, TrendSpec};
use crossfit_sc::solvers::{ConstraintSet, SolverOptions};
use crossfit_sc::{crossfit_att, EstimationConfig, Method, Panel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Small hand-built factor DGP with eight controls.
pub fn toy_dgp() -> DgpConfig {
    let n = 8;
    DgpConfig {
        n_units: n,
        t0: 15,
        t1: 28,
        loadings: (0..n)
            .map(|i| {
                let x = i as f64;
                [1.0, 0.4 - 0.1 * x, (x * 0.9).sin(), if i % 2 == 0 { 0.3 } else { -0.3 }]
            })
            .collect(),
        sigma_f: [
            [0.5, 0.1, 0.0, 0.0],
            [0.1, 0.3, 0.0, 0.0],
            [0.0, 0.0, 0.2, 0.0],
            [0.0, 0.0, 0.0, 0.1],
        ],
        ar_rho: vec![0.6, 0.5, 0.7, 0.4, 0.75, 0.55, 0.65, 0.5],
        ar_sigma: vec![0.1; n],
        rho_u: 0.6,
        sigma_v: 0.08,
        sc_fit: MuW {
            mu: 0.0,
            w: vec![0.4, 0.3, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0],
        },
        cl_fit: MuW {
            mu: 0.05,
            w: vec![0.5, -0.1, 0.3, 0.1, 0.0, 0.0, 0.0, 0.0],
        },
        trend_line: LinearTrend { a: 3.0, b: 0.1 },
        trend: TrendSpec::None,
        effect: 0.0,
    }
}

/// Random panel with a common factor structure plus noise.
pub fn random_panel<R: Rng>(rng: &mut R) -> Panel {
    let t0 = rng.random_range(6..=40);
    let t1 = rng.random_range(1..=30);
    let n = rng.random_range(2..=8);
    let t = t0 + t1;
    let f: Vec<f64> = (0..t).map(|_| normal(rng)).collect();
    let lam: Vec<f64> = (0..=n).map(|_| 1.0 + 0.5 * normal(rng)).collect();
    let level = 5.0 * normal(rng);
    let noise = 0.1 + rng.random::<f64>();
    let x = DMatrix::from_fn(t, n, |s, i| level + lam[i + 1] * f[s] + noise * normal(rng));
    let y = DVector::from_fn(t, |s, _| level + lam[0] * f[s] + noise * normal(rng));
    Panel::from_columns(&y, &x, t0).unwrap()
}

pub fn random_method<R: Rng>(rng: &mut R) -> Method {
    Method::ALL[rng.random_range(0..Method::ALL.len())]
}

fn rebuild(panel: &Panel, y: DVector<f64>, x: DMatrix<f64>) -> Panel {
    Panel::from_columns(&y, &x, panel.t0()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn fit(panel: &Panel, cfg: &EstimationConfig) -> Result<CrossFitResult, String> {
    crossfit_att(panel, cfg).map_err(|e| e.to_string())
}

/// Checks the structural invariants of one cross-fit:
/// effect shifts, global translations, treated-only shifts (methods with an
/// intercept), CI/test duality and the block layout.
pub fn check_invariants(panel: &Panel, method: Method, k: usize, alpha: f64, c: f64) -> Result<(), String> {
    let cfg = EstimationConfig::new(method, k).with_alpha(alpha);
    let base = fit(panel, &cfg)?;
    let y = panel.treated();
    let x = panel.controls();
    let t0 = panel.t0();

    // effect shift: post-period treated + c moves everything by exactly c
    let shifted_y = DVector::from_fn(y.len(), |s, _| y[s] + if s >= t0 { c } else { 0.0 });
    let shifted = fit(&rebuild(panel, shifted_y, x.clone()), &cfg)?;
    if !close(shifted.tau_hat, base.tau_hat + c, 1e-9)
        || !close(shifted.sigma_hat, base.sigma_hat, 1e-9)
        || !close(shifted.ci.0, base.ci.0 + c, 1e-9)
        || !close(shifted.ci.1, base.ci.1 + c, 1e-9)
    {
        return Err(format!("effect shift: {} vs {} + {c}", shifted.tau_hat, base.tau_hat));
    }

    // global translation of every unit leaves the estimate unchanged
    let translated = fit(&rebuild(panel, y.add_scalar(c), x.add_scalar(c)), &cfg)?;
    if !close(translated.tau_hat, base.tau_hat, 1e-6) || !close(translated.sigma_hat, base.sigma_hat, 1e-6) {
        return Err(format!("translation: {} vs {}", translated.tau_hat, base.tau_hat));
    }

    // a level shift of the treated unit is absorbed by the intercept
    if method.default_intercept() {
        let lifted = fit(&rebuild(panel, y.add_scalar(c), x.clone()), &cfg)?;
        if !close(lifted.tau_hat, base.tau_hat, 1e-6) {
            return Err(format!("intercept: {} vs {}", lifted.tau_hat, base.tau_hat));
        }
    }

    // the interval is exactly the set of nulls the test does not reject
    for (bound, label) in [(base.ci.0, "lower"), (base.ci.1, "upper")] {
        let at = fit(panel, &cfg.clone().with_tau0(bound))?;
        if (at.p_value - alpha).abs() > 1e-8 {
            return Err(format!("duality at {label} bound: p = {}", at.p_value));
        }
    }
    let inside = fit(panel, &cfg.clone().with_tau0(0.5 * (base.ci.0 + base.ci.1)))?;
    if !(inside.p_value > alpha) || (inside.p_value - 1.0).abs() > 1e-9 {
        return Err(format!("duality at centre: p = {}", inside.p_value));
    }

    // block layout
    let scheme = build_blocks(t0, panel.t1(), k).map_err(|e| e.to_string())?;
    let r = (t0 / k).min(panel.t1());
    if scheme.r != r || base.r != r || scheme.blocks.len() != k {
        return Err(format!("block length {} (expected {r})", scheme.r));
    }
    let mut seen = vec![false; t0];
    for (b, train) in scheme.blocks.iter().zip(&scheme.training) {
        if b.len() != r || b.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(format!("block {b:?} not consecutive of length {r}"));
        }
        for &s in b {
            if std::mem::replace(&mut seen[s], true) {
                return Err(format!("period {s} in two blocks"));
            }
        }
        let mut all: Vec<usize> = b.iter().chain(train).copied().collect();
        all.sort_unstable();
        if all != (0..t0).collect::<Vec<_>>() {
            return Err("training set is not the pre-period minus the block".into());
        }
    }
    Ok(())
}

/// `f(w) = |y - X w|^2` via the Gram matrix.
struct Quadratic {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
}

impl Quadratic {
    fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        Self {
            gram: x.transpose() * x,
            xty: x.transpose() * y,
            yty: y.dot(y),
        }
    }

    fn eval(&self, w: &[f64]) -> f64 {
        let n = w.len();
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += w[i] * self.gram[(i, j)] * w[j];
            }
        }
        let lin: f64 = (0..n).map(|i| w[i] * self.xty[i]).sum();
        quad - 2.0 * lin + self.yty
    }
}

/// Brute-force minimum of `|y - X w|^2` over a grid of feasible points
/// (`N <= 3`), `steps` points per unit of each free coordinate.
pub fn grid_minimum(x: &DMatrix<f64>, y: &DVector<f64>, set: ConstraintSet, steps: usize) -> f64 {
    let n = x.ncols();
    assert!(n <= 3);
    let f = Quadratic::new(x, y);
    let h = 1.0 / steps as f64;
    // grid points inside [lo, hi] plus the end point itself, never beyond it
    let range = |lo: f64, hi: f64| {
        let count = ((hi - lo) / h).floor().max(0.0) as usize;
        (0..=count).map(move |i| (lo + i as f64 * h).min(hi)).chain(std::iter::once(hi))
    };
    let mut best = f64::INFINITY;
    let mut consider = |w: &[f64]| best = best.min(f.eval(w));
    match set {
        ConstraintSet::FixedEqual => consider(&vec![1.0 / n as f64; n]),
        ConstraintSet::Simplex => match n {
            1 => consider(&[1.0]),
            2 => range(0.0, 1.0).for_each(|a| consider(&[a, 1.0 - a])),
            _ => {
                for a in range(0.0, 1.0) {
                    for b in range(0.0, 1.0 - a) {
                        consider(&[a, b, (1.0 - a - b).max(0.0)]);
                    }
                }
            }
        },
        ConstraintSet::L1Ball { q } => match n {
            1 => range(-q, q).for_each(|a| consider(&[a])),
            2 => {
                for a in range(-q, q) {
                    let rest = q - a.abs();
                    range(-rest, rest).for_each(|b| consider(&[a, b]));
                }
            }
            _ => {
                for a in range(-q, q) {
                    let ra = q - a.abs();
                    for b in range(-ra, ra) {
                        let rb = ra - b.abs();
                        range(-rb, rb).for_each(|c| consider(&[a, b, c]));
                    }
                }
            }
        },
        ConstraintSet::L1BallAffine { q } => match n {
            1 => consider(&[1.0]),
            2 => range(-q, q).for_each(|a| {
                if a.abs() + (1.0 - a).abs() <= q + 1e-12 {
                    consider(&[a, 1.0 - a]);
                }
            }),
            _ => {
                for a in range(-q, q) {
                    for b in range(-q, q) {
                        let c = 1.0 - a - b;
                        if a.abs() + b.abs() + c.abs() <= q + 1e-12 {
                            consider(&[a, b, c]);
                        }
                    }
                }
            }
        },
    }
    best
}

pub fn solver_objective(x: &DMatrix<f64>, y: &DVector<f64>, set: ConstraintSet) -> f64 {
    let fit = crossfit_sc::solvers::constrained_least_squares(x, y, set, &SolverOptions::default()).unwrap();
    (y - x * &fit.w).norm_squared()
}
