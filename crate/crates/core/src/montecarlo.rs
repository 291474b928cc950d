//! Factor-model data generating processes calibrated to a panel, and the
//! coverage harness that runs cross-fitting over simulated panels.
//!
//! Controls follow
//!
//! ```text
//! Y_it = theta_it + lambda_i' f_t + eta_it,   f_t ~ N(0, Sigma_f)
//! eta_it = rho_i eta_i,t-1 + eps_it,          eps_it ~ N(0, sigma_i^2)
//! ```
//!
//! and the treated unit is `mu + X_t' w + u_t + tau 1{t > T0}` with AR(1)
//! errors `u_t = rho_u u_t-1 + v_t`. Both AR processes start from their
//! stationary distribution.

use std::fmt::Write as _;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector, Matrix4, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{fit_weights, Method};
use crate::inference::{crossfit_split, sig6, EstimationConfig, InferenceError};
use crate::panel::{Panel, PanelError};
use crate::solvers::{SolverError, SolverOptions};

pub const N_FACTORS: usize = 4;
const RHO_CLAMP: f64 = 0.99;

#[derive(Debug, Error)]
pub enum MonteCarloError {
    #[error("invalid DGP configuration: {0}")]
    Config(String),
    #[error("unknown DGP id `{0}` (expected 1.1-1.5 or 2.1-2.9)")]
    UnknownDgp(String),
    #[error("calibration needs at least {N_FACTORS} non-degenerate factors: {0}")]
    DegenerateCovariance(String),
    #[error("calibration fit failed: {0}")]
    Fit(#[from] SolverError),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Intercept and weights of the treated-unit equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuW {
    pub mu: f64,
    pub w: Vec<f64>,
}

/// Least-squares line `a + b t` through the control-average series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearTrend {
    pub a: f64,
    pub b: f64,
}

impl LinearTrend {
    pub fn at(&self, t: usize) -> f64 {
        self.a + self.b * t as f64
    }
}

/// Non-stationary component `theta_it` of the control outcomes.
/// Unit indices `i` are 1-based; time runs `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrendSpec {
    None,
    /// `theta_it = a + b t`.
    CommonLinear { a: f64, b: f64 },
    /// `theta_it = theta_t`, a Gaussian random walk started at 0.
    CommonRandomWalk { sd: f64 },
    /// Common line, doubled for unit 1.
    LinearSparse { a: f64, b: f64 },
    /// Common walk plus an independent second walk on unit 1.
    RwSparse { sd: f64 },
    /// `theta_it = i + i t`.
    HeterogeneousLinear,
    /// `theta_it = i + theta_i,t-1 + xi_it`.
    HeterogeneousDriftRw { sd: f64 },
    /// Common line, doubled for units `i > 8`.
    NonSparseLinear { a: f64, b: f64 },
}

impl TrendSpec {
    fn validate(&self) -> Result<(), MonteCarloError> {
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        let ok = match *self {
            TrendSpec::None | TrendSpec::HeterogeneousLinear => true,
            TrendSpec::CommonLinear { a, b }
            | TrendSpec::LinearSparse { a, b }
            | TrendSpec::NonSparseLinear { a, b } => finite(&[a, b]),
            TrendSpec::CommonRandomWalk { sd }
            | TrendSpec::RwSparse { sd }
            | TrendSpec::HeterogeneousDriftRw { sd } => sd > 0.0 && sd.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(MonteCarloError::Config(format!("bad trend parameters {self:?}")))
        }
    }

    /// `T x N` matrix of `theta_it`; random walks draw from `rng`.
    fn realize<R: Rng>(&self, t_len: usize, n: usize, rng: &mut R) -> DMatrix<f64> {
        let line = |a: f64, b: f64| LinearTrend { a, b };
        let walk = |rng: &mut R, sd: f64| {
            let mut level = 0.0;
            (0..t_len)
                .map(|_| {
                    level += sd * rng.sample::<f64, _>(StandardNormal);
                    level
                })
                .collect::<Vec<f64>>()
        };
        match *self {
            TrendSpec::None => DMatrix::zeros(t_len, n),
            TrendSpec::CommonLinear { a, b } => {
                DMatrix::from_fn(t_len, n, |t, _| line(a, b).at(t + 1))
            }
            TrendSpec::LinearSparse { a, b } => DMatrix::from_fn(t_len, n, |t, i| {
                let p = line(a, b).at(t + 1);
                if i == 0 {
                    2.0 * p
                } else {
                    p
                }
            }),
            TrendSpec::NonSparseLinear { a, b } => DMatrix::from_fn(t_len, n, |t, i| {
                let p = line(a, b).at(t + 1);
                if i + 1 > 8 {
                    2.0 * p
                } else {
                    p
                }
            }),
            TrendSpec::CommonRandomWalk { sd } => {
                let common = walk(rng, sd);
                DMatrix::from_fn(t_len, n, |t, _| common[t])
            }
            TrendSpec::RwSparse { sd } => {
                let common = walk(rng, sd);
                let extra = walk(rng, sd);
                DMatrix::from_fn(t_len, n, |t, i| if i == 0 { common[t] + extra[t] } else { common[t] })
            }
            TrendSpec::HeterogeneousLinear => DMatrix::from_fn(t_len, n, |t, i| {
                let unit = (i + 1) as f64;
                unit + unit * (t + 1) as f64
            }),
            TrendSpec::HeterogeneousDriftRw { sd } => {
                let mut theta = DMatrix::zeros(t_len, n);
                for i in 0..n {
                    let drift = (i + 1) as f64;
                    let mut level = 0.0;
                    for t in 0..t_len {
                        level += drift + sd * rng.sample::<f64, _>(StandardNormal);
                        theta[(t, i)] = level;
                    }
                }
                theta
            }
        }
    }
}

/// Which `(mu, w)` the treated equation uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MuWSpec {
    /// `(0, w_SC)` from the calibration.
    ScFit,
    /// `(mu_CL, w_CL)` from the calibration.
    ClFit,
    /// `(1, (1/N, ..., 1/N))`.
    DidLike,
    /// `(-1, (-1, 0, ..., 0))`.
    UltraSparse,
    /// `(-1, -(1/N, 2/N, ..., N/N))`.
    Misspec,
    /// `(0, (1.25, -0.25, 0, ..., 0))`.
    TwoPoint,
    Custom(MuW),
}

impl MuWSpec {
    pub fn resolve(&self, dgp: &DgpConfig) -> MuW {
        let n = dgp.n_units;
        let nf = n as f64;
        match self {
            MuWSpec::ScFit => dgp.sc_fit.clone(),
            MuWSpec::ClFit => dgp.cl_fit.clone(),
            MuWSpec::DidLike => MuW {
                mu: 1.0,
                w: vec![1.0 / nf; n],
            },
            MuWSpec::UltraSparse => {
                let mut w = vec![0.0; n];
                w[0] = -1.0;
                MuW { mu: -1.0, w }
            }
            MuWSpec::Misspec => MuW {
                mu: -1.0,
                w: (1..=n).map(|i| -(i as f64) / nf).collect(),
            },
            MuWSpec::TwoPoint => {
                let mut w = vec![0.0; n];
                w[0] = 1.25;
                if n > 1 {
                    w[1] = -0.25;
                }
                MuW { mu: 0.0, w }
            }
            MuWSpec::Custom(muw) => muw.clone(),
        }
    }
}

/// Calibrated factor-model parameters. Round-trips through JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n_units: usize,
    pub t0: usize,
    pub t1: usize,
    pub loadings: Vec<[f64; N_FACTORS]>,
    pub sigma_f: [[f64; N_FACTORS]; N_FACTORS],
    pub ar_rho: Vec<f64>,
    pub ar_sigma: Vec<f64>,
    pub rho_u: f64,
    pub sigma_v: f64,
    pub sc_fit: MuW,
    pub cl_fit: MuW,
    pub trend_line: LinearTrend,
    pub trend: TrendSpec,
    pub effect: f64,
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), MonteCarloError> {
        let n = self.n_units;
        let bad = |msg: String| Err(MonteCarloError::Config(msg));
        if n == 0 {
            return bad("no control units".into());
        }
        if self.t0 < 2 || self.t1 == 0 {
            return bad(format!("need t0 >= 2 and t1 >= 1 (got {}, {})", self.t0, self.t1));
        }
        if self.loadings.len() != n || self.ar_rho.len() != n || self.ar_sigma.len() != n {
            return bad("loadings, ar_rho and ar_sigma must have one entry per unit".into());
        }
        if self.sc_fit.w.len() != n || self.cl_fit.w.len() != n {
            return bad("calibrated weights must have one entry per unit".into());
        }
        if self.ar_rho.iter().chain([&self.rho_u]).any(|r| !(r.abs() < 1.0)) {
            return bad("AR coefficients must lie in (-1, 1)".into());
        }
        if self.ar_sigma.iter().chain([&self.sigma_v]).any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("innovation SDs must be finite and non-negative".into());
        }
        let all_finite = self.loadings.iter().flatten().all(|v| v.is_finite())
            && self.sigma_f.iter().flatten().all(|v| v.is_finite())
            && self.effect.is_finite();
        if !all_finite {
            return bad("non-finite parameter".into());
        }
        self.trend.validate()?;
        factor_sqrt(&self.sigma_f)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, MonteCarloError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, MonteCarloError> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn periods(&self) -> usize {
        self.t0 + self.t1
    }
}

/// Symmetric square root of a PSD covariance.
fn factor_sqrt(sigma: &[[f64; N_FACTORS]; N_FACTORS]) -> Result<Matrix4<f64>, MonteCarloError> {
    let m = Matrix4::from_fn(|i, j| sigma[i][j]);
    if (m - m.transpose()).amax() > 1e-9 * (1.0 + m.amax()) {
        return Err(MonteCarloError::Config("sigma_f is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(m);
    let floor = -1e-10 * (1.0 + m.amax());
    if eig.eigenvalues.iter().any(|&l| l < floor) {
        return Err(MonteCarloError::Config("sigma_f is not positive semidefinite".into()));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(eig.eigenvectors * Matrix4::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

fn ar1_path<R: Rng>(rng: &mut R, len: usize, rho: f64, sd: f64) -> Vec<f64> {
    let stationary_sd = sd / (1.0 - rho * rho).sqrt();
    let mut path = Vec::with_capacity(len);
    let mut level = stationary_sd * rng.sample::<f64, _>(StandardNormal);
    for t in 0..len {
        if t > 0 {
            level = rho * level + sd * rng.sample::<f64, _>(StandardNormal);
        }
        path.push(level);
    }
    path
}

/// Simulates one panel; the treated unit is column 0.
pub fn generate_panel(dgp: &DgpConfig, spec: &MuWSpec, seed: u64) -> Result<Panel, MonteCarloError> {
    generate_panel_with(dgp, spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn generate_panel_with<R: Rng>(dgp: &DgpConfig, spec: &MuWSpec, rng: &mut R) -> Result<Panel, MonteCarloError> {
    dgp.validate()?;
    let muw = spec.resolve(dgp);
    if muw.w.len() != dgp.n_units {
        return Err(MonteCarloError::Config("weight vector length differs from n_units".into()));
    }
    let (t_len, n) = (dgp.periods(), dgp.n_units);
    let root = factor_sqrt(&dgp.sigma_f)?;

    let mut controls = DMatrix::zeros(t_len, n);
    for t in 0..t_len {
        let z = nalgebra::Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let f = root * z;
        for i in 0..n {
            controls[(t, i)] = nalgebra::Vector4::from(dgp.loadings[i]).dot(&f);
        }
    }
    for i in 0..n {
        let eta = ar1_path(rng, t_len, dgp.ar_rho[i], dgp.ar_sigma[i]);
        for (t, e) in eta.into_iter().enumerate() {
            controls[(t, i)] += e;
        }
    }
    let u = ar1_path(rng, t_len, dgp.rho_u, dgp.sigma_v);
    controls += dgp.trend.realize(t_len, n, rng);

    let w = DVector::from_vec(muw.w);
    let mut treated = &controls * &w;
    for t in 0..t_len {
        treated[t] += muw.mu + u[t] + if t >= dgp.t0 { dgp.effect } else { 0.0 };
    }
    Ok(Panel::from_columns(&treated, &controls, dgp.t0)?)
}

/// Result of [`calibrate`] with any AR clamping notices.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub config: DgpConfig,
    pub warnings: Vec<String>,
}

impl Calibration {
    pub fn median_rho(&self) -> f64 {
        median(&self.config.ar_rho)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// OLS of `x_t` on `(1, x_{t-1})`; returns the slope and innovation SD.
fn fit_ar1(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n < 3 {
        return (0.0, 0.0);
    }
    let lag = &x[..n - 1];
    let cur = &x[1..];
    let m = lag.len() as f64;
    let lag_mean = lag.iter().sum::<f64>() / m;
    let cur_mean = cur.iter().sum::<f64>() / m;
    let sxx: f64 = lag.iter().map(|a| (a - lag_mean).powi(2)).sum();
    let sxy: f64 = lag.iter().zip(cur).map(|(a, b)| (a - lag_mean) * (b - cur_mean)).sum();
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if sxx <= 1e-24 * (1.0 + scale * scale) * m {
        return (0.0, 0.0);
    }
    let rho = sxy / sxx;
    let c = cur_mean - rho * lag_mean;
    let sse: f64 = lag.iter().zip(cur).map(|(a, b)| (b - c - rho * a).powi(2)).sum();
    let dof = (m - 2.0).max(1.0);
    (rho, (sse / dof).sqrt())
}

fn clamp_rho(rho: f64, what: &str, warnings: &mut Vec<String>) -> f64 {
    if rho.abs() >= 1.0 {
        let clamped = RHO_CLAMP.copysign(rho);
        let msg = format!("{what}: AR(1) estimate {rho:.4} clamped to {clamped}");
        warn!("{msg}");
        warnings.push(msg);
        clamped
    } else {
        rho
    }
}

/// Fits the factor-model DGP to a panel.
///
/// Every unit has the contemporaneous control average subtracted. Four
/// principal components of the (column-centred) de-trended controls serve
/// as factors, loadings come from least squares on them, and per-unit AR(1)
/// fits on what is left give `rho_i, sigma_i`. SC and CL are fitted on the
/// de-trended pre-period; the SC residual supplies `rho_u, sigma_v`. The
/// trend line is fitted to the raw control average over all periods.
pub fn calibrate(panel: &Panel) -> Result<Calibration, MonteCarloError> {
    let n = panel.n_controls();
    let t_len = panel.periods();
    let t0 = panel.t0();
    if n < N_FACTORS + 1 {
        return Err(MonteCarloError::Config(format!(
            "calibration needs at least {} controls, panel has {n}",
            N_FACTORS + 1
        )));
    }
    if t_len < 10 {
        return Err(MonteCarloError::Config(format!("calibration needs T >= 10, panel has {t_len}")));
    }
    let controls = panel.controls();
    let treated = panel.treated();
    let avg: DVector<f64> = controls.column_mean();

    let mut detrended = controls.clone();
    for mut col in detrended.column_iter_mut() {
        col -= &avg;
    }
    let detrended_treated = &treated - &avg;

    let mut centred = detrended.clone();
    for mut col in centred.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }

    let gram = centred.transpose() * &centred;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    let fourth = eig.eigenvalues[order[N_FACTORS - 1]];
    if !(top > 0.0) || fourth <= 1e-12 * top {
        return Err(MonteCarloError::DegenerateCovariance(format!(
            "eigenvalue {} of {top:e} is {fourth:e}",
            N_FACTORS
        )));
    }
    let basis = DMatrix::from_fn(n, N_FACTORS, |i, j| eig.eigenvectors[(i, order[j])]);
    let factors = &centred * &basis;

    let ftf = factors.transpose() * &factors;
    let chol = ftf
        .clone()
        .cholesky()
        .ok_or_else(|| MonteCarloError::DegenerateCovariance("factor Gram matrix is singular".into()))?;
    let loadings_t = chol.solve(&(factors.transpose() * &centred));
    let residual = &centred - &factors * &loadings_t;

    let denom = (t_len - 1) as f64;
    let cov = ftf / denom;
    let mut sigma_f = [[0.0; N_FACTORS]; N_FACTORS];
    for (i, row) in sigma_f.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
        }
    }
    let loadings = (0..n)
        .map(|i| std::array::from_fn(|j| loadings_t[(j, i)]))
        .collect();

    let mut warnings = Vec::new();
    let mut ar_rho = Vec::with_capacity(n);
    let mut ar_sigma = Vec::with_capacity(n);
    for (i, col) in residual.column_iter().enumerate() {
        let series: Vec<f64> = col.iter().copied().collect();
        let (rho, sd) = fit_ar1(&series);
        let label = format!("unit {}", i + 1);
        ar_rho.push(clamp_rho(rho, &label, &mut warnings));
        ar_sigma.push(sd);
    }

    let x_pre = detrended.rows(0, t0).into_owned();
    let y_pre = detrended_treated.rows(0, t0).into_owned();
    let opts = SolverOptions::default();
    let sc = fit_weights(Method::Sc, &x_pre, &y_pre, 1.0, &opts)?;
    let cl = fit_weights(Method::Cl, &x_pre, &y_pre, Method::Cl.default_q(), &opts)?;
    let u: Vec<f64> = (&y_pre - &x_pre * &sc.w).iter().copied().collect();
    let (rho_u, sigma_v) = fit_ar1(&u);
    let rho_u = clamp_rho(rho_u, "treated error", &mut warnings);

    let trend_line = fit_line(&avg);

    let config = DgpConfig {
        n_units: n,
        t0,
        t1: panel.t1(),
        loadings,
        sigma_f,
        ar_rho,
        ar_sigma,
        rho_u,
        sigma_v,
        sc_fit: MuW {
            mu: 0.0,
            w: sc.w.iter().copied().collect(),
        },
        cl_fit: MuW {
            mu: cl.intercept.unwrap_or(0.0),
            w: cl.w.iter().copied().collect(),
        },
        trend_line,
        trend: TrendSpec::None,
        effect: 0.0,
    };
    Ok(Calibration { config, warnings })
}

/// Least-squares line through `y_t` at `t = 1..=T`.
fn fit_line(y: &DVector<f64>) -> LinearTrend {
    let n = y.len() as f64;
    let t_mean = (n + 1.0) / 2.0;
    let y_mean = y.mean();
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, v) in y.iter().enumerate() {
        let dt = (i + 1) as f64 - t_mean;
        sxx += dt * dt;
        sxy += dt * (v - y_mean);
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    LinearTrend {
        a: y_mean - b * t_mean,
        b,
    }
}

/// Simulation designs 1.1-1.5 (stationary) and 2.1-2.9 (non-stationary).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DgpId {
    pub major: u8,
    pub minor: u8,
}

impl DgpId {
    pub fn all() -> impl Iterator<Item = DgpId> {
        (1..=5)
            .map(|m| DgpId { major: 1, minor: m })
            .chain((1..=9).map(|m| DgpId { major: 2, minor: m }))
    }

    /// Applies this design to a calibrated configuration.
    pub fn design(&self, base: &DgpConfig) -> (DgpConfig, MuWSpec) {
        let LinearTrend { a, b } = base.trend_line;
        let (trend, spec) = match (self.major, self.minor) {
            (1, 1) => (TrendSpec::None, MuWSpec::ScFit),
            (1, 2) => (TrendSpec::None, MuWSpec::ClFit),
            (1, 3) => (TrendSpec::None, MuWSpec::DidLike),
            (1, 4) => (TrendSpec::None, MuWSpec::UltraSparse),
            (1, _) => (TrendSpec::None, MuWSpec::Misspec),
            (_, 1) => (TrendSpec::CommonLinear { a, b }, MuWSpec::ScFit),
            (_, 2) => (TrendSpec::CommonRandomWalk { sd: 1.0 }, MuWSpec::ScFit),
            (_, 3) => (TrendSpec::LinearSparse { a, b }, MuWSpec::ScFit),
            (_, 4) => (TrendSpec::RwSparse { sd: 1.0 }, MuWSpec::ScFit),
            (_, 5) => (TrendSpec::HeterogeneousLinear, MuWSpec::ScFit),
            (_, 6) => (TrendSpec::HeterogeneousDriftRw { sd: 1.0 }, MuWSpec::ScFit),
            (_, 7) => (TrendSpec::NonSparseLinear { a, b }, MuWSpec::ScFit),
            (_, 8) => (TrendSpec::CommonLinear { a, b }, MuWSpec::TwoPoint),
            (_, _) => (TrendSpec::CommonLinear { a, b }, MuWSpec::Misspec),
        };
        let mut cfg = base.clone();
        cfg.trend = trend;
        cfg.effect = 0.0;
        (cfg, spec)
    }
}

impl FromStr for DgpId {
    type Err = MonteCarloError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || MonteCarloError::UnknownDgp(s.to_string());
        let (major, minor) = s.trim().split_once('.').ok_or_else(unknown)?;
        let id = DgpId {
            major: major.parse().map_err(|_| unknown())?,
            minor: minor.parse().map_err(|_| unknown())?,
        };
        match id {
            DgpId { major: 1, minor: 1..=5 } | DgpId { major: 2, minor: 1..=9 } => Ok(id),
            _ => Err(unknown()),
        }
    }
}

impl std::fmt::Display for DgpId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.major, self.minor)
    }
}

/// One coverage campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRequest {
    /// Label written to the `dgp` column.
    pub label: String,
    pub methods: Vec<Method>,
    pub k_values: Vec<usize>,
    pub reps: usize,
    pub alpha: f64,
    pub master_seed: u64,
    /// l1 radius override; method defaults otherwise.
    pub q: Option<f64>,
    pub solver: SolverOptions,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    pub keep_draws: bool,
}

impl CoverageRequest {
    pub fn new(label: impl Into<String>, methods: Vec<Method>, k_values: Vec<usize>, reps: usize) -> Self {
        Self {
            label: label.into(),
            methods,
            k_values,
            reps,
            alpha: 0.10,
            master_seed: 0,
            q: None,
            solver: SolverOptions::default(),
            threads: None,
            keep_draws: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub dgp: String,
    pub method: Method,
    pub k: usize,
    /// Fraction of usable replications whose interval covers the truth;
    /// `None` when no replication was usable.
    pub coverage: Option<f64>,
    pub avg_length: Option<f64>,
    pub reps: usize,
    pub degenerate: usize,
    pub failed: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoverageTable {
    pub rows: Vec<CoverageRow>,
}

pub const COVERAGE_HEADER: &str = "dgp,method,K,coverage,avg_length,reps,degenerate,seed";

impl CoverageTable {
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| sig6(v).to_string());
        let mut out = String::from(COVERAGE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.dgp,
                r.method,
                r.k,
                fmt(r.coverage),
                fmt(r.avg_length),
                r.reps,
                r.degenerate,
                r.seed
            );
        }
        out
    }

    pub fn row(&self, method: Method, k: usize) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.method == method && r.k == k)
    }
}

/// Per-replication outcome for one `(method, K)` cell.
#[derive(Debug, Clone, PartialEq)]
pub enum RepOutcome {
    Estimated { tau_hat: f64, ci: (f64, f64) },
    Degenerate { tau_hat: f64 },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepDraw {
    pub rep: usize,
    pub method: Method,
    pub k: usize,
    pub outcome: RepOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRun {
    pub table: CoverageTable,
    /// Every replication's outcome, when requested.
    pub draws: Vec<RepDraw>,
}

/// Random stream for replication `rep`: the master seed keys a ChaCha
/// generator and the replication index selects its stream, so streams never
/// overlap and do not depend on scheduling.
pub fn rep_rng(master_seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(rep as u64);
    rng
}

fn run_rep(
    dgp: &DgpConfig,
    spec: &MuWSpec,
    req: &CoverageRequest,
    rep: usize,
) -> Result<Vec<RepOutcome>, MonteCarloError> {
    let panel = generate_panel_with(dgp, spec, &mut rep_rng(req.master_seed, rep))?;
    let split = panel.split_pre_post();
    let mut out = Vec::with_capacity(req.methods.len() * req.k_values.len());
    for &method in &req.methods {
        for &k in &req.k_values {
            let mut cfg = EstimationConfig::new(method, k).with_alpha(req.alpha).with_tau0(dgp.effect);
            cfg.q = req.q;
            cfg.solver = req.solver;
            out.push(match crossfit_split(&split, &cfg) {
                Ok(res) => RepOutcome::Estimated {
                    tau_hat: res.tau_hat,
                    ci: res.ci,
                },
                Err(InferenceError::DegenerateVariance(d)) => RepOutcome::Degenerate { tau_hat: d.tau_hat },
                Err(e) => RepOutcome::Failed(e.to_string()),
            });
        }
    }
    Ok(out)
}

/// Runs `reps` replications of the design and tabulates coverage and
/// average interval length per `(method, K)`.
pub fn run_coverage(dgp: &DgpConfig, spec: &MuWSpec, req: &CoverageRequest) -> Result<CoverageRun, MonteCarloError> {
    dgp.validate()?;
    if req.reps == 0 || req.methods.is_empty() || req.k_values.is_empty() {
        return Err(MonteCarloError::Config("need reps >= 1, a method and a K".into()));
    }
    if !(req.alpha > 0.0 && req.alpha < 1.0) {
        return Err(MonteCarloError::Config(format!("alpha = {} outside (0, 1)", req.alpha)));
    }
    if let Some(&k) = req.k_values.iter().find(|&&k| k < 2 || k > dgp.t0) {
        return Err(MonteCarloError::Config(format!("K = {k} must lie in [2, t0]")));
    }

    let work = || -> Result<Vec<Vec<RepOutcome>>, MonteCarloError> {
        (0..req.reps)
            .into_par_iter()
            .map(|rep| run_rep(dgp, spec, req, rep))
            .collect()
    };
    let per_rep = match req.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| MonteCarloError::Pool(e.to_string()))?
            .install(work)?,
        None => work()?,
    };

    let cells: Vec<(Method, usize)> = req
        .methods
        .iter()
        .flat_map(|&m| req.k_values.iter().map(move |&k| (m, k)))
        .collect();
    let truth = dgp.effect;
    let mut rows = Vec::with_capacity(cells.len());
    let mut draws = Vec::new();
    for (c, &(method, k)) in cells.iter().enumerate() {
        let (mut covered, mut used, mut length, mut degenerate, mut failed) = (0usize, 0usize, 0.0, 0usize, 0usize);
        for (rep, outcomes) in per_rep.iter().enumerate() {
            let outcome = &outcomes[c];
            match outcome {
                RepOutcome::Estimated { ci, .. } => {
                    used += 1;
                    length += ci.1 - ci.0;
                    if ci.0 <= truth && truth <= ci.1 {
                        covered += 1;
                    }
                }
                RepOutcome::Degenerate { .. } => degenerate += 1,
                RepOutcome::Failed(msg) => {
                    warn!("dgp {} {method} K={k} rep {rep}: {msg}", req.label);
                    failed += 1;
                }
            }
            if req.keep_draws {
                draws.push(RepDraw {
                    rep,
                    method,
                    k,
                    outcome: outcome.clone(),
                });
            }
        }
        rows.push(CoverageRow {
            dgp: req.label.clone(),
            method,
            k,
            coverage: (used > 0).then(|| covered as f64 / used as f64),
            avg_length: (used > 0).then(|| length / used as f64),
            reps: req.reps,
            degenerate,
            failed,
            seed: req.master_seed,
        });
    }
    Ok(CoverageRun {
        table: CoverageTable { rows },
        draws,
    })
}
