//! Cross-fitting, the pooled ATT and its self-normalized t inference.
//!
//! The pre-treatment period is cut into `K` consecutive blocks of length
//! `r = min(floor(T0 / K), T1)`. Fold `k` fits weights on every pre-period
//! row outside block `H_k` and compares the mean post-period residual with
//! the mean residual on `H_k`:
//!
//! ```text
//! tau_k     = mean_{t > T0} e_t - mean_{t in H_k} e_t
//! tau_hat   = mean_k tau_k
//! sigma_hat = sqrt(1 + K r / T1) * sd(tau_1, ..., tau_K)
//! T_K       = sqrt(K) (tau_hat - tau0) / sigma_hat  ~  t(K - 1)
//! ```

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::estimators::{fit_weights_with_intercept, Method};
use crate::panel::{Panel, PanelSplit};
use crate::solvers::{SolverError, SolverOptions, WeightFit};
use crate::special::{t_cdf, t_quantile, DistributionError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: SolverError },
    #[error("fold estimates have zero spread (tau_hat = {}); the t-statistic is undefined", .0.tau_hat)]
    DegenerateVariance(Box<DegenerateFit>),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// What is still known when the fold estimates do not vary.
#[derive(Debug, Clone, PartialEq)]
pub struct DegenerateFit {
    pub method: Method,
    pub k: usize,
    pub r: usize,
    pub alpha: f64,
    pub tau0: f64,
    pub tau_k: Vec<f64>,
    pub tau_hat: f64,
}

/// Where the `K` evaluation blocks sit inside the pre-period.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockPlacement {
    #[default]
    First,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub method: Method,
    pub k_folds: usize,
    pub alpha: f64,
    /// l1 radius for CL/MCL; `None` picks the method default.
    pub q: Option<f64>,
    pub tau0: f64,
    /// Overrides the method's default intercept handling.
    pub intercept: Option<bool>,
    pub solver: SolverOptions,
    pub placement: BlockPlacement,
}

impl EstimationConfig {
    pub fn new(method: Method, k_folds: usize) -> Self {
        Self {
            method,
            k_folds,
            alpha: 0.10,
            q: None,
            tau0: 0.0,
            intercept: None,
            solver: SolverOptions::default(),
            placement: BlockPlacement::First,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_q(mut self, q: f64) -> Self {
        self.q = Some(q);
        self
    }

    pub fn with_tau0(mut self, tau0: f64) -> Self {
        self.tau0 = tau0;
        self
    }

    pub fn q(&self) -> f64 {
        self.q.unwrap_or_else(|| self.method.default_q())
    }

    pub fn intercept(&self) -> bool {
        self.intercept.unwrap_or_else(|| self.method.default_intercept())
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.k_folds < 2 {
            return Err(InferenceError::Config(format!(
                "K = {} but at least 2 folds are needed",
                self.k_folds
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(InferenceError::Config(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if !self.tau0.is_finite() {
            return Err(InferenceError::Config("tau0 must be finite".into()));
        }
        let q = self.q();
        match self.method {
            Method::Cl | Method::Mcl if !(q > 0.0 && q.is_finite()) => {
                Err(InferenceError::Config(format!("Q = {q} must be positive")))
            }
            Method::Mcl if q < 1.0 => Err(InferenceError::Config(format!(
                "Q = {q} < 1 leaves MCL with no feasible weights"
            ))),
            _ => Ok(()),
        }
    }
}

/// Evaluation blocks and their complementary training sets (0-based rows).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockScheme {
    pub k: usize,
    pub r: usize,
    pub t0: usize,
    pub blocks: Vec<Vec<usize>>,
    pub training: Vec<Vec<usize>>,
}

pub fn build_blocks(t0: usize, t1: usize, k: usize) -> Result<BlockScheme, InferenceError> {
    build_blocks_at(t0, t1, k, BlockPlacement::First)
}

pub fn build_blocks_at(
    t0: usize,
    t1: usize,
    k: usize,
    placement: BlockPlacement,
) -> Result<BlockScheme, InferenceError> {
    if k < 2 {
        return Err(InferenceError::Config(format!("K = {k} < 2")));
    }
    if t0 < k {
        return Err(InferenceError::Config(format!("T0 = {t0} is smaller than K = {k}")));
    }
    if t1 == 0 {
        return Err(InferenceError::Config("no post-treatment periods".into()));
    }
    let r = (t0 / k).min(t1);
    let offset = match placement {
        BlockPlacement::First => 0,
        BlockPlacement::Last => t0 - k * r,
    };
    let blocks: Vec<Vec<usize>> = (0..k)
        .map(|b| (offset + b * r..offset + (b + 1) * r).collect())
        .collect();
    let training = blocks
        .iter()
        .map(|h| (0..t0).filter(|t| !h.contains(t)).collect())
        .collect();
    Ok(BlockScheme {
        k,
        r,
        t0,
        blocks,
        training,
    })
}

/// Cross-fitted ATT with its t-statistic, p-value and confidence interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossFitResult {
    pub method: Method,
    pub k: usize,
    pub r: usize,
    pub t1: usize,
    pub alpha: f64,
    pub tau0: f64,
    pub tau_k: Vec<f64>,
    pub tau_hat: f64,
    pub sigma_hat: f64,
    pub t_stat: f64,
    pub df: u32,
    pub p_value: f64,
    pub ci: (f64, f64),
    pub folds: Vec<WeightFit>,
}

impl CrossFitResult {
    /// `T_K` against another null value.
    pub fn t_stat_at(&self, tau0: f64) -> f64 {
        (self.k as f64).sqrt() * (self.tau_hat - tau0) / self.sigma_hat
    }

    pub fn ci_length(&self) -> f64 {
        self.ci.1 - self.ci.0
    }

    pub fn covers(&self, tau: f64) -> bool {
        self.ci.0 <= tau && tau <= self.ci.1
    }

    pub fn report(&self) -> CrossFitReport {
        CrossFitReport {
            method: self.method.to_string(),
            k: self.k,
            r: self.r,
            alpha: sig6(self.alpha),
            tau0: sig6(self.tau0),
            att: sig6(self.tau_hat),
            tau_k: self.tau_k.iter().map(|&v| sig6(v)).collect(),
            sigma_hat: Some(sig6(self.sigma_hat)),
            t_stat: Some(sig6(self.t_stat)),
            df: self.df,
            p_value: Some(sig6(self.p_value)),
            ci: Some([sig6(self.ci.0), sig6(self.ci.1)]),
        }
    }
}

impl DegenerateFit {
    pub fn report(&self) -> CrossFitReport {
        CrossFitReport {
            method: self.method.to_string(),
            k: self.k,
            r: self.r,
            alpha: sig6(self.alpha),
            tau0: sig6(self.tau0),
            att: sig6(self.tau_hat),
            tau_k: self.tau_k.iter().map(|&v| sig6(v)).collect(),
            sigma_hat: None,
            t_stat: None,
            df: (self.k - 1) as u32,
            p_value: None,
            ci: None,
        }
    }
}

/// JSON form of a cross-fit, values rounded to 6 significant digits.
/// Variance-dependent fields are `null` when the fold estimates coincide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFitReport {
    pub method: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub r: usize,
    pub alpha: f64,
    pub tau0: f64,
    pub att: f64,
    pub tau_k: Vec<f64>,
    pub sigma_hat: Option<f64>,
    pub t_stat: Option<f64>,
    pub df: u32,
    pub p_value: Option<f64>,
    pub ci: Option<[f64; 2]>,
}

impl fmt::Display for CrossFitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let ci = self
            .ci
            .map_or_else(|| "-".to_string(), |[lo, hi]| format!("[{lo:.2}, {hi:.2}]"));
        writeln!(
            f,
            "{:<6} {:>3} {:>3} {:>9} {:>18} {:>10} {:>10} {:>10}",
            "method", "K", "r", "ATT", "CI", "sigma_hat", "t_stat", "p_value"
        )?;
        write!(
            f,
            "{:<6} {:>3} {:>3} {:>9.2} {:>18} {:>10} {:>10} {:>10}",
            self.method,
            self.k,
            self.r,
            self.att,
            ci,
            opt(self.sigma_hat),
            opt(self.t_stat),
            opt(self.p_value)
        )
    }
}

/// Rounds to 6 significant digits.
pub fn sig6(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.5e}").parse().unwrap_or(v)
}

/// Runs the full cross-fitting procedure on a panel.
pub fn crossfit_att(panel: &Panel, config: &EstimationConfig) -> Result<CrossFitResult, InferenceError> {
    crossfit_split(&panel.split_pre_post(), config)
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    m.select_rows(rows)
}

fn select(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&r| v[r]))
}

/// Spread below this fraction of the outcome scale counts as zero.
const DEGENERATE_REL: f64 = 1e-10;

/// Same as [`crossfit_att`] on an already split panel.
pub fn crossfit_split(split: &PanelSplit, config: &EstimationConfig) -> Result<CrossFitResult, InferenceError> {
    config.validate()?;
    let t0 = split.x_pre.nrows();
    let t1 = split.x_post.nrows();
    let scheme = build_blocks_at(t0, t1, config.k_folds, config.placement)?;
    let k = scheme.k;
    let q = config.q();
    let intercept = config.intercept();

    let mut tau_k = Vec::with_capacity(k);
    let mut folds = Vec::with_capacity(k);
    for (fold, (block, train)) in scheme.blocks.iter().zip(&scheme.training).enumerate() {
        let x_train = select_rows(&split.x_pre, train);
        let y_train = select(&split.y_pre, train);
        let fit = fit_weights_with_intercept(config.method, &x_train, &y_train, q, intercept, &config.solver)
            .map_err(|source| InferenceError::Fold { fold: fold + 1, source })?;
        tau_k.push(fold_effect(&fit, split, block));
        folds.push(fit);
    }

    let kf = k as f64;
    let tau_hat = tau_k.iter().sum::<f64>() / kf;
    let spread = (tau_k.iter().map(|t| (t - tau_hat).powi(2)).sum::<f64>() / (kf - 1.0)).sqrt();
    let scale = split
        .x_pre
        .iter()
        .chain(split.y_pre.iter())
        .chain(split.x_post.iter())
        .chain(split.y_post.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    if spread <= DEGENERATE_REL * (1.0 + scale) {
        return Err(InferenceError::DegenerateVariance(Box::new(DegenerateFit {
            method: config.method,
            k,
            r: scheme.r,
            alpha: config.alpha,
            tau0: config.tau0,
            tau_k,
            tau_hat,
        })));
    }
    let pooled = pool_folds(&tau_k, scheme.r, t1, config.alpha, config.tau0)?;

    Ok(CrossFitResult {
        method: config.method,
        k,
        r: scheme.r,
        t1,
        alpha: config.alpha,
        tau0: config.tau0,
        tau_k,
        tau_hat: pooled.tau_hat,
        sigma_hat: pooled.sigma_hat,
        t_stat: pooled.t_stat,
        df: pooled.df,
        p_value: pooled.p_value,
        ci: pooled.ci,
        folds,
    })
}

/// Pooled estimate and t inference from fold estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledFolds {
    pub tau_hat: f64,
    pub sigma_hat: f64,
    pub t_stat: f64,
    pub df: u32,
    pub p_value: f64,
    pub ci: (f64, f64),
}

pub fn pool_folds(
    tau_k: &[f64],
    r: usize,
    t1: usize,
    alpha: f64,
    tau0: f64,
) -> Result<PooledFolds, InferenceError> {
    let k = tau_k.len();
    if k < 2 {
        return Err(InferenceError::Config(format!("K = {k} < 2")));
    }
    let kf = k as f64;
    let tau_hat = tau_k.iter().sum::<f64>() / kf;
    let spread = (tau_k.iter().map(|t| (t - tau_hat).powi(2)).sum::<f64>() / (kf - 1.0)).sqrt();
    let sigma_hat = (1.0 + kf * r as f64 / t1 as f64).sqrt() * spread;
    let df = (k - 1) as u32;
    let t_stat = kf.sqrt() * (tau_hat - tau0) / sigma_hat;
    let p_value = (2.0 * (1.0 - t_cdf(t_stat.abs(), df)?)).clamp(0.0, 1.0);
    let half = t_quantile(1.0 - alpha / 2.0, df)? * sigma_hat / kf.sqrt();
    Ok(PooledFolds {
        tau_hat,
        sigma_hat,
        t_stat,
        df,
        p_value,
        ci: (tau_hat - half, tau_hat + half),
    })
}

/// Post-period mean residual minus held-out block mean residual.
fn fold_effect(fit: &WeightFit, split: &PanelSplit, block: &[usize]) -> f64 {
    let post = (&split.y_post - &split.x_post * &fit.w).mean();
    let held_out = block
        .iter()
        .map(|&t| split.y_pre[t] - (split.x_pre.row(t) * &fit.w)[0])
        .sum::<f64>()
        / block.len() as f64;
    // The intercept enters both means and cancels.
    post - held_out
}

/// `g_{c0,K}` from the limiting fold covariance.
pub fn g_factor(c0: f64, k: usize) -> f64 {
    let kf = k as f64;
    if c0 < 1.0 {
        kf
    } else if c0 <= kf {
        kf / c0
    } else {
        1.0
    }
}

/// Limiting variance of `sqrt(min(T0, T1)) (tau_hat - tau)` for long-run
/// variance `sigma2`: `(min(c0, 1) + g / K) sigma2`.
pub fn limiting_variance(c0: f64, k: usize, sigma2: f64) -> f64 {
    (c0.min(1.0) + g_factor(c0, k) / k as f64) * sigma2
}

/// Limiting expected length of the scaled confidence interval,
/// `C t_{K-1}(1 - alpha/2) sqrt(1/(K-1)) Gamma(K/2) / Gamma((K-1)/2)`
/// with `C = 2 sqrt(2) sqrt(1 + c0) sigma`.
pub fn expected_ci_length(k: usize, alpha: f64, c0: f64, sigma: f64) -> Result<f64, InferenceError> {
    if k < 2 {
        return Err(InferenceError::Config(format!("K = {k} < 2")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InferenceError::Config(format!("alpha = {alpha} outside (0, 1)")));
    }
    if !(c0 >= 0.0 && c0.is_finite()) {
        return Err(InferenceError::Config(format!("c0 = {c0} must be non-negative")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(InferenceError::Config(format!("sigma = {sigma} must be positive")));
    }
    let kf = k as f64;
    let c = 2.0 * std::f64::consts::SQRT_2 * (1.0 + c0).sqrt() * sigma;
    let gamma_ratio = (ln_gamma(kf / 2.0) - ln_gamma((kf - 1.0) / 2.0)).exp();
    let t = t_quantile(1.0 - alpha / 2.0, (k - 1) as u32)?;
    Ok(c * t * (1.0 / (kf - 1.0)).sqrt() * gamma_ratio)
}

/// Block t-statistic for the Gaussian location model: means over `K`
/// consecutive blocks of length `T / K`, self-normalized by their spread.
pub fn gaussian_location_tstat(y: &[f64], k: usize) -> Result<(f64, u32), InferenceError> {
    if k < 2 {
        return Err(InferenceError::Config(format!("K = {k} < 2")));
    }
    if y.is_empty() || !y.len().is_multiple_of(k) {
        return Err(InferenceError::Config(format!(
            "T = {} is not a positive multiple of K = {k}",
            y.len()
        )));
    }
    let g = y.len() / k;
    let means: Vec<f64> = y.chunks(g).map(|c| c.iter().sum::<f64>() / g as f64).collect();
    let kf = k as f64;
    let mean = means.iter().sum::<f64>() / kf;
    let spread = (means.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (kf - 1.0)).sqrt();
    let scale = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if spread <= DEGENERATE_REL * (1.0 + scale) {
        return Err(InferenceError::Config("block means have zero spread".into()));
    }
    Ok((kf.sqrt() * mean / spread, (k - 1) as u32))
}
