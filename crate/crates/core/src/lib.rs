//! Cross-fitted synthetic control inference.
//!
//! Weight estimators (SC, constrained lasso, modified constrained lasso,
//! DID) are fitted on pre-treatment data with one block held out per fold;
//! the fold estimates are pooled into a debiased ATT whose self-normalized
//! t-statistic has a Student-t limit with `K - 1` degrees of freedom.

pub mod estimators;
pub mod inference;
pub mod montecarlo;
pub mod panel;
pub mod solvers;
pub mod special;

pub use estimators::{fit_weights, residuals, Method};
pub use inference::{crossfit_att, BlockScheme, CrossFitResult, EstimationConfig, InferenceError};
pub use panel::{load_panel, Panel, PanelError, PanelSplit};
pub use solvers::{ConstraintSet, SolverError, SolverOptions, WeightFit};
pub use montecarlo::{calibrate, generate_panel, run_coverage, CoverageTable, DgpConfig, DgpId, MuWSpec};
