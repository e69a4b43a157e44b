//! De-biased inference for linear combinations of high-dimensional
//! regression coefficients in generalized estimating equations.
//!
//! The pipeline:
//!
//! 1. [`lasso`]: l1-penalized working-independence quasi-likelihood fit
//!    `beta_hat`, with the penalty chosen by cluster-level cross-validation.
//! 2. [`gee`]: working correlation moment estimates, the estimating function
//!    `psi`, sensitivity `S` and sandwich variability `V`.
//! 3. [`projection`]: a sparse direction solving
//!    `min ||omega||_1 s.t. ||S omega - xi||_inf <= lambda'` by linear programming.
//! 4. [`inference`]: the one-step corrected estimate of `xi' beta`, its
//!    standard error and interval, cross-validation of `lambda'`, and
//!    Benjamini-Hochberg screening.
//!
//! [`sim`] reproduces Monte Carlo coverage studies on synthetic clustered data.

pub mod dataset;
pub mod error;
pub mod family;
pub mod gee;
pub mod inference;
pub mod lasso;
pub mod lp;
pub mod par;
pub mod projection;
pub mod seeds;
pub mod sim;

pub use dataset::{load_csv, make_folds, Cluster, ClusteredDataset, ColumnSpec, FoldAssignment};
pub use error::{Error, Result};
pub use family::Family;
pub use inference::{Analysis, CvCurve, InferenceResult, InferenceTarget, LambdaPrimeRule, PipelineOptions};
pub use gee::{CorrelationKind, GeeMatrices, JacobianParts, WorkingCorrelation};
pub use lasso::{LambdaPath, LassoFit, LassoOptions};
pub use par::Execution;
pub use projection::ProjectionDirection;
pub use sim::{MonteCarloReport, SimulationConfig};

/// Formats a double with 17 significant digits, enough to round-trip exactly.
pub fn format_f64(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    format!("{v:.16e}")
}
