//! One-step projected inference for `theta = xi' beta`.
//!
//! Given the initial fit `beta_hat`, a working correlation and a projection
//! direction `omega_hat`, the projected estimating function is
//! `psi_P(theta) = omega_hat' psi(beta_hat + omega_hat (theta - xi' beta_hat))`
//! and the corrected estimate is the single update
//! `theta_tilde = theta_hat + psi_P(theta_hat) / (omega_hat' S omega_hat)`
//! with standard error `sqrt(omega_hat' V omega_hat) / (sqrt(n) omega_hat' S omega_hat)`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{make_folds, ClusteredDataset};
use crate::error::{Error, Result};
use crate::family::Family;
use crate::gee::{self, CorrelationKind, GeeMatrices, UnstructuredPooling, WorkingCorrelation};
use crate::lasso::{self, LambdaCvOptions, LambdaPath, LassoFit};
use crate::par::{self, Execution};
use crate::projection::{estimate_direction, ProjectionDirection};
use crate::seeds::derive_seed;

/// Quadratic forms `omega_hat' S omega_hat` at or below this are rejected.
pub const MIN_NORMALIZER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceTarget {
    pub xi: DVector<f64>,
    pub alpha: f64,
}

impl InferenceTarget {
    pub fn new(xi: DVector<f64>, alpha: f64) -> Result<Self> {
        if xi.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidArgument("loading vector must be nonzero".into()));
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("loading vector must be finite".into()));
        }
        check_alpha(alpha)?;
        Ok(Self { xi, alpha })
    }

    /// Single-coefficient target `e_j`.
    pub fn coefficient(p: usize, j: usize, alpha: f64) -> Result<Self> {
        if j >= p {
            return Err(Error::InvalidArgument(format!("coefficient {j} out of range for p = {p}")));
        }
        let mut xi = DVector::zeros(p);
        xi[j] = 1.0;
        Self::new(xi, alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    /// Plug-in estimate `xi' beta_hat`.
    pub theta_hat: f64,
    /// One-step corrected estimate.
    pub theta_tilde: f64,
    pub se: f64,
    pub ci: (f64, f64),
    /// `theta_tilde / se`, for the hypothesis `theta = 0`.
    pub z: f64,
    pub p_value: f64,
    pub lambda_prime_used: f64,
    pub alpha: f64,
}

impl InferenceResult {
    pub fn covers(&self, value: f64) -> bool {
        self.ci.0 <= value && value <= self.ci.1
    }

    pub fn ci_length(&self) -> f64 {
        self.ci.1 - self.ci.0
    }
}

/// Upper `alpha/2` standard normal quantile.
pub fn normal_quantile_upper(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// Two-sided standard normal p-value.
pub fn two_sided_p_value(z: f64) -> f64 {
    (2.0 * Normal::standard().cdf(-z.abs())).min(1.0)
}

/// `omega_hat' psi(beta_hat + omega_hat (theta - xi' beta_hat))`.
pub fn projected_psi(
    dataset: &ClusteredDataset,
    family: Family,
    beta_hat: &DVector<f64>,
    omega_hat: &DVector<f64>,
    corr: &WorkingCorrelation,
    theta: f64,
    xi: &DVector<f64>,
) -> Result<f64> {
    let p = dataset.p();
    if beta_hat.len() != p || omega_hat.len() != p || xi.len() != p {
        return Err(Error::Dimension(format!(
            "beta {}, omega {}, xi {} for p = {p}",
            beta_hat.len(),
            omega_hat.len(),
            xi.len()
        )));
    }
    if omega_hat.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let shifted = beta_hat + omega_hat * (theta - xi.dot(beta_hat));
    Ok(omega_hat.dot(&gee::psi(dataset, family, &shifted, corr)?))
}

/// Corrected estimate, standard error and interval from precomputed
/// `psi`, `S`, `V` at `beta_hat`.
///
/// Because the shift vanishes at `theta_hat`, `psi_P(theta_hat)` is just
/// `omega_hat' psi(beta_hat)`.
pub fn one_step_from_matrices(
    matrices: &GeeMatrices,
    n: usize,
    beta_hat: &DVector<f64>,
    omega_hat: &DVector<f64>,
    xi: &DVector<f64>,
    alpha: f64,
    lambda_prime: f64,
) -> Result<InferenceResult> {
    check_alpha(alpha)?;
    let normalizer = omega_hat.dot(&(&matrices.s * omega_hat));
    if !(normalizer > MIN_NORMALIZER) {
        return Err(Error::DegenerateDirection {
            quad_form: normalizer,
            lambda_prime,
        });
    }
    let theta_hat = xi.dot(beta_hat);
    let psi_p = omega_hat.dot(&matrices.psi);
    let theta_tilde = theta_hat + psi_p / normalizer;
    let variability = omega_hat.dot(&(&matrices.v * omega_hat)).max(0.0);
    let se = variability.sqrt() / ((n as f64).sqrt() * normalizer);
    if !(se > 0.0 && se.is_finite()) {
        return Err(Error::Domain(format!("standard error {se} is not positive")));
    }
    let half = normal_quantile_upper(alpha) * se;
    let z = theta_tilde / se;
    Ok(InferenceResult {
        theta_hat,
        theta_tilde,
        se,
        ci: (theta_tilde - half, theta_tilde + half),
        z,
        p_value: two_sided_p_value(z),
        lambda_prime_used: lambda_prime,
        alpha,
    })
}

/// One-step estimate for target loading `xi` along a given direction.
pub fn one_step_estimate(
    dataset: &ClusteredDataset,
    family: Family,
    beta_hat: &DVector<f64>,
    direction: &ProjectionDirection,
    corr: &WorkingCorrelation,
    xi: &DVector<f64>,
    alpha: f64,
) -> Result<InferenceResult> {
    if dataset.n() < 2 {
        return Err(Error::Data("inference needs at least 2 clusters".into()));
    }
    if xi.len() != dataset.p() || direction.omega_hat.len() != dataset.p() {
        return Err(Error::Dimension("xi and omega must have length p".into()));
    }
    let m = gee::gee_matrices(dataset, family, beta_hat, corr)?;
    one_step_from_matrices(
        &m,
        dataset.n(),
        beta_hat,
        &direction.omega_hat,
        xi,
        alpha,
        direction.lambda_prime,
    )
}

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
pub fn bh_adjust(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p_values.iter().find(|p| !(**p >= 0.0 && **p <= 1.0)) {
        return Err(Error::InvalidArgument(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min(p_values[i] * m as f64 / (rank + 1) as f64);
        adjusted[i] = running.min(1.0);
    }
    Ok(adjusted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaPrimeRule {
    /// Smallest grid value within one standard error of the minimum.
    OneSe,
    /// Grid value minimizing the criterion.
    Min,
}

impl std::str::FromStr for LambdaPrimeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1se" | "one-se" | "onese" => Ok(Self::OneSe),
            "min" => Ok(Self::Min),
            other => Err(Error::InvalidArgument(format!("unknown lambda' rule '{other}'"))),
        }
    }
}

/// Cross-validation curve over the `lambda'` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CvCurve {
    /// Non-decreasing trial values.
    pub grid: Vec<f64>,
    /// `sum_k` of the fold criteria; infinite where some fold failed.
    pub cv_value: Vec<f64>,
    /// `per_fold[k][l]`; NaN where fold `k` failed at grid point `l`.
    pub per_fold: Vec<Vec<f64>>,
    /// Standard error of the fold-mean criterion at the minimizer.
    pub se_at_min: f64,
    /// One-standard-error selection.
    pub selected: usize,
    pub selected_min: usize,
}

impl CvCurve {
    pub fn selected_index(&self, rule: LambdaPrimeRule) -> usize {
        match rule {
            LambdaPrimeRule::OneSe => self.selected,
            LambdaPrimeRule::Min => self.selected_min,
        }
    }

    pub fn selected_lambda(&self, rule: LambdaPrimeRule) -> f64 {
        self.grid[self.selected_index(rule)]
    }
}

/// Default trial grid: 10 log-spaced values from `||xi||_inf / 100` up to
/// `0.9 ||xi||_inf`, increasing.
pub fn default_lambda_prime_grid(xi: &DVector<f64>) -> Vec<f64> {
    let top = xi.amax();
    let mut grid = lasso::lambda_grid(0.9 * top, 10, 1.0 / 90.0);
    grid.reverse();
    grid
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("lambda' grid is empty".into()));
    }
    if grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("lambda' grid values must be positive".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("lambda' grid must be sorted increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaPrimeCvOptions {
    pub folds: usize,
    /// Settings for the lasso refit (with its own lambda CV) on each training split.
    pub lambda_cv: LambdaCvOptions,
    pub execution: Execution,
}

impl Default for LambdaPrimeCvOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            lambda_cv: LambdaCvOptions::default(),
            execution: Execution::Parallel,
        }
    }
}

/// Everything one cross-validation fold needs that does not depend on `xi`.
#[derive(Debug, Clone)]
struct FoldState {
    beta_hat: DVector<f64>,
    corr: WorkingCorrelation,
    s: DMatrix<f64>,
    psi_train: DVector<f64>,
    test: ClusteredDataset,
}

/// Prepared folds for selecting `lambda'`; reusable across loadings.
#[derive(Debug, Clone)]
pub struct LambdaPrimeCv {
    family: Family,
    folds: Vec<FoldState>,
}

impl LambdaPrimeCv {
    /// Splits clusters into folds and fits, on each training part, the lasso
    /// (with its own lambda CV), the working correlation, `S` and `psi`.
    pub fn prepare(
        dataset: &ClusteredDataset,
        family: Family,
        corr_kind: CorrelationKind,
        seed: u64,
        opts: &LambdaPrimeCvOptions,
    ) -> Result<Self> {
        let assignment = make_folds(dataset, opts.folds, seed)?;
        let states = par::map_range(opts.execution, assignment.k(), |k| -> Result<FoldState> {
            let (train, test) = assignment.split(k);
            let train = dataset.subset(&train)?;
            let test = dataset.subset(&test)?;
            let (_, fit) = lasso::cv_select_lambda(&train, family, derive_seed(seed, &[1, k as u64]), &opts.lambda_cv)?;
            let corr = estimate_correlation(&train, family, &fit.beta_hat, corr_kind)?;
            let (psi_train, s) = gee::psi_and_sensitivity(&train, family, &fit.beta_hat, &corr)?;
            Ok(FoldState {
                beta_hat: fit.beta_hat,
                corr,
                s,
                psi_train,
                test,
            })
        });
        Ok(Self {
            family,
            folds: states.into_iter().collect::<Result<_>>()?,
        })
    }

    pub fn folds(&self) -> usize {
        self.folds.len()
    }

    fn fold_criterion(&self, fold: &FoldState, xi: &DVector<f64>, lambda_prime: f64) -> Result<f64> {
        let dir = estimate_direction(&fold.s, xi, lambda_prime)?;
        let omega = &dir.omega_hat;
        let normalizer = omega.dot(&(&fold.s * omega));
        let theta_hat = xi.dot(&fold.beta_hat);
        let theta_tilde = theta_hat + omega.dot(&fold.psi_train) / normalizer;
        let beta_tilde = &fold.beta_hat + omega * (theta_tilde - theta_hat);
        let psi_test = gee::psi(&fold.test, self.family, &beta_tilde, &fold.corr)?;
        Ok(omega.dot(&psi_test).powi(2))
    }

    /// Criterion curve and selections for loading `xi` over `grid` (increasing).
    pub fn curve(&self, xi: &DVector<f64>, grid: &[f64]) -> Result<CvCurve> {
        check_grid(grid)?;
        if let Some(f) = self.folds.first() {
            if xi.len() != f.beta_hat.len() {
                return Err(Error::Dimension(format!(
                    "xi has length {}, expected {}",
                    xi.len(),
                    f.beta_hat.len()
                )));
            }
        }
        let mut first_error: Option<Error> = None;
        let per_fold: Vec<Vec<f64>> = self
            .folds
            .iter()
            .map(|fold| {
                grid.iter()
                    .map(|&l| match self.fold_criterion(fold, xi, l) {
                        Ok(v) if v.is_finite() => v,
                        Ok(_) => f64::NAN,
                        Err(e) => {
                            first_error.get_or_insert(e);
                            f64::NAN
                        }
                    })
                    .collect()
            })
            .collect();
        select_from_folds(grid, per_fold, first_error)
    }
}

fn select_from_folds(grid: &[f64], per_fold: Vec<Vec<f64>>, first_error: Option<Error>) -> Result<CvCurve> {
    let k = per_fold.len();
    let cv_value: Vec<f64> = (0..grid.len())
        .map(|l| {
            let col = per_fold.iter().map(|f| f[l]);
            if col.clone().any(f64::is_nan) {
                f64::INFINITY
            } else {
                col.sum()
            }
        })
        .collect();
    if cv_value.iter().all(|v| v.is_infinite()) {
        let cause = first_error.map(|e| e.to_string()).unwrap_or_else(|| "non-finite criterion".into());
        return Err(Error::InvalidArgument(format!(
            "every lambda' on the grid fails in some fold ({cause}); use a smaller grid minimum"
        )));
    }
    let selected_min = lasso::argmin_first(&cv_value);
    let at_min: Vec<f64> = per_fold.iter().map(|f| f[selected_min]).collect();
    let (_, se_at_min) = lasso::mean_and_se(&at_min);
    // compare on the fold-mean scale, where se_at_min lives
    let threshold = cv_value[selected_min] / k as f64 + se_at_min;
    let selected = (0..grid.len())
        .find(|&l| cv_value[l].is_finite() && cv_value[l] / k as f64 <= threshold)
        .unwrap_or(selected_min);
    Ok(CvCurve {
        grid: grid.to_vec(),
        cv_value,
        per_fold,
        se_at_min,
        selected,
        selected_min,
    })
}

/// K-fold cross-validation for `lambda'` with default lasso settings.
pub fn cv_select_lambda_prime(
    dataset: &ClusteredDataset,
    family: Family,
    xi: &DVector<f64>,
    folds: usize,
    grid: &[f64],
    corr_kind: CorrelationKind,
    seed: u64,
) -> Result<CvCurve> {
    check_grid(grid)?;
    let opts = LambdaPrimeCvOptions {
        folds,
        ..Default::default()
    };
    LambdaPrimeCv::prepare(dataset, family, corr_kind, seed, &opts)?.curve(xi, grid)
}

/// Working correlation estimate; unstructured falls back to max-size
/// pooling when cluster sizes differ.
pub fn estimate_correlation(
    dataset: &ClusteredDataset,
    family: Family,
    beta_hat: &DVector<f64>,
    kind: CorrelationKind,
) -> Result<WorkingCorrelation> {
    gee::estimate_gamma_with(dataset, family, beta_hat, kind, UnstructuredPooling::MaxSizeClusters)
}

/// Settings for the whole estimation and inference pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub family: Family,
    pub corr_kind: CorrelationKind,
    pub lambda_cv: LambdaCvOptions,
    pub lambda_prime_folds: usize,
    /// Trial `lambda'` values as multiples of `||xi||_inf`, increasing.
    /// `None` uses [`default_lambda_prime_grid`].
    pub lambda_prime_grid: Option<Vec<f64>>,
    pub rule: LambdaPrimeRule,
    pub alpha: f64,
    /// Fit `beta_hat` and the working correlation on one half of the
    /// clusters and build the projected estimating function on the other.
    pub split: bool,
    pub execution: Execution,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            family: Family::Gaussian,
            corr_kind: CorrelationKind::Ar1,
            lambda_cv: LambdaCvOptions::default(),
            lambda_prime_folds: 5,
            lambda_prime_grid: None,
            rule: LambdaPrimeRule::OneSe,
            alpha: 0.05,
            split: false,
            execution: Execution::Parallel,
        }
    }
}

impl PipelineOptions {
    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self.lambda_cv.execution = execution;
        self
    }

    fn grid_for(&self, xi: &DVector<f64>) -> Vec<f64> {
        match &self.lambda_prime_grid {
            Some(rel) => rel.iter().map(|r| r * xi.amax()).collect(),
            None => default_lambda_prime_grid(xi),
        }
    }
}

/// Initial estimates shared by every target.
#[derive(Debug, Clone)]
pub struct InitialFit {
    pub path: LambdaPath,
    pub lasso: LassoFit,
    pub corr: WorkingCorrelation,
    /// `psi`, `S`, `V` at `beta_hat` on the inference sample.
    pub matrices: GeeMatrices,
    /// Clusters in the inference sample.
    pub n: usize,
}

/// Output for one loading.
#[derive(Debug, Clone)]
pub struct TargetInference {
    pub curve: CvCurve,
    pub result: InferenceResult,
    pub direction: ProjectionDirection,
}

/// Fitted pipeline able to answer inference queries for any loading.
#[derive(Debug, Clone)]
pub struct Analysis {
    opts: PipelineOptions,
    initial: InitialFit,
    cv: LambdaPrimeCv,
}

impl Analysis {
    pub fn fit(dataset: &ClusteredDataset, opts: &PipelineOptions, seed: u64) -> Result<Self> {
        check_alpha(opts.alpha)?;
        if dataset.n() < 2 {
            return Err(Error::Data("inference needs at least 2 clusters".into()));
        }
        let family = opts.family;
        if let Some(i) = dataset.y().iter().position(|&y| !family.validate_response(y)) {
            return Err(Error::Data(format!(
                "response {} at row {i} is not valid for the {} family",
                dataset.y()[i],
                family.name()
            )));
        }
        let (fit_data, infer_data) = if opts.split {
            let mut idx: Vec<usize> = (0..dataset.n()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3])));
            let half = dataset.n() / 2;
            if half < 2 {
                return Err(Error::Data("data splitting needs at least 4 clusters".into()));
            }
            let (a, b) = idx.split_at(half);
            let mut a = a.to_vec();
            let mut b = b.to_vec();
            a.sort_unstable();
            b.sort_unstable();
            (dataset.subset(&a)?, Some(dataset.subset(&b)?))
        } else {
            (dataset.clone(), None)
        };
        let (path, lasso_fit) = lasso::cv_select_lambda(&fit_data, family, derive_seed(seed, &[1]), &opts.lambda_cv)?;
        let corr = estimate_correlation(&fit_data, family, &lasso_fit.beta_hat, opts.corr_kind)?;
        let inference_sample = infer_data.as_ref().unwrap_or(&fit_data);
        let matrices = gee::gee_matrices(inference_sample, family, &lasso_fit.beta_hat, &corr)?;
        let cv_opts = LambdaPrimeCvOptions {
            folds: opts.lambda_prime_folds,
            lambda_cv: opts.lambda_cv,
            execution: opts.execution,
        };
        let cv = LambdaPrimeCv::prepare(dataset, family, opts.corr_kind, derive_seed(seed, &[2]), &cv_opts)?;
        Ok(Self {
            opts: opts.clone(),
            initial: InitialFit {
                path,
                lasso: lasso_fit,
                corr,
                matrices,
                n: inference_sample.n(),
            },
            cv,
        })
    }

    pub fn initial(&self) -> &InitialFit {
        &self.initial
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.opts
    }

    pub fn p(&self) -> usize {
        self.initial.lasso.beta_hat.len()
    }

    /// Cross-validation curve for `xi` on the configured grid.
    pub fn curve(&self, xi: &DVector<f64>) -> Result<CvCurve> {
        self.cv.curve(xi, &self.opts.grid_for(xi))
    }

    /// Inference at a fixed `lambda'`.
    pub fn infer_at(&self, xi: &DVector<f64>, lambda_prime: f64) -> Result<(InferenceResult, ProjectionDirection)> {
        let target = InferenceTarget::new(xi.clone(), self.opts.alpha)?;
        if target.xi.len() != self.p() {
            return Err(Error::Dimension(format!("xi has length {}, expected {}", xi.len(), self.p())));
        }
        let direction = estimate_direction(&self.initial.matrices.s, &target.xi, lambda_prime)?;
        let result = one_step_from_matrices(
            &self.initial.matrices,
            self.initial.n,
            &self.initial.lasso.beta_hat,
            &direction.omega_hat,
            &target.xi,
            target.alpha,
            lambda_prime,
        )?;
        Ok((result, direction))
    }

    /// Cross-validates `lambda'` and runs inference under each rule.
    pub fn infer_rules(
        &self,
        xi: &DVector<f64>,
        rules: &[LambdaPrimeRule],
    ) -> Result<(CvCurve, Vec<Result<(InferenceResult, ProjectionDirection)>>)> {
        if xi.len() != self.p() {
            return Err(Error::Dimension(format!("xi has length {}, expected {}", xi.len(), self.p())));
        }
        let curve = self.curve(xi)?;
        let results = rules
            .iter()
            .map(|&r| self.infer_at(xi, curve.selected_lambda(r)))
            .collect();
        Ok((curve, results))
    }

    /// Cross-validated inference under the configured rule.
    pub fn infer(&self, xi: &DVector<f64>) -> Result<TargetInference> {
        let (curve, mut results) = self.infer_rules(xi, &[self.opts.rule])?;
        let (result, direction) = results.pop().unwrap()?;
        Ok(TargetInference {
            curve,
            result,
            direction,
        })
    }

    /// Single-coefficient inference for every covariate with BH adjustment.
    pub fn screen(&self, names: &[String]) -> Result<Vec<ScreenRow>> {
        let p = self.p();
        if names.len() != p {
            return Err(Error::Dimension(format!("{} names for p = {p}", names.len())));
        }
        let outcomes = par::map_range(self.opts.execution, p, |j| {
            let mut xi = DVector::zeros(p);
            xi[j] = 1.0;
            self.infer(&xi)
        });
        let p_values: Vec<f64> = outcomes
            .iter()
            .map(|o| o.as_ref().map(|t| t.result.p_value).unwrap_or(1.0))
            .collect();
        let adjusted = bh_adjust(&p_values)?;
        let mut rows: Vec<ScreenRow> = outcomes
            .into_iter()
            .enumerate()
            .map(|(j, o)| {
                let (result, note) = match o {
                    Ok(t) => (Some(t.result), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                ScreenRow {
                    index: j,
                    name: names[j].clone(),
                    p_adjusted: adjusted[j],
                    flagged: adjusted[j] < self.opts.alpha,
                    result,
                    note,
                }
            })
            .collect();
        rows.sort_by(|a, b| a.p_adjusted.total_cmp(&b.p_adjusted).then(a.index.cmp(&b.index)));
        Ok(rows)
    }
}

/// One covariate in a screen.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenRow {
    pub index: usize,
    pub name: String,
    /// `None` when inference failed for this covariate (see `note`); its
    /// p-value is then taken as 1.
    pub result: Option<InferenceResult>,
    pub p_adjusted: f64,
    pub flagged: bool,
    pub note: Option<String>,
}
