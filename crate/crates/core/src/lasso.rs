//! l1-penalized working-independence quasi-likelihood fits.
//!
//! The objective is `l_n(beta) + lambda * sum_j w_j |beta_j|`, where `l_n` is
//! [`neg_quasi_loglik`] and `w_j` are penalty weights. With standardization
//! on, `w_j` is the root mean square of column `j`, which is the same as
//! fitting on scaled columns and mapping the coefficients back. No centering
//! is done because the model has no implicit intercept.
//!
//! Gaussian fits run cyclic coordinate descent directly on the quadratic.
//! Logit fits wrap it in iteratively reweighted quadratic approximations.
//! Inner products between columns are computed lazily, only for coordinates
//! that become nonzero, and reused for the rest of the solve.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{make_folds, ClusteredDataset};
use crate::error::{Error, Result};
use crate::family::{neg_quasi_loglik, neg_quasi_loglik_grad, Family};
use crate::par::{self, Execution};

/// Floor applied to logistic working weights.
pub const IRLS_WEIGHT_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tol: f64,
    /// Maximum number of coordinate sweeps.
    pub max_iter: usize,
    pub standardize: bool,
    /// Tolerance for the KKT check that backs `converged`.
    pub kkt_tol: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 10_000,
            standardize: true,
            kkt_tol: 1e-5,
        }
    }
}

impl LassoOptions {
    pub fn unstandardized() -> Self {
        Self {
            standardize: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub beta_hat: DVector<f64>,
    pub lambda: f64,
    /// `l_n(beta_hat) + lambda * sum_j w_j |beta_hat_j|`.
    pub objective: f64,
    pub n_iterations: usize,
    pub converged: bool,
    /// Largest violation of the subgradient optimality conditions.
    pub kkt_residual: f64,
    pub penalty_weights: DVector<f64>,
}

impl LassoFit {
    pub fn nonzeros(&self) -> usize {
        self.beta_hat.iter().filter(|b| **b != 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaPath {
    /// Strictly decreasing penalty levels.
    pub values: Vec<f64>,
    pub cv_mean: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub selected: usize,
}

impl LambdaPath {
    pub fn selected_lambda(&self) -> f64 {
        self.values[self.selected]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaCvOptions {
    pub folds: usize,
    pub path_length: usize,
    /// `lambda_min / lambda_max`.
    pub ratio: f64,
    pub lasso: LassoOptions,
    pub execution: Execution,
}

impl Default for LambdaCvOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            path_length: 100,
            ratio: 1e-3,
            lasso: LassoOptions::default(),
            execution: Execution::Parallel,
        }
    }
}

#[inline]
fn soft_threshold(u: f64, t: f64) -> f64 {
    if u > t {
        u - t
    } else if u < -t {
        u + t
    } else {
        0.0
    }
}

/// Root-mean-square column scales used as penalty weights (1 for all-zero columns).
pub fn penalty_weights(dataset: &ClusteredDataset, standardize: bool) -> DVector<f64> {
    let p = dataset.p();
    if !standardize {
        return DVector::from_element(p, 1.0);
    }
    let nobs = dataset.total_obs() as f64;
    DVector::from_iterator(
        p,
        dataset.x().column_iter().map(|c| {
            let s = (c.norm_squared() / nobs).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        }),
    )
}

/// Coordinate descent state for
/// `(scale/2) sum_i w_i (z_i - x_i' beta)^2 + lambda sum_j pf_j |beta_j|`.
///
/// `grad` holds `scale * X' W (z - X beta)` and is kept current across
/// coordinate updates, so the state can be reused along a lambda path.
/// Warm starts with at least this many nonzeros get their Gram columns in one product.
const BLOCK_GRAM_MIN: usize = 4;

struct QuadraticCd<'a> {
    x: &'a DMatrix<f64>,
    weights: Option<DVector<f64>>,
    scale: f64,
    beta: Vec<f64>,
    grad: Vec<f64>,
    diag: Vec<f64>,
    gram: Vec<Option<Vec<f64>>>,
}

impl<'a> QuadraticCd<'a> {
    /// `x_sq` is the elementwise square of `x`, needed only with weights.
    fn new(
        x: &'a DMatrix<f64>,
        x_sq: Option<&DMatrix<f64>>,
        weights: Option<DVector<f64>>,
        z: &DVector<f64>,
        scale: f64,
        beta: Vec<f64>,
    ) -> Self {
        let p = x.ncols();
        let beta_v = DVector::from_column_slice(&beta);
        let mut resid = z - x * &beta_v;
        if let Some(w) = &weights {
            resid.component_mul_assign(w);
        }
        let grad = (x.tr_mul(&resid) * scale).as_slice().to_vec();
        let diag = match (&weights, x_sq) {
            (Some(w), Some(sq)) => (sq.tr_mul(w) * scale).as_slice().to_vec(),
            (Some(w), None) => x
                .column_iter()
                .map(|c| scale * c.iter().zip(w.iter()).map(|(a, b)| a * a * b).sum::<f64>())
                .collect(),
            (None, _) => x.column_iter().map(|c| scale * c.norm_squared()).collect(),
        };
        let mut cd = Self {
            x,
            weights,
            scale,
            beta,
            grad,
            diag,
            gram: vec![None; p],
        };
        cd.prefill_gram();
        cd
    }

    /// Gram columns for every currently nonzero coefficient in one product.
    fn prefill_gram(&mut self) {
        let active: Vec<usize> = (0..self.beta.len()).filter(|&j| self.beta[j] != 0.0).collect();
        if active.len() < BLOCK_GRAM_MIN {
            return;
        }
        let mut block = self.x.select_columns(&active);
        if let Some(w) = &self.weights {
            for mut c in block.column_iter_mut() {
                c.component_mul_assign(w);
            }
        }
        let g = self.x.transpose() * block * self.scale;
        for (k, &j) in active.iter().enumerate() {
            self.gram[j] = Some(g.column(k).as_slice().to_vec());
        }
    }

    fn ensure_gram_column(&mut self, j: usize) {
        if self.gram[j].is_some() {
            return;
        }
        let mut col = self.x.column(j).clone_owned();
        if let Some(w) = &self.weights {
            col.component_mul_assign(w);
        }
        let g = self.x.tr_mul(&col) * self.scale;
        self.gram[j] = Some(g.as_slice().to_vec());
    }

    fn update(&mut self, j: usize, lambda: f64, pf: &[f64]) -> f64 {
        let h = self.diag[j];
        if h <= 0.0 {
            return 0.0;
        }
        let old = self.beta[j];
        let new = soft_threshold(self.grad[j] + h * old, lambda * pf[j]) / h;
        let delta = new - old;
        if delta != 0.0 {
            self.beta[j] = new;
            self.ensure_gram_column(j);
            let col = self.gram[j].as_deref().unwrap();
            for (g, c) in self.grad.iter_mut().zip(col) {
                *g -= delta * c;
            }
        }
        delta.abs()
    }

    /// Runs sweeps until a full sweep moves no coefficient by `tol` or more.
    /// Returns `(sweeps, converged)`.
    fn solve(&mut self, lambda: f64, pf: &[f64], tol: f64, max_sweeps: usize) -> (usize, bool) {
        let p = self.beta.len();
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            let mut max_change = 0.0f64;
            for j in 0..p {
                max_change = max_change.max(self.update(j, lambda, pf));
            }
            sweeps += 1;
            if max_change < tol {
                return (sweeps, true);
            }
            let active: Vec<usize> = (0..p).filter(|&j| self.beta[j] != 0.0).collect();
            while sweeps < max_sweeps {
                let mut max_change = 0.0f64;
                for &j in &active {
                    max_change = max_change.max(self.update(j, lambda, pf));
                }
                sweeps += 1;
                if max_change < tol {
                    break;
                }
            }
        }
        (sweeps, false)
    }
}

fn penalized_objective(
    family: Family,
    dataset: &ClusteredDataset,
    beta: &DVector<f64>,
    lambda: f64,
    pf: &DVector<f64>,
) -> Result<f64> {
    let penalty: f64 = beta.iter().zip(pf.iter()).map(|(b, w)| b.abs() * w).sum();
    Ok(neg_quasi_loglik(family, dataset, beta)? + lambda * penalty)
}

/// Largest violation of the lasso subgradient conditions at `beta`.
pub fn kkt_residual(
    family: Family,
    dataset: &ClusteredDataset,
    beta: &DVector<f64>,
    lambda: f64,
    pf: &DVector<f64>,
) -> Result<f64> {
    let grad = neg_quasi_loglik_grad(family, dataset, beta)?;
    Ok(grad
        .iter()
        .zip(beta.iter())
        .zip(pf.iter())
        .map(|((&g, &b), &w)| {
            if b == 0.0 {
                (g.abs() - lambda * w).max(0.0)
            } else {
                (g + lambda * w * b.signum()).abs()
            }
        })
        .fold(0.0, f64::max))
}

fn finish_fit(
    family: Family,
    dataset: &ClusteredDataset,
    beta: DVector<f64>,
    lambda: f64,
    pf: &DVector<f64>,
    n_iterations: usize,
    solver_converged: bool,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    let objective = penalized_objective(family, dataset, &beta, lambda, pf)?;
    let kkt = kkt_residual(family, dataset, &beta, lambda, pf)?;
    Ok(LassoFit {
        beta_hat: beta,
        lambda,
        objective,
        n_iterations,
        converged: solver_converged && kkt <= opts.kkt_tol,
        kkt_residual: kkt,
        penalty_weights: pf.clone(),
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

fn initial_beta(p: usize, warm_start: Option<&DVector<f64>>) -> Result<Vec<f64>> {
    match warm_start {
        Some(b) if b.len() != p => Err(Error::Dimension(format!(
            "warm start has length {}, expected {p}",
            b.len()
        ))),
        Some(b) => Ok(b.as_slice().to_vec()),
        None => Ok(vec![0.0; p]),
    }
}

/// Minimizes the penalized working-independence quasi-likelihood at one `lambda`.
///
/// Hitting the iteration limit is not an error: the fit comes back with
/// `converged = false`.
pub fn fit_lasso(
    dataset: &ClusteredDataset,
    family: Family,
    lambda: f64,
    warm_start: Option<&DVector<f64>>,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    let mut fits = fit_path(dataset, family, &[lambda], warm_start, opts)?;
    Ok(fits.pop().unwrap())
}

/// Fits a sequence of penalty levels, warm-starting each from the previous.
pub fn fit_path(
    dataset: &ClusteredDataset,
    family: Family,
    lambdas: &[f64],
    warm_start: Option<&DVector<f64>>,
    opts: &LassoOptions,
) -> Result<Vec<LassoFit>> {
    for &l in lambdas {
        check_lambda(l)?;
    }
    let pf = penalty_weights(dataset, opts.standardize);
    let beta0 = initial_beta(dataset.p(), warm_start)?;
    match family {
        Family::Gaussian => gaussian_path(dataset, lambdas, beta0, &pf, opts),
        Family::Logit => {
            let x_sq = dataset.x().map(|v| v * v);
            let mut beta = beta0;
            let mut out = Vec::with_capacity(lambdas.len());
            for &l in lambdas {
                let fit = logit_fit(dataset, &x_sq, l, beta, &pf, opts)?;
                beta = fit.beta_hat.as_slice().to_vec();
                out.push(fit);
            }
            Ok(out)
        }
    }
}

fn gaussian_path(
    dataset: &ClusteredDataset,
    lambdas: &[f64],
    beta0: Vec<f64>,
    pf: &DVector<f64>,
    opts: &LassoOptions,
) -> Result<Vec<LassoFit>> {
    let scale = 1.0 / dataset.n() as f64;
    let mut cd = QuadraticCd::new(dataset.x(), None, None, dataset.y(), scale, beta0);
    lambdas
        .iter()
        .map(|&l| {
            let (sweeps, ok) = cd.solve(l, pf.as_slice(), opts.tol, opts.max_iter);
            let beta = DVector::from_column_slice(&cd.beta);
            finish_fit(Family::Gaussian, dataset, beta, l, pf, sweeps, ok, opts)
        })
        .collect()
}

fn logit_fit(
    dataset: &ClusteredDataset,
    x_sq: &DMatrix<f64>,
    lambda: f64,
    beta0: Vec<f64>,
    pf: &DVector<f64>,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    const MAX_OUTER: usize = 100;
    let fam = Family::Logit;
    let x = dataset.x();
    let y = dataset.y();
    let scale = 1.0 / dataset.n() as f64;
    let mut beta = DVector::from_column_slice(&beta0);
    let mut obj = penalized_objective(fam, dataset, &beta, lambda, pf)?;
    let mut sweeps = 0;
    let mut converged = false;

    for _ in 0..MAX_OUTER {
        let eta = x * &beta;
        let mut w = DVector::zeros(eta.len());
        let mut z = DVector::zeros(eta.len());
        for i in 0..eta.len() {
            let mu = fam.mu(eta[i]);
            let wi = (mu * (1.0 - mu)).max(IRLS_WEIGHT_FLOOR);
            w[i] = wi;
            z[i] = eta[i] + (y[i] - mu) / wi;
        }
        let mut cd = QuadraticCd::new(x, Some(x_sq), Some(w), &z, scale, beta.as_slice().to_vec());
        let budget = opts.max_iter.saturating_sub(sweeps).max(1);
        let (used, _) = cd.solve(lambda, pf.as_slice(), opts.tol, budget);
        sweeps += used;
        let proposal = DVector::from_column_slice(&cd.beta);

        // step halving keeps the penalized objective from increasing
        let mut step = proposal - &beta;
        let mut cand = &beta + &step;
        let mut cand_obj = penalized_objective(fam, dataset, &cand, lambda, pf)?;
        let mut halvings = 0;
        while cand_obj > obj + 1e-12 * obj.abs().max(1.0) && halvings < 30 {
            step *= 0.5;
            cand = &beta + &step;
            cand_obj = penalized_objective(fam, dataset, &cand, lambda, pf)?;
            halvings += 1;
        }
        let change = step.amax();
        beta = cand;
        obj = cand_obj;
        if change < opts.tol {
            converged = true;
            break;
        }
        if sweeps >= opts.max_iter {
            break;
        }
    }
    finish_fit(fam, dataset, beta, lambda, pf, sweeps, converged, opts)
}

/// Smallest `lambda` at which the zero vector satisfies the optimality conditions.
pub fn lambda_max(dataset: &ClusteredDataset, family: Family, pf: &DVector<f64>) -> Result<f64> {
    let grad = neg_quasi_loglik_grad(family, dataset, &DVector::zeros(dataset.p()))?;
    Ok(grad
        .iter()
        .zip(pf.iter())
        .map(|(g, w)| g.abs() / w)
        .fold(0.0, f64::max))
}

/// Log-spaced decreasing grid from `lambda_max` to `lambda_max * ratio`.
pub fn lambda_grid(lambda_max: f64, len: usize, ratio: f64) -> Vec<f64> {
    if len == 1 {
        return vec![lambda_max];
    }
    let (hi, lo) = (lambda_max.ln(), (lambda_max * ratio).ln());
    (0..len)
        .map(|k| (hi + (lo - hi) * k as f64 / (len - 1) as f64).exp())
        .collect()
}

pub(crate) fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// K-fold cross-validation of `lambda` over a log-spaced path, followed by a
/// full-data refit at the minimizer of the held-out negative quasi log-likelihood.
pub fn cv_select_lambda(
    dataset: &ClusteredDataset,
    family: Family,
    seed: u64,
    opts: &LambdaCvOptions,
) -> Result<(LambdaPath, LassoFit)> {
    if opts.path_length == 0 {
        return Err(Error::InvalidArgument("lambda path must be non-empty".into()));
    }
    let pf = penalty_weights(dataset, opts.lasso.standardize);
    let lmax = lambda_max(dataset, family, &pf)?;
    if !(lmax > 0.0) {
        // zero gradient at the origin: every lambda gives beta = 0
        let fit = fit_lasso(dataset, family, 0.0, None, &opts.lasso)?;
        let path = LambdaPath {
            values: vec![0.0],
            cv_mean: vec![0.0],
            cv_se: vec![0.0],
            selected: 0,
        };
        return Ok((path, fit));
    }
    let values = lambda_grid(lmax, opts.path_length, opts.ratio);
    let folds = make_folds(dataset, opts.folds, seed)?;

    let losses: Vec<Result<Vec<f64>>> = par::map_range(opts.execution, folds.k(), |k| {
        let (train, test) = folds.split(k);
        let train = dataset.subset(&train)?;
        let test = dataset.subset(&test)?;
        let fits = fit_path(&train, family, &values, None, &opts.lasso)?;
        fits.iter()
            .map(|f| neg_quasi_loglik(family, &test, &f.beta_hat))
            .collect()
    });
    let losses = losses.into_iter().collect::<Result<Vec<_>>>()?;

    let mut cv_mean = Vec::with_capacity(values.len());
    let mut cv_se = Vec::with_capacity(values.len());
    for l in 0..values.len() {
        let col: Vec<f64> = losses.iter().map(|f| f[l]).collect();
        let (m, se) = mean_and_se(&col);
        cv_mean.push(m);
        cv_se.push(se);
    }
    let selected = argmin_first(&cv_mean);
    let fits = fit_path(dataset, family, &values[..=selected], None, &opts.lasso)?;
    let fit = fits.into_iter().last().unwrap();
    Ok((
        LambdaPath {
            values,
            cv_mean,
            cv_se,
            selected,
        },
        fit,
    ))
}

/// Index of the first minimum, ignoring NaN.
pub(crate) fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] || values[best].is_nan() {
            best = i;
        }
    }
    best
}
