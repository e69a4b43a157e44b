//! Monte Carlo coverage studies on synthetic clustered data.
//!
//! Covariate rows are i.i.d. `N(0, Sigma_x)` with an AR(1) correlation.
//! Gaussian responses add `N(0, R0)` errors with unit marginal variance;
//! binary responses threshold a Gaussian copula, `Y = 1{Phi(Z) <= mu}` with
//! `Z ~ N(0, R0)`, which keeps the marginal means exact.

use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{Cluster, ClusteredDataset};
use crate::error::{Error, Result};
use crate::family::Family;
use crate::format_f64;
use crate::gee::{self, CorrelationKind, UnstructuredPooling};
use crate::inference::{normal_quantile_upper, Analysis, LambdaPrimeRule, PipelineOptions};
use crate::par::{self, Execution};
use crate::seeds::derive_seed;

/// Within-cluster sizes of the 28-strain riboflavin layout (111 observations).
pub fn riboflavin_layout() -> Vec<usize> {
    let mut sizes = Vec::with_capacity(28);
    for (m, count) in [(2, 5), (3, 6), (4, 7), (5, 5), (6, 5)] {
        sizes.extend(std::iter::repeat_n(m, count));
    }
    sizes
}

/// The 6x6 unstructured correlation used with the riboflavin layout.
pub fn riboflavin_correlation() -> DMatrix<f64> {
    let band = [1.0, 0.5, 0.45, 0.4, 0.35, 0.3];
    DMatrix::from_fn(6, 6, |i, j| band[i.abs_diff(j)])
}

/// `rho^|i-j|`.
pub fn ar1_matrix(m: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| rho.powi(i.abs_diff(j) as i32))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClusterSizes {
    Fixed(usize),
    Layout(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrueCorrelation {
    Ar1(f64),
    Exchangeable(f64),
    /// Clusters of size `m` use the leading `m x m` block.
    Unstructured(DMatrix<f64>),
}

impl TrueCorrelation {
    pub fn matrix(&self, m: usize) -> Result<DMatrix<f64>> {
        match self {
            Self::Ar1(rho) => Ok(ar1_matrix(m, *rho)),
            Self::Exchangeable(rho) => Ok(DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { *rho })),
            Self::Unstructured(r) => {
                if r.nrows() < m || !r.is_square() {
                    return Err(Error::InvalidArgument(format!(
                        "unstructured correlation is {}x{}, cluster size {m}",
                        r.nrows(),
                        r.ncols()
                    )));
                }
                Ok(r.view((0, 0), (m, m)).clone_owned())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoefficientValue {
    Fixed(f64),
    Uniform(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub n: usize,
    pub p: usize,
    pub s0: usize,
    pub cluster_sizes: ClusterSizes,
    pub family: Family,
    pub true_corr: TrueCorrelation,
    /// AR(1) parameter of the covariate correlation.
    pub x_rho: f64,
    pub coef: CoefficientValue,
    pub reps: usize,
    pub seed: u64,
    /// Fixed stacked design (rows in cluster order) used instead of synthetic covariates.
    pub covariates: Option<Arc<DMatrix<f64>>>,
}

impl SimulationConfig {
    /// Linear model, AR(1) 0.3 errors, n = 100, m = 5, p = 100, s0 = 3, coefficients 1.
    pub fn table1() -> Self {
        Self {
            n: 100,
            p: 100,
            s0: 3,
            cluster_sizes: ClusterSizes::Fixed(5),
            family: Family::Gaussian,
            true_corr: TrueCorrelation::Ar1(0.3),
            x_rho: 0.5,
            coef: CoefficientValue::Fixed(1.0),
            reps: 200,
            seed: 20_240_501,
            covariates: None,
        }
    }

    /// Logistic counterpart of [`table1`](Self::table1) with coefficients 0.5.
    pub fn table2() -> Self {
        Self {
            family: Family::Logit,
            coef: CoefficientValue::Fixed(0.5),
            ..Self::table1()
        }
    }

    /// Riboflavin-scale design: 28 clusters of sizes 2 to 6, p = 267,
    /// Uniform(0.5, 1.5) coefficients and the banded unstructured correlation.
    pub fn ribo_style(s0: usize) -> Self {
        Self {
            n: 28,
            p: 267,
            s0,
            cluster_sizes: ClusterSizes::Layout(riboflavin_layout()),
            family: Family::Gaussian,
            true_corr: TrueCorrelation::Unstructured(riboflavin_correlation()),
            x_rho: 0.5,
            coef: CoefficientValue::Uniform(0.5, 1.5),
            reps: 200,
            seed: 20_240_501,
            covariates: None,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "table1" => Ok(Self::table1()),
            "table2" => Ok(Self::table2()),
            "ribo-style" => Ok(Self::ribo_style(3)),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset '{other}' (expected table1, table2 or ribo-style)"
            ))),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        match &self.cluster_sizes {
            ClusterSizes::Fixed(m) => vec![*m; self.n],
            ClusterSizes::Layout(v) => v.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidArgument("n and p must be positive".into()));
        }
        if self.s0 > self.p {
            return Err(Error::InvalidArgument(format!("s0 = {} exceeds p = {}", self.s0, self.p)));
        }
        let sizes = self.sizes();
        if sizes.len() != self.n || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "cluster sizes must list {} positive sizes",
                self.n
            )));
        }
        if !(self.x_rho.abs() < 1.0) {
            return Err(Error::InvalidArgument("covariate AR(1) parameter must lie in (-1, 1)".into()));
        }
        if let CoefficientValue::Uniform(a, b) = self.coef {
            if !(a < b) {
                return Err(Error::InvalidArgument("uniform coefficient range is empty".into()));
            }
        }
        if let Some(x) = &self.covariates {
            let total: usize = sizes.iter().sum();
            if x.shape() != (total, self.p) {
                return Err(Error::Dimension(format!(
                    "fixed covariates are {:?}, expected ({total}, {})",
                    x.shape(),
                    self.p
                )));
            }
        }
        Ok(())
    }
}

fn cholesky_factor(r: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    r.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Precomputed pieces shared by all replicates of a configuration.
#[derive(Debug, Clone)]
pub struct SimulationDesign {
    config: SimulationConfig,
    sizes: Vec<usize>,
    support: Vec<usize>,
    beta0: DVector<f64>,
    x_factor: Option<DMatrix<f64>>,
    /// Lower Cholesky factor of `R0` per cluster size.
    r_factors: Vec<Option<DMatrix<f64>>>,
}

impl SimulationDesign {
    pub fn new(config: &SimulationConfig) -> Result<Self> {
        config.validate()?;
        let sizes = config.sizes();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut support = sample(&mut rng, config.p, config.s0).into_vec();
        support.sort_unstable();
        let mut beta0 = DVector::zeros(config.p);
        for &j in &support {
            beta0[j] = match config.coef {
                CoefficientValue::Fixed(v) => v,
                CoefficientValue::Uniform(a, b) => rng.random_range(a..b),
            };
        }
        let x_factor = match config.covariates {
            Some(_) => None,
            None => Some(cholesky_factor(ar1_matrix(config.p, config.x_rho), "covariate correlation")?),
        };
        let max_m = sizes.iter().copied().max().unwrap_or(0);
        let mut r_factors = vec![None; max_m + 1];
        for &m in &sizes {
            if r_factors[m].is_none() {
                r_factors[m] = Some(cholesky_factor(config.true_corr.matrix(m)?, "true correlation")?);
            }
        }
        Ok(Self {
            config: config.clone(),
            sizes,
            support,
            beta0,
            x_factor,
            r_factors,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn beta0(&self) -> &DVector<f64> {
        &self.beta0
    }

    /// The three smallest indices outside the support.
    pub fn noise_targets(&self) -> Vec<usize> {
        (0..self.config.p).filter(|j| !self.support.contains(j)).take(3).collect()
    }

    /// Support followed by the noise targets.
    pub fn default_targets(&self) -> Vec<usize> {
        let mut t = self.support.clone();
        t.extend(self.noise_targets());
        t
    }

    /// Draws replicate `replicate`; identical inputs give identical data.
    pub fn generate(&self, replicate: u64) -> Result<ClusteredDataset> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(replicate + 1);
        let total: usize = self.sizes.iter().sum();
        let x = match (&cfg.covariates, &self.x_factor) {
            (Some(x), _) => x.as_ref().clone(),
            (None, Some(l)) => {
                let z = DMatrix::from_fn(total, cfg.p, |_, _| rng.sample::<f64, _>(StandardNormal));
                z * l.transpose()
            }
            (None, None) => unreachable!(),
        };
        let eta = &x * &self.beta0;
        let normal = Normal::standard();
        let mut clusters = Vec::with_capacity(cfg.n);
        let mut start = 0;
        for (i, &m) in self.sizes.iter().enumerate() {
            let l = self.r_factors[m].as_ref().unwrap();
            let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let e = l * z;
            let y = DVector::from_fn(m, |j, _| {
                let eta_ij = eta[start + j];
                match cfg.family {
                    Family::Gaussian => eta_ij + e[j],
                    Family::Logit => f64::from(normal.cdf(e[j]) <= cfg.family.mu(eta_ij)),
                }
            });
            clusters.push(Cluster::new(format!("{}", i + 1), x.rows(start, m).clone_owned(), y));
            start += m;
        }
        let names = (1..=cfg.p).map(|j| format!("x{j}")).collect();
        ClusteredDataset::with_names(clusters, names)
    }
}

/// Draws one replicate of `config`, returning the data and `beta0`.
pub fn gen_dataset(config: &SimulationConfig, replicate: u64) -> Result<(ClusteredDataset, DVector<f64>)> {
    let design = SimulationDesign::new(config)?;
    let data = design.generate(replicate)?;
    Ok((data, design.beta0))
}

/// Low-dimensional GEE fit on a known support.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit {
    pub support: Vec<usize>,
    pub beta: DVector<f64>,
    /// Sandwich standard errors.
    pub se: DVector<f64>,
    pub iterations: usize,
}

pub const ORACLE_TOL: f64 = 1e-8;
pub const ORACLE_MAX_ITER: usize = 100;

/// Newton scoring for `psi = 0` on the support columns, re-estimating the
/// working correlation at every iterate.
pub fn oracle_gee_fit(
    dataset: &ClusteredDataset,
    family: Family,
    support: &[usize],
    corr_kind: CorrelationKind,
) -> Result<OracleFit> {
    if support.is_empty() {
        return Ok(OracleFit {
            support: Vec::new(),
            beta: DVector::zeros(0),
            se: DVector::zeros(0),
            iterations: 0,
        });
    }
    if support.len() >= dataset.total_obs() {
        return Err(Error::InvalidArgument(format!(
            "support of size {} needs more than {} observations",
            support.len(),
            dataset.total_obs()
        )));
    }
    let sub = dataset.select_columns(support)?;
    let mut beta = DVector::zeros(support.len());
    let mut trace = Vec::new();
    for it in 0..=ORACLE_MAX_ITER {
        let corr = gee::estimate_gamma_with(&sub, family, &beta, corr_kind, UnstructuredPooling::MaxSizeClusters)?;
        let (psi, s) = gee::psi_and_sensitivity(&sub, family, &beta, &corr)?;
        let norm = psi.amax();
        trace.push(norm);
        if norm < ORACLE_TOL {
            let m = gee::gee_matrices(&sub, family, &beta, &corr)?;
            let s_inv = m
                .s
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::NotPositiveDefinite("oracle sensitivity".into()))?;
            let cov = &s_inv * &m.v * &s_inv / sub.n() as f64;
            let se = DVector::from_fn(support.len(), |j, _| cov[(j, j)].max(0.0).sqrt());
            return Ok(OracleFit {
                support: support.to_vec(),
                beta,
                se,
                iterations: it,
            });
        }
        if it == ORACLE_MAX_ITER {
            break;
        }
        let step = s
            .lu()
            .solve(&psi)
            .ok_or_else(|| Error::NotPositiveDefinite("oracle sensitivity".into()))?;
        beta += step;
    }
    let tail: Vec<String> = trace.iter().rev().take(5).rev().map(|v| format!("{v:.3e}")).collect();
    Err(Error::NonConvergence(format!(
        "oracle GEE after {ORACLE_MAX_ITER} iterations; last |psi|_inf: {}",
        tail.join(", ")
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloOptions {
    pub pipeline: PipelineOptions,
    /// Also fit the oracle GEE on the true support.
    pub oracle: bool,
    /// Keep per-replicate estimates in the report.
    pub keep_records: bool,
    /// Parallelism across replicates; each replicate then runs sequentially.
    pub execution: Execution,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self {
            pipeline: PipelineOptions::default(),
            oracle: false,
            keep_records: false,
            execution: Execution::Parallel,
        }
    }
}

/// One estimate of one target in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: u64,
    pub method: String,
    pub index: usize,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    /// NaN for the oracle.
    pub lambda_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub index: usize,
    pub is_signal: bool,
    pub true_value: f64,
    pub bias: f64,
    pub coverage: f64,
    pub ci_length: f64,
    pub emp_se: f64,
    /// Mean model-based standard error.
    pub mean_se: f64,
    /// Replicates contributing to this row.
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub bias: f64,
    pub coverage: f64,
    pub ci_length: f64,
    pub emp_se: f64,
    pub mean_se: f64,
    pub coefficients: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    /// `hdgee-1se`, `hdgee-min` or `oracle`.
    pub method: String,
    pub rows: Vec<CoefficientSummary>,
    pub signal: Option<Aggregate>,
    pub noise: Option<Aggregate>,
    pub replicates: usize,
    /// Replicates that failed as a whole.
    pub failures: usize,
    /// Failed (replicate, target) pairs inside otherwise successful replicates.
    pub target_failures: usize,
    pub failure_messages: Vec<String>,
    pub records: Vec<ReplicateRecord>,
}

fn method_name(rule: LambdaPrimeRule) -> &'static str {
    match rule {
        LambdaPrimeRule::OneSe => "hdgee-1se",
        LambdaPrimeRule::Min => "hdgee-min",
    }
}

/// Reports for several methods from one set of replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloStudy {
    pub reports: Vec<MonteCarloReport>,
}

impl MonteCarloStudy {
    pub fn report(&self, method: &str) -> Option<&MonteCarloReport> {
        self.reports.iter().find(|r| r.method == method)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "method", "row", "index", "is_signal", "true_value", "bias", "coverage", "ci_length", "emp_se", "mean_se",
            "count", "failures",
        ])?;
        for r in &self.reports {
            let failures = (r.failures + r.target_failures).to_string();
            for row in &r.rows {
                w.write_record([
                    r.method.clone(),
                    "coefficient".into(),
                    (row.index + 1).to_string(),
                    row.is_signal.to_string(),
                    format_f64(row.true_value),
                    format_f64(row.bias),
                    format_f64(row.coverage),
                    format_f64(row.ci_length),
                    format_f64(row.emp_se),
                    format_f64(row.mean_se),
                    row.count.to_string(),
                    failures.clone(),
                ])?;
            }
            for (label, agg) in [("signal", r.signal), ("noise", r.noise)] {
                if let Some(a) = agg {
                    w.write_record([
                        r.method.clone(),
                        label.into(),
                        String::new(),
                        (label == "signal").to_string(),
                        String::new(),
                        format_f64(a.bias),
                        format_f64(a.coverage),
                        format_f64(a.ci_length),
                        format_f64(a.emp_se),
                        format_f64(a.mean_se),
                        a.coefficients.to_string(),
                        failures.clone(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_records_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["method", "replicate", "index", "estimate", "se", "lower", "upper", "lambda_prime"])?;
        for r in &self.reports {
            for rec in &r.records {
                w.write_record([
                    rec.method.clone(),
                    rec.replicate.to_string(),
                    (rec.index + 1).to_string(),
                    format_f64(rec.estimate),
                    format_f64(rec.se),
                    format_f64(rec.lower),
                    format_f64(rec.upper),
                    format_f64(rec.lambda_prime),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable aggregate table.
    pub fn pretty(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:<7} {:>8} {:>7} {:>7} {:>7} {:>7}  {}",
            "method", "coefs", "Bias", "Cov", "Len", "EmpSE", "SE", "reps (failed)"
        );
        for r in &self.reports {
            for (label, agg) in [("signal", r.signal), ("noise", r.noise)] {
                if let Some(a) = agg {
                    let _ = writeln!(
                        out,
                        "{:<10} {:<7} {:>8.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3}  {} ({})",
                        r.method,
                        label,
                        a.bias,
                        a.coverage,
                        a.ci_length,
                        a.emp_se,
                        a.mean_se,
                        r.replicates,
                        r.failures + r.target_failures
                    );
                }
            }
        }
        out
    }
}

struct Estimate {
    estimate: f64,
    se: f64,
    lower: f64,
    upper: f64,
    lambda_prime: f64,
}

/// Per-method, per-target estimates of one replicate.
type ReplicateOutput = Vec<Vec<std::result::Result<Estimate, String>>>;

fn run_replicate(
    design: &SimulationDesign,
    rep: u64,
    targets: &[usize],
    opts: &MonteCarloOptions,
    rules: &[LambdaPrimeRule],
    pipeline: &PipelineOptions,
) -> Result<ReplicateOutput> {
    let data = design.generate(rep)?;
    let analysis = Analysis::fit(&data, pipeline, derive_seed(design.config.seed, &[rep, 11]))?;
    let p = design.config.p;
    let mut out: ReplicateOutput = rules.iter().map(|_| Vec::with_capacity(targets.len())).collect();
    for &j in targets {
        let mut xi = DVector::zeros(p);
        xi[j] = 1.0;
        match analysis.infer_rules(&xi, rules) {
            Ok((_, results)) => {
                for (slot, r) in out.iter_mut().zip(results) {
                    slot.push(
                        r.map(|(res, _)| Estimate {
                            estimate: res.theta_tilde,
                            se: res.se,
                            lower: res.ci.0,
                            upper: res.ci.1,
                            lambda_prime: res.lambda_prime_used,
                        })
                        .map_err(|e| e.to_string()),
                    );
                }
            }
            Err(e) => {
                for slot in out.iter_mut() {
                    slot.push(Err(e.to_string()));
                }
            }
        }
    }
    if opts.oracle {
        let z = normal_quantile_upper(pipeline.alpha);
        let oracle = oracle_gee_fit(&data, design.config.family, &design.support, pipeline.corr_kind);
        let col = targets
            .iter()
            .map(|j| match (&oracle, design.support.iter().position(|s| s == j)) {
                (Ok(fit), Some(k)) => Ok(Estimate {
                    estimate: fit.beta[k],
                    se: fit.se[k],
                    lower: fit.beta[k] - z * fit.se[k],
                    upper: fit.beta[k] + z * fit.se[k],
                    lambda_prime: f64::NAN,
                }),
                // a coordinate outside the support is exactly zero under the oracle
                (Ok(_), None) => Ok(Estimate {
                    estimate: 0.0,
                    se: 0.0,
                    lower: 0.0,
                    upper: 0.0,
                    lambda_prime: f64::NAN,
                }),
                (Err(e), _) => Err(e.to_string()),
            })
            .collect();
        out.push(col);
    }
    Ok(out)
}

fn sample_sd(values: &[f64]) -> f64 {
    let k = values.len();
    if k < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
}

fn aggregate(rows: &[&CoefficientSummary]) -> Option<Aggregate> {
    let rows: Vec<_> = rows.iter().filter(|r| r.count > 0).collect();
    if rows.is_empty() {
        return None;
    }
    let k = rows.len() as f64;
    let avg = |f: fn(&CoefficientSummary) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / k;
    Some(Aggregate {
        bias: avg(|r| r.bias),
        coverage: avg(|r| r.coverage),
        ci_length: avg(|r| r.ci_length),
        emp_se: avg(|r| r.emp_se),
        mean_se: avg(|r| r.mean_se),
        coefficients: rows.len(),
    })
}

/// Runs the study once and summarizes it under every rule in `rules`
/// (plus the oracle when requested). `targets` are 0-based.
pub fn run_study(
    config: &SimulationConfig,
    targets: &[usize],
    opts: &MonteCarloOptions,
    rules: &[LambdaPrimeRule],
) -> Result<MonteCarloStudy> {
    let design = SimulationDesign::new(config)?;
    if let Some(&bad) = targets.iter().find(|&&j| j >= config.p) {
        return Err(Error::InvalidArgument(format!("target {bad} out of range for p = {}", config.p)));
    }
    if rules.is_empty() && !opts.oracle {
        return Err(Error::InvalidArgument("no method to evaluate".into()));
    }
    let mut pipeline = opts.pipeline.clone();
    pipeline.family = config.family;
    if opts.execution == Execution::Parallel && par::parallel_available() {
        pipeline = pipeline.with_execution(Execution::Sequential);
    }
    let outputs = par::map_range(opts.execution, config.reps, |rep| {
        run_replicate(&design, rep as u64, targets, opts, rules, &pipeline)
    });

    let mut methods: Vec<String> = rules.iter().map(|r| method_name(*r).to_string()).collect();
    if opts.oracle {
        methods.push("oracle".into());
    }
    let mut failure_messages = Vec::new();
    let mut failures = 0;
    let ok: Vec<(u64, ReplicateOutput)> = outputs
        .into_iter()
        .enumerate()
        .filter_map(|(rep, o)| match o {
            Ok(v) => Some((rep as u64, v)),
            Err(e) => {
                failures += 1;
                failure_messages.push(format!("replicate {rep}: {e}"));
                None
            }
        })
        .collect();

    let reports = methods
        .iter()
        .enumerate()
        .map(|(mi, method)| {
            let mut records = Vec::new();
            let mut messages = failure_messages.clone();
            let mut target_failures = 0;
            let is_oracle = method == "oracle";
            let rows = targets
                .iter()
                .enumerate()
                .filter(|(_, j)| !is_oracle || design.support.contains(j))
                .map(|(ti, &j)| {
                    let truth = design.beta0[j];
                    let mut est = Vec::new();
                    let (mut covered, mut len, mut se) = (0usize, 0.0, 0.0);
                    for (rep, out) in &ok {
                        match &out[mi][ti] {
                            Ok(e) => {
                                est.push(e.estimate);
                                covered += usize::from(e.lower <= truth && truth <= e.upper);
                                len += e.upper - e.lower;
                                se += e.se;
                                if opts.keep_records {
                                    records.push(ReplicateRecord {
                                        replicate: *rep,
                                        method: method.clone(),
                                        index: j,
                                        estimate: e.estimate,
                                        se: e.se,
                                        lower: e.lower,
                                        upper: e.upper,
                                        lambda_prime: e.lambda_prime,
                                    });
                                }
                            }
                            Err(msg) => {
                                target_failures += 1;
                                messages.push(format!("replicate {rep}, coefficient {}: {msg}", j + 1));
                            }
                        }
                    }
                    let c = est.len();
                    let cf = c.max(1) as f64;
                    CoefficientSummary {
                        index: j,
                        is_signal: truth != 0.0,
                        true_value: truth,
                        bias: if c == 0 { f64::NAN } else { est.iter().sum::<f64>() / cf - truth },
                        coverage: covered as f64 / cf,
                        ci_length: len / cf,
                        emp_se: sample_sd(&est),
                        mean_se: se / cf,
                        count: c,
                    }
                })
                .collect::<Vec<_>>();
            let signal = aggregate(&rows.iter().filter(|r| r.is_signal).collect::<Vec<_>>());
            let noise = aggregate(&rows.iter().filter(|r| !r.is_signal).collect::<Vec<_>>());
            MonteCarloReport {
                method: method.clone(),
                rows,
                signal,
                noise,
                replicates: ok.len(),
                failures,
                target_failures,
                failure_messages: messages,
                records,
            }
        })
        .collect();
    Ok(MonteCarloStudy { reports })
}

/// Monte Carlo summary for the pipeline's configured rule.
pub fn run_monte_carlo(
    config: &SimulationConfig,
    targets: &[usize],
    opts: &MonteCarloOptions,
) -> Result<MonteCarloReport> {
    let study = run_study(config, targets, opts, &[opts.pipeline.rule])?;
    Ok(study.reports.into_iter().next().unwrap())
}
