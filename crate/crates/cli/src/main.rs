mod json;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde_json::{json, Value};

use hdgee::gee::{CorrelationKind, WorkingCorrelation};
use hdgee::inference::{Analysis, LambdaPrimeRule, PipelineOptions, TargetInference};
use hdgee::lasso::{self, LambdaCvOptions};
use hdgee::sim::{self, MonteCarloOptions, SimulationConfig, SimulationDesign};
use hdgee::{format_f64, ClusteredDataset, ColumnSpec, Error, Execution, Family};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "hdgee", version, about = "High-dimensional GEE estimation and de-biased inference")]
struct Cli {
    /// Worker threads (1 runs everything sequentially).
    #[arg(long, global = true, env = "HDGEE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the penalized initial estimator and working correlation.
    Fit(FitArgs),
    /// Confidence intervals for chosen coefficients or linear combinations.
    Infer(InferArgs),
    /// Test every coefficient with Benjamini-Hochberg adjustment.
    Screen(ScreenArgs),
    /// Monte Carlo coverage study on synthetic data.
    Simulate(SimulateArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Input CSV with one row per observation.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "cluster")]
    cluster_col: String,
    #[arg(long, default_value = "y")]
    response_col: String,
    /// Comma-separated covariate columns (default: all other columns).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Append a constant covariate.
    #[arg(long)]
    intercept: bool,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value = "gaussian")]
    family: Family,
    /// independence, ar1, exchangeable or unstructured.
    #[arg(long, default_value = "ar1")]
    corr: CorrelationKind,
    /// Folds for choosing the lasso penalty.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output path prefix.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct InferenceArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Folds for choosing lambda'.
    #[arg(long, default_value_t = 5)]
    lambda_prime_folds: usize,
    /// Trial lambda' values as multiples of max|xi|, comma-separated.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// 1se or min.
    #[arg(long, default_value = "1se")]
    rule: LambdaPrimeRule,
    /// Fit on one half of the clusters and infer on the other.
    #[arg(long)]
    split: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    inference: InferenceArgs,
    /// 1-based coefficient indices, comma-separated or repeated.
    #[arg(long, value_delimiter = ',')]
    coef: Vec<usize>,
    /// Dense loading vector, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    xi: Option<Vec<f64>>,
    /// File holding a dense loading vector (whitespace or comma separated).
    #[arg(long)]
    xi_file: Option<PathBuf>,
}

#[derive(Args)]
struct ScreenArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    inference: InferenceArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// table1, table2 or ribo-style.
    #[arg(long)]
    preset: String,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    s0: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Working correlation used by the method.
    #[arg(long, default_value = "ar1")]
    corr: CorrelationKind,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Selection rules to evaluate, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1se")]
    rules: Vec<LambdaPrimeRule>,
    /// Include the oracle GEE fit on the true support.
    #[arg(long)]
    oracle: bool,
    /// Also write per-replicate estimates to `<out>.raw.csv`.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let execution = match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        Some(1) => Execution::Sequential,
        Some(t) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
                log::warn!("could not size the thread pool: {e}");
            }
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(&a, execution),
        Command::Infer(a) => cmd_infer(&a, execution),
        Command::Screen(a) => cmd_screen(&a, execution),
        Command::Simulate(a) => cmd_simulate(&a, execution),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_DATA })
        }
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &Value) -> hdgee::Result<()> {
    let text = json::to_string(value).map_err(|e| Error::Data(format!("serializing JSON: {e}")))?;
    fs::write(path, text).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

fn load(data: &DataArgs, family: Family) -> hdgee::Result<ClusteredDataset> {
    let spec = ColumnSpec {
        cluster: data.cluster_col.clone(),
        response: data.response_col.clone(),
        covariates: data.covariates.clone(),
    };
    let d = hdgee::load_csv(&data.input, &spec)?;
    let d = if data.intercept { d.with_intercept() } else { d };
    if let Some(i) = d.y().iter().position(|&y| !family.validate_response(y)) {
        return Err(Error::Data(format!(
            "response {} in row {} is not valid for the {} family",
            d.y()[i],
            i + 1,
            family.name()
        )));
    }
    Ok(d)
}

fn pipeline(model: &ModelArgs, inference: Option<&InferenceArgs>, execution: Execution) -> PipelineOptions {
    let mut opts = PipelineOptions {
        family: model.family,
        corr_kind: model.corr,
        lambda_cv: LambdaCvOptions {
            folds: model.folds,
            ..Default::default()
        },
        ..Default::default()
    };
    if let Some(inf) = inference {
        opts.lambda_prime_folds = inf.lambda_prime_folds;
        opts.lambda_prime_grid = inf.grid.clone();
        opts.rule = inf.rule;
        opts.alpha = inf.alpha;
        opts.split = inf.split;
    }
    opts.with_execution(execution)
}

fn nums(values: impl IntoIterator<Item = f64>) -> Value {
    Value::Array(values.into_iter().map(|v| json!(v)).collect())
}

fn correlation_json(corr: &WorkingCorrelation) -> Value {
    let matrix = match corr {
        WorkingCorrelation::Unstructured(r) => {
            Value::Array((0..r.nrows()).map(|i| nums(r.row(i).iter().copied())).collect())
        }
        _ => Value::Null,
    };
    json!({
        "kind": corr.kind(),
        "gamma": corr.gamma(),
        "matrix": matrix,
    })
}

fn fit_json(data: &ClusteredDataset, model: &ModelArgs, analysis_fit: &FitSummary) -> Value {
    let fit = &analysis_fit.lasso;
    let names = data.covariate_names();
    json!({
        "family": model.family,
        "correlation": model.corr,
        "seed": model.seed,
        "clusters": data.n(),
        "observations": data.total_obs(),
        "p": data.p(),
        "covariates": names,
        "lambda": fit.lambda,
        "lambda_index": analysis_fit.path.selected + 1,
        "beta": nums(fit.beta_hat.iter().copied()),
        "nonzero": fit.beta_hat.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, _)| names[j].clone()).collect::<Vec<_>>(),
        "converged": fit.converged,
        "kkt_residual": fit.kkt_residual,
        "objective": fit.objective,
        "gamma": analysis_fit.corr.gamma(),
        "working_correlation": correlation_json(&analysis_fit.corr),
    })
}

struct FitSummary {
    path: lasso::LambdaPath,
    lasso: lasso::LassoFit,
    corr: WorkingCorrelation,
}

fn write_path_csv(path: &Path, p: &lasso::LambdaPath) -> hdgee::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "cv_mean", "cv_se", "selected"])?;
    for i in 0..p.values.len() {
        w.write_record([
            format_f64(p.values[i]),
            format_f64(p.cv_mean[i]),
            format_f64(p.cv_se[i]),
            (i == p.selected).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_fit(a: &FitArgs, execution: Execution) -> hdgee::Result<()> {
    let data = load(&a.data, a.model.family)?;
    let opts = pipeline(&a.model, None, execution);
    let (path, fit) = lasso::cv_select_lambda(&data, a.model.family, a.model.seed, &opts.lambda_cv)?;
    let corr = hdgee::inference::estimate_correlation(&data, a.model.family, &fit.beta_hat, a.model.corr)?;
    let summary = FitSummary { path, lasso: fit, corr };
    write_json(&with_suffix(&a.model.out, ".fit.json"), &fit_json(&data, &a.model, &summary))?;
    write_path_csv(&with_suffix(&a.model.out, ".path.csv"), &summary.path)
}

fn summary_of(analysis: &Analysis) -> FitSummary {
    let init = analysis.initial();
    FitSummary {
        path: init.path.clone(),
        lasso: init.lasso.clone(),
        corr: init.corr.clone(),
    }
}

fn parse_xi_file(path: &Path) -> hdgee::Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Data(format!("invalid number '{t}' in {}", path.display())))
        })
        .collect()
}

fn target_json(label: &str, xi: &DVector<f64>, t: &TargetInference) -> Value {
    let r = &t.result;
    json!({
        "target": label,
        "xi": nums(xi.iter().copied()),
        "theta_hat": r.theta_hat,
        "estimate": r.theta_tilde,
        "se": r.se,
        "ci_lower": r.ci.0,
        "ci_upper": r.ci.1,
        "z": r.z,
        "p_value": r.p_value,
        "lambda_prime": r.lambda_prime_used,
        "cv": {
            "grid": nums(t.curve.grid.iter().copied()),
            "cv_value": nums(t.curve.cv_value.iter().copied()),
            "se_at_min": t.curve.se_at_min,
            "selected": t.curve.selected + 1,
            "selected_min": t.curve.selected_min + 1,
        },
    })
}

fn cmd_infer(a: &InferArgs, execution: Execution) -> hdgee::Result<()> {
    let data = load(&a.data, a.model.family)?;
    let p = data.p();
    let mut targets: Vec<(String, DVector<f64>)> = Vec::new();
    for &j in &a.coef {
        if j == 0 || j > p {
            return Err(Error::InvalidArgument(format!("--coef {j} outside 1..={p}")));
        }
        let mut xi = DVector::zeros(p);
        xi[j - 1] = 1.0;
        targets.push((data.covariate_names()[j - 1].clone(), xi));
    }
    let dense = match (&a.xi, &a.xi_file) {
        (Some(v), None) => Some(v.clone()),
        (None, Some(f)) => Some(parse_xi_file(f)?),
        (None, None) => None,
        (Some(_), Some(_)) => return Err(Error::InvalidArgument("give --xi or --xi-file, not both".into())),
    };
    if let Some(v) = dense {
        if v.len() != p {
            return Err(Error::Dimension(format!("loading vector has {} entries, p = {p}", v.len())));
        }
        targets.push(("xi".into(), DVector::from_vec(v)));
    }
    if targets.is_empty() {
        return Err(Error::InvalidArgument("nothing to infer: give --coef, --xi or --xi-file".into()));
    }
    let opts = pipeline(&a.model, Some(&a.inference), execution);
    let analysis = Analysis::fit(&data, &opts, a.model.seed)?;
    let mut results = Vec::with_capacity(targets.len());
    for (label, xi) in &targets {
        results.push(target_json(label, xi, &analysis.infer(xi)?));
    }
    let out = json!({
        "alpha": a.inference.alpha,
        "rule": a.inference.rule,
        "split": a.inference.split,
        "fit": fit_json(&data, &a.model, &summary_of(&analysis)),
        "targets": results,
    });
    write_json(&with_suffix(&a.model.out, ".infer.json"), &out)
}

fn cmd_screen(a: &ScreenArgs, execution: Execution) -> hdgee::Result<()> {
    let data = load(&a.data, a.model.family)?;
    let opts = pipeline(&a.model, Some(&a.inference), execution);
    let analysis = Analysis::fit(&data, &opts, a.model.seed)?;
    let rows = analysis.screen(data.covariate_names())?;
    write_json(
        &with_suffix(&a.model.out, ".fit.json"),
        &fit_json(&data, &a.model, &summary_of(&analysis)),
    )?;
    let mut w = csv::Writer::from_path(with_suffix(&a.model.out, ".screen.csv"))?;
    w.write_record([
        "rank", "index", "name", "estimate", "se", "ci_lower", "ci_upper", "p_value", "p_adjusted", "flagged",
        "lambda_prime", "note",
    ])?;
    for (rank, row) in rows.iter().enumerate() {
        let (est, se, lo, hi, pv, lp) = match &row.result {
            Some(r) => (r.theta_tilde, r.se, r.ci.0, r.ci.1, r.p_value, r.lambda_prime_used),
            None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN, 1.0, f64::NAN),
        };
        w.write_record([
            (rank + 1).to_string(),
            (row.index + 1).to_string(),
            row.name.clone(),
            format_f64(est),
            format_f64(se),
            format_f64(lo),
            format_f64(hi),
            format_f64(pv),
            format_f64(row.p_adjusted),
            row.flagged.to_string(),
            format_f64(lp),
            row.note.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let flagged = rows.iter().filter(|r| r.flagged).count();
    eprintln!("{flagged} of {} covariates flagged at adjusted level {}", rows.len(), a.inference.alpha);
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, execution: Execution) -> hdgee::Result<()> {
    let mut config = SimulationConfig::preset(&a.preset)?;
    if let Some(r) = a.reps {
        config.reps = r;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(p) = a.p {
        config.p = p;
    }
    if let Some(s0) = a.s0 {
        config.s0 = s0;
    }
    if let Some(n) = a.n {
        if !matches!(config.cluster_sizes, sim::ClusterSizes::Fixed(_)) {
            return Err(Error::InvalidArgument(format!("--n cannot change the {} layout", a.preset)));
        }
        config.n = n;
    }
    let design = SimulationDesign::new(&config)?;
    let opts = MonteCarloOptions {
        pipeline: PipelineOptions {
            corr_kind: a.corr,
            alpha: a.alpha,
            ..Default::default()
        },
        oracle: a.oracle,
        keep_records: a.raw,
        execution,
    };
    let study = sim::run_study(&config, &design.default_targets(), &opts, &a.rules)?;
    let mc = with_suffix(&a.out, ".mc.csv");
    study.write_csv(fs::File::create(&mc)?)?;
    if a.raw {
        study.write_records_csv(fs::File::create(with_suffix(&a.out, ".raw.csv"))?)?;
    }
    let table = study.pretty();
    fs::write(with_suffix(&a.out, ".mc.txt"), &table)?;
    print!("{table}");
    for r in &study.reports {
        for m in &r.failure_messages {
            log::warn!("{}: {m}", r.method);
        }
    }
    Ok(())
}
