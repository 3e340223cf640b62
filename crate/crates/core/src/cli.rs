//! Command-line interface: `fit`, `bootstrap`, `simulate` and `cv-compare`.
//!
//! Every run is determined by its flags and `--seed`; the resolved
//! configuration is hashed into every artifact. Failures print one JSON line
//! `{"error": <kind>, "message": <text>}` on stderr and exit with status 1.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bootstrap::{
    align_effects, confidence_intervals, linear_intervals, run_bootstrap, similarity_and_stability, BootstrapOptions,
    IntervalRow,
};
use crate::data::{ingest_dataset, Schema};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::glm::Family;
use crate::output::{num, opt_num, sha256_hex, ArtifactWriter, Provenance};
use crate::simulation::{default_rules, replicate_seed, run_study, SimConfig, StudyReport};
use crate::tree::{
    bonferroni_threshold, coefficient_paths, cv_fold_assignment, fit_model, FitOptions, StopRule, TreeStructuredModel,
};
use crate::Dataset;

pub const MAX_FOLDS: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "treefuse", version, about = "Tree-structured clustering of categorical predictors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write its partitions, paths and smooth terms.
    Fit(FitArgs),
    /// Bootstrap intervals, similarity matrices and cluster stability.
    Bootstrap(BootstrapArgs),
    /// Simulation study comparing stopping rules.
    Simulate(SimulateArgs),
    /// Repeated k-fold predictive deviance against the model without tree terms.
    CvCompare(CvCompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Comma-separated data file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON schema describing response, column kinds and roles.
    #[arg(long)]
    pub schema: PathBuf,
    /// Overrides the family given in the schema.
    #[arg(long)]
    pub family: Option<Family>,
    /// pvalue:<alpha>, aic, bic or cv:<k>.
    #[arg(long, default_value = "pvalue:0.05")]
    pub stop: String,
    #[arg(long)]
    pub max_splits: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Disable data-parallel execution.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: DataArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub common: DataArgs,
    /// Number of bootstrap replicates.
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// JSON file overriding generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated rules; default: aic,bic,cv:5,cv:10,pvalue:0.05,pvalue:0.1.
    #[arg(long)]
    pub stop: Option<String>,
    #[arg(long)]
    pub max_splits: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CvCompareArgs {
    #[command(flatten)]
    pub common: DataArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 100)]
    pub repetitions: usize,
}

/// Resolved configuration echoed into artifacts and hashed for provenance.
#[derive(Debug, Clone, Serialize)]
struct RunConfig {
    command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    data_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    schema: Option<Schema>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<StopRule>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    rules: Vec<StopRule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_splits: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    folds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    repetitions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    simulation: Option<SimConfig>,
    seed: u64,
}

impl RunConfig {
    fn new(command: &'static str, seed: u64) -> RunConfig {
        RunConfig {
            command,
            data: None,
            data_sha256: None,
            schema: None,
            stop: None,
            rules: Vec::new(),
            max_splits: None,
            bootstrap: None,
            level: None,
            folds: None,
            repetitions: None,
            simulation: None,
            seed,
        }
    }
}

fn exec_of(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

struct Loaded {
    data: Dataset,
    config: RunConfig,
    rule: StopRule,
    options: FitOptions,
}

fn load(command: &'static str, a: &DataArgs) -> Result<Loaded> {
    let bytes = fs::read(&a.data)?;
    let mut schema = Schema::from_json(&fs::read_to_string(&a.schema)?)?;
    if let Some(f) = a.family {
        schema.family = f;
    }
    let data = ingest_dataset(bytes.as_slice(), &schema)?;
    let rule = StopRule::parse(&a.stop, a.seed)?;
    let mut config = RunConfig::new(command, a.seed);
    config.data = Some(a.data.display().to_string());
    config.data_sha256 = Some(sha256_hex(&bytes));
    config.schema = Some(schema);
    config.stop = Some(rule);
    config.max_splits = a.max_splits;
    Ok(Loaded {
        data,
        config,
        rule,
        options: FitOptions {
            max_splits: a.max_splits,
            exec: exec_of(a.sequential),
            ..FitOptions::default()
        },
    })
}

fn writer(out: &Path, config: &RunConfig) -> Result<ArtifactWriter> {
    ArtifactWriter::new(out, Provenance::for_config(config, config.seed)?)
}

#[derive(Serialize)]
struct ModelDocument<'a> {
    config: &'a RunConfig,
    model: &'a TreeStructuredModel,
}

/// Partition, coefficient, path, trace and smooth tables of a fitted model.
fn write_model_tables(w: &mut ArtifactWriter, model: &TreeStructuredModel) -> Result<()> {
    let mut rows = Vec::new();
    for cs in &model.clusters {
        let kind = match cs.kind {
            crate::VariableKind::Nominal { .. } => "nominal",
            crate::VariableKind::Ordinal { .. } => "ordinal",
            crate::VariableKind::Metric => "metric",
            crate::VariableKind::Binary => "binary",
        };
        for (i, cell) in cs.cells.iter().enumerate() {
            rows.push(vec![
                cs.variable.clone(),
                kind.to_string(),
                (i + 1).to_string(),
                cell.levels.iter().map(u32::to_string).collect::<Vec<_>>().join(";"),
                cell.labels.join(";"),
                opt_num(cell.lower),
                opt_num(cell.upper),
                num(cell.effect),
            ]);
        }
    }
    w.csv(
        "partitions.csv",
        &["variable", "kind", "cluster", "levels", "labels", "lower", "upper", "effect"],
        &rows,
    )?;

    let rows: Vec<Vec<String>> = model
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            vec![
                name.clone(),
                num(model.fit.coefficients[j]),
                num(model.fit.covariance[[j, j]].max(0.0).sqrt()),
            ]
        })
        .collect();
    w.csv("coefficients.csv", &["parameter", "estimate", "std_error"], &rows)?;

    let rows: Vec<Vec<String>> = coefficient_paths(&model.trace)
        .into_iter()
        .map(|r| vec![r.step.to_string(), r.parameter, num(r.value)])
        .collect();
    w.csv("paths.csv", &["step", "parameter", "value"], &rows)?;

    let rows: Vec<Vec<String>> = model
        .trace
        .steps
        .iter()
        .map(|s| {
            let (var, thr) = match &s.split {
                Some(sp) => (sp.variable.clone(), num(sp.threshold)),
                None => (String::new(), String::new()),
            };
            let entry = if s.step == 0 {
                String::new()
            } else {
                num(bonferroni_threshold(
                    match model.rule {
                        StopRule::PValue { alpha } => alpha,
                        _ => 0.05,
                    },
                    model.trace.m_total,
                    s.step,
                ))
            };
            vec![
                s.step.to_string(),
                var,
                thr,
                num(s.deviance),
                num(s.log_likelihood),
                num(s.edf),
                opt_num(s.statistic),
                opt_num(s.p_value),
                entry,
                (s.step <= model.n_splits).to_string(),
            ]
        })
        .collect();
    w.csv(
        "trace.csv",
        &[
            "step",
            "variable",
            "threshold",
            "deviance",
            "log_likelihood",
            "edf",
            "statistic",
            "p_value",
            "bonferroni_threshold",
            "selected",
        ],
        &rows,
    )?;

    let mut rows = Vec::new();
    for s in &model.smooths {
        for &(x, f) in &s.grid {
            rows.push(vec![s.variable.clone(), num(x), num(f)]);
        }
    }
    w.csv("smooth.csv", &["variable", "x", "f"], &rows)?;
    Ok(())
}

pub fn cmd_fit(args: &FitArgs) -> Result<Vec<PathBuf>> {
    let l = load("fit", &args.common)?;
    let model = fit_model(&l.data, &l.options, l.rule)?;
    let mut w = writer(&args.common.out, &l.config)?;
    w.json(
        "model.json",
        &ModelDocument {
            config: &l.config,
            model: &model,
        },
    )?;
    write_model_tables(&mut w, &model)?;
    Ok(w.into_written())
}

fn percent_label(p: f64) -> String {
    format!("{}%", (p * 100.0 * 1e6).round() / 1e6)
}

pub fn cmd_bootstrap(args: &BootstrapArgs) -> Result<Vec<PathBuf>> {
    if args.bootstrap < 2 {
        return Err(Error::InvalidArgument(format!(
            "--bootstrap must be at least 2, got {}",
            args.bootstrap
        )));
    }
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(Error::InvalidArgument(format!("--level must lie in (0,1), got {}", args.level)));
    }
    let mut l = load("bootstrap", &args.common)?;
    l.config.bootstrap = Some(args.bootstrap);
    l.config.level = Some(args.level);
    let original = fit_model(&l.data, &l.options, l.rule)?;
    let result = run_bootstrap(
        &l.data,
        &BootstrapOptions {
            replicates: args.bootstrap,
            seed: args.common.seed,
            rule: l.rule,
            fit: l.options.clone(),
            resample: true,
        },
    )?;
    let mut w = writer(&args.common.out, &l.config)?;
    w.json(
        "model.json",
        &ModelDocument {
            config: &l.config,
            model: &original,
        },
    )?;

    let successes = result.successes().count();
    let categorical: Vec<String> = original
        .clusters
        .iter()
        .filter(|c| c.kind.is_categorical())
        .map(|c| c.variable.clone())
        .collect();

    let mut intervals: Vec<IntervalRow> = Vec::new();
    let mut effect_rows = Vec::new();
    let mut sim_rows = Vec::new();
    let mut stab_rows = Vec::new();
    for var in &categorical {
        let aligned = align_effects(&result, &original, var)?;
        if successes >= 2 {
            intervals.extend(confidence_intervals(&aligned, &original, args.level)?);
        }
        for (b, row) in aligned.rows.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                effect_rows.push(vec![b.to_string(), var.clone(), aligned.labels[j].clone(), num(*e)]);
            }
        }
        let (sim, stab) = similarity_and_stability(&result, &original, var)?;
        for i in 0..sim.labels.len() {
            for j in 0..sim.labels.len() {
                sim_rows.push(vec![
                    var.clone(),
                    sim.labels[i].clone(),
                    sim.labels[j].clone(),
                    sim.counts[i][j].to_string(),
                    num(sim.values[i][j]),
                ]);
            }
        }
        for s in stab {
            stab_rows.push(vec![
                var.clone(),
                s.cluster.to_string(),
                s.levels.iter().map(u32::to_string).collect::<Vec<_>>().join(";"),
                s.labels.join(";"),
                num(s.stability),
            ]);
        }
    }
    if successes >= 2 {
        intervals.extend(linear_intervals(&result, &original, args.level)?);
    }

    let tail = (1.0 - args.level) / 2.0;
    let lower = format!("lower_{}", percent_label(tail));
    let upper = format!("upper_{}", percent_label(1.0 - tail));
    let rows: Vec<Vec<String>> = intervals
        .iter()
        .map(|r| {
            vec![
                r.variable.clone(),
                r.parameter.clone(),
                num(r.estimate),
                num(r.lower),
                num(r.upper),
            ]
        })
        .collect();
    w.csv("ci.csv", &["variable", "parameter", "estimate", &lower, &upper], &rows)?;
    w.csv(
        "similarity.csv",
        &["variable", "level_i", "level_j", "count", "similarity"],
        &sim_rows,
    )?;
    w.csv(
        "stability.csv",
        &["variable", "cluster", "levels", "labels", "stability"],
        &stab_rows,
    )?;
    w.csv("replicate_effects.csv", &["replicate", "variable", "level", "effect"], &effect_rows)?;

    let failures: Vec<serde_json::Value> = result
        .outcomes
        .iter()
        .filter_map(|o| match o {
            crate::bootstrap::ReplicateOutcome::Failed { index, error } => {
                Some(serde_json::json!({"replicate": index, "error": error}))
            }
            _ => None,
        })
        .collect();
    w.json(
        "summary.json",
        &serde_json::json!({
            "replicates": result.replicates,
            "successes": successes,
            "failures": result.n_failures(),
            "failure_rate": result.failure_rate(),
            "level": args.level,
            "seed": result.seed,
            "failed_replicates": failures,
        }),
    )?;
    Ok(w.into_written())
}

fn parse_rules(text: &str, seed: u64) -> Result<Vec<StopRule>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| StopRule::parse(s, seed))
        .collect()
}

fn write_study(w: &mut ArtifactWriter, config: &RunConfig, report: &StudyReport) -> Result<()> {
    #[derive(Serialize)]
    struct Doc<'a> {
        config: &'a RunConfig,
        report: &'a StudyReport,
    }
    w.json("report.json", &Doc { config, report })?;
    let rows: Vec<Vec<String>> = report
        .summaries
        .iter()
        .map(|s| {
            let q = &s.quartiles;
            vec![
                s.rule.clone(),
                s.metric.clone(),
                num(q.min),
                num(q.q1),
                num(q.median),
                num(q.q3),
                num(q.max),
            ]
        })
        .collect();
    w.csv("summary.csv", &["rule", "metric", "min", "q1", "median", "q3", "max"], &rows)?;
    let rows: Vec<Vec<String>> = report
        .metrics
        .iter()
        .map(|m| {
            vec![
                m.rule.clone(),
                m.replicate.to_string(),
                m.seed.to_string(),
                num(m.mse_alpha_ordinal),
                num(m.mse_alpha_nominal),
                num(m.mse_beta),
                num(m.fpr),
                num(m.fnr),
                m.splits_ordinal.to_string(),
                m.splits_nominal.to_string(),
                m.splits_total.to_string(),
            ]
        })
        .collect();
    w.csv(
        "metrics.csv",
        &[
            "rule",
            "replicate",
            "seed",
            "mse_alpha_ordinal",
            "mse_alpha_nominal",
            "mse_beta",
            "fpr",
            "fnr",
            "splits_ordinal",
            "splits_nominal",
            "splits_total",
        ],
        &rows,
    )?;
    let mut rows = Vec::new();
    for h in &report.histograms {
        for &(splits, count) in &h.counts {
            rows.push(vec![h.rule.clone(), h.kind.clone(), splits.to_string(), count.to_string()]);
        }
    }
    w.csv("histograms.csv", &["rule", "kind", "splits", "replicates"], &rows)?;
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Vec<PathBuf>> {
    let mut cfg = match &args.config {
        Some(p) => serde_json::from_str::<SimConfig>(&fs::read_to_string(p)?)?,
        None => SimConfig::default(),
    };
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if args.max_splits.is_some() {
        cfg.max_splits = args.max_splits;
    }
    cfg.seed = args.seed;
    let rules = match &args.stop {
        Some(s) => parse_rules(s, args.seed)?,
        None => default_rules(args.seed),
    };
    let report = run_study(&cfg, &rules, exec_of(args.sequential))?;
    let mut config = RunConfig::new("simulate", args.seed);
    config.rules = rules;
    config.simulation = Some(cfg);
    let mut w = writer(&args.out, &config)?;
    write_study(&mut w, &config, &report)?;
    Ok(w.into_written())
}

/// Total held-out deviance of one repetition of k-fold CV, for the model
/// with and without tree terms.
fn cv_repetition(l: &Loaded, baseline: &Dataset, folds: usize, seed: u64) -> Result<(f64, f64)> {
    let n = l.data.n();
    let labels = cv_fold_assignment(n, folds, seed);
    let mut tree = 0.0;
    let mut base = 0.0;
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| labels[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| labels[i] == f).collect();
        for (d, acc) in [(&l.data, &mut tree), (baseline, &mut base)] {
            let train_d = d.select_rows(&train);
            let test_d = d.select_rows(&test);
            let model = fit_model(&train_d, &l.options, l.rule)?;
            let mu = model.predict_mean(&test_d)?;
            *acc += model.fit.family.deviance(&test_d.response, &mu);
        }
    }
    Ok((tree, base))
}

pub fn cmd_cv_compare(args: &CvCompareArgs) -> Result<Vec<PathBuf>> {
    if !(2..=MAX_FOLDS).contains(&args.folds) {
        return Err(Error::InvalidArgument(format!(
            "--folds must lie in 2..={MAX_FOLDS}, got {}",
            args.folds
        )));
    }
    if args.repetitions == 0 {
        return Err(Error::InvalidArgument("--repetitions must be positive".into()));
    }
    let mut l = load("cv-compare", &args.common)?;
    if args.folds > l.data.n() {
        return Err(Error::InvalidArgument(format!(
            "--folds {} exceeds the number of rows {}",
            args.folds,
            l.data.n()
        )));
    }
    l.config.folds = Some(args.folds);
    l.config.repetitions = Some(args.repetitions);
    let baseline = l.data.without_tree();
    let exec = l.options.exec;
    let inner = Loaded {
        data: l.data.clone(),
        config: l.config.clone(),
        rule: l.rule,
        options: FitOptions {
            exec: exec.inner(),
            ..l.options.clone()
        },
    };
    let results = exec.map(args.repetitions, |r| {
        cv_repetition(&inner, &baseline, args.folds, replicate_seed(args.common.seed, r))
    });
    let mut rows = Vec::new();
    let mut tree = Vec::new();
    let mut base = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        let (t, b) = res?;
        rows.push(vec![r.to_string(), "tree".into(), num(t)]);
        rows.push(vec![r.to_string(), "baseline".into(), num(b)]);
        tree.push(t);
        base.push(b);
    }
    let mut w = writer(&args.common.out, &l.config)?;
    w.csv("cv_compare.csv", &["repetition", "model", "deviance"], &rows)?;
    let summary = |v: &[f64]| {
        let q = crate::simulation::Quartiles::of(v).expect("at least one repetition");
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        serde_json::json!({"mean": mean, "median": q.median, "q1": q.q1, "q3": q.q3, "min": q.min, "max": q.max})
    };
    w.json(
        "cv_summary.json",
        &serde_json::json!({
            "folds": args.folds,
            "repetitions": args.repetitions,
            "tree": summary(&tree),
            "baseline": summary(&base),
        }),
    )?;
    Ok(w.into_written())
}

/// Parse `args` (program name first) and run the command.
pub fn run<I, T>(args: I) -> Result<Vec<PathBuf>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    dispatch(&cli)
}

pub fn dispatch(cli: &Cli) -> Result<Vec<PathBuf>> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::CvCompare(a) => cmd_cv_compare(a),
    }
}

/// One-line JSON error record.
pub fn error_line(e: &Error) -> String {
    let message = e.to_string().lines().next().unwrap_or_default().to_string();
    serde_json::json!({"error": e.kind(), "message": message}).to_string()
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let err = Error::InvalidArgument(e.to_string());
            eprintln!("{}", error_line(&err));
            return ExitCode::FAILURE;
        }
    };
    match dispatch(&cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
