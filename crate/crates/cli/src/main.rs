//! `crosslmm` command-line front end. Every invocation writes one JSON
//! document (or a table with `--pretty`); errors go to stderr as JSON.
//!
//! Exit codes: 0 success, 1 input or data error, 2 numerical failure
//! (non-convergence, failed verification, failed power study).

mod pretty;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crosslmm::asymptotics::{infer, InferenceOptions, Regime, SeMethod};
use crosslmm::design_power::{power_at, sample_size, DesignSpec};
use crosslmm::mle::{fit_mle, FitOptions};
use crosslmm::model_data::{load_csv, write_csv, ColumnSchema};
use crosslmm::simlab::{eq8_config, generate, power_study_with, Eq8Truth, PowerStudyOptions, SimConfig};
use crosslmm::verify::run_suite;
use crosslmm::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "crosslmm", version, about = "Crossed random effects linear mixed models")]
struct Cli {
    /// Render a human-readable table instead of JSON.
    #[arg(long, global = true)]
    pretty: bool,
    /// Write the output document to this file instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads for replicate loops (simulate, power).
    #[arg(long, global = true, env = "CROSSLMM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to a CSV file and report asymptotic inference.
    Fit(FitArgs),
    /// Number of row levels needed to detect the interaction slope.
    Ssize(DesignArgs),
    /// Simulated power (or size) of the one-sided interaction test.
    Power(PowerArgs),
    /// Write simulated datasets as CSV files.
    Simulate(SimulateArgs),
    /// Run a numerical verification suite.
    Verify(VerifyArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SeArg {
    Result1,
    Fisher,
}

impl From<SeArg> for SeMethod {
    fn from(s: SeArg) -> Self {
        match s {
            SeArg::Result1 => SeMethod::Result1,
            SeArg::Fisher => SeMethod::FisherExact,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    Comparable,
    FewColumnLevels,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Input CSV file.
    #[arg(long)]
    data: PathBuf,
    /// Column mapping as a JSON file; overrides the column flags.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value = "row")]
    row_factor: String,
    #[arg(long, default_value = "col")]
    col_factor: String,
    #[arg(long, default_value = "y")]
    response: String,
    /// Comma-separated X_A columns (random slopes).
    #[arg(long, value_delimiter = ',')]
    xa: Vec<String>,
    /// Comma-separated X_B columns (fixed only).
    #[arg(long, value_delimiter = ',')]
    xb: Vec<String>,
    /// Prepend an intercept column to X_A.
    #[arg(long)]
    intercept: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = SeArg::Result1)]
    se: SeArg,
    #[arg(long, value_enum, default_value_t = RegimeArg::Comparable)]
    regime: RegimeArg,
    /// Null value for a Wald test, as NAME=VALUE; repeatable. Others are 0.
    #[arg(long = "null", value_name = "NAME=VALUE")]
    nulls: Vec<String>,
    /// Seed for jittered optimizer restarts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Default)]
struct DesignArgs {
    /// Alternative interaction slope Δ.
    #[arg(long, value_parser = parse_number)]
    delta: Option<f64>,
    /// Error standard deviation σ.
    #[arg(long, value_parser = parse_number)]
    sigma: Option<f64>,
    /// Bernoulli probability of the binary predictor.
    #[arg(long, value_parser = parse_number)]
    p: Option<f64>,
    /// Variance of the continuous predictor; fractions such as `1/12` are
    /// accepted.
    #[arg(long, value_parser = parse_number)]
    var_x: Option<f64>,
    /// Column levels m'.
    #[arg(long)]
    m_prime: Option<u64>,
    /// Observations per cell.
    #[arg(long, default_value_t = 1)]
    n: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Target power.
    #[arg(long, default_value_t = 0.9)]
    power: f64,
}

/// A decimal number or a fraction `a/b`.
fn parse_number(s: &str) -> Result<f64, String> {
    let value = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("cannot read '{s}' as a number"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("cannot read '{s}' as a number"))?;
            a / b
        }
        None => s.trim().parse().map_err(|_| format!("cannot read '{s}' as a number"))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("'{s}' is not a finite number"))
    }
}

impl DesignArgs {
    fn spec(&self) -> Result<DesignSpec, CliError> {
        let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| CliError::usage(format!("missing --{flag}")));
        let spec = DesignSpec {
            delta: need(self.delta, "delta")?,
            sigma0: need(self.sigma, "sigma")?,
            p_bernoulli: need(self.p, "p")?,
            var_x: need(self.var_x, "var-x")?,
            m_prime: self
                .m_prime
                .ok_or_else(|| CliError::usage("missing --m-prime".into()))?,
            n: self.n,
            alpha: self.alpha,
            power: self.power,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args, Debug)]
struct PowerArgs {
    /// Study description as JSON; replaces the design flags.
    #[arg(long)]
    study: Option<PathBuf>,
    #[command(flatten)]
    design: DesignArgs,
    /// Row levels; defaults to the sample-size formula's answer.
    #[arg(long)]
    m: Option<usize>,
    /// True interaction slope; defaults to Δ. Use 0 for a size check.
    #[arg(long)]
    slope: Option<f64>,
    #[arg(long, default_value_t = 200)]
    replications: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SeArg::Fisher)]
    se: SeArg,
}

/// JSON form of a power study.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StudyFile {
    design: DesignSpec,
    #[serde(default)]
    m: Option<usize>,
    #[serde(default)]
    slope: Option<f64>,
    #[serde(default)]
    truth: Eq8Truth,
    replications: usize,
    base_seed: u64,
    #[serde(default = "default_study_se")]
    se_method: SeMethod,
}

fn default_study_se() -> SeMethod {
    SeMethod::FisherExact
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Simulation config as JSON.
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving `replicate_<k>.csv`.
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of replicates; defaults to the config's `replications`.
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// One of identities, lemma5, lemma6, fisher, eigen.
    #[arg(long)]
    suite: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
    details: Value,
    code: u8,
}

impl CliError {
    fn usage(message: String) -> Self {
        Self {
            kind: "usage",
            message,
            details: Value::Null,
            code: 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (kind, details, code) = match &e {
            Error::Parse { row, column, value } => {
                ("parse", json!({ "row": row, "column": column, "value": value }), 1)
            }
            Error::IncompleteGrid { missing } => ("incomplete_grid", json!({ "missing": missing }), 1),
            Error::Schema(_) => ("schema", Value::Null, 1),
            Error::Io(_) | Error::Csv(_) => ("io", Value::Null, 1),
            Error::UnknownSuite(name) => ("unknown_suite", json!({ "suite": name }), 1),
            Error::Collinear { null_direction } => ("collinear", json!({ "null_direction": null_direction }), 1),
            Error::StudyFailed { failures, total } => {
                ("study_failed", json!({ "failures": failures, "total": total }), 2)
            }
            Error::NotPositiveDefinite { .. } | Error::IllConditioned { .. } | Error::Singular { .. } => {
                ("numerical", Value::Null, 2)
            }
            Error::DegenerateInference { parameter } => ("degenerate_inference", json!({ "parameter": parameter }), 2),
            _ => ("invalid_input", Value::Null, 1),
        };
        Self {
            kind,
            message: e.to_string(),
            details,
            code,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self {
            kind: "json",
            message: e.to_string(),
            details: Value::Null,
            code: 1,
        }
    }
}

/// A finished command: its output document and exit code.
struct Outcome {
    doc: Value,
    code: u8,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError {
        kind: "json",
        message: format!("{}: {e}", path.display()),
        details: Value::Null,
        code: 1,
    })
}

fn cmd_fit(args: &FitArgs) -> Result<Outcome, CliError> {
    let schema = match &args.schema {
        Some(path) => read_json(path)?,
        None => ColumnSchema {
            row_factor: args.row_factor.clone(),
            col_factor: args.col_factor.clone(),
            response: args.response.clone(),
            xa: args.xa.clone(),
            xb: args.xb.clone(),
            add_intercept_a: args.intercept,
        },
    };
    let data = load_csv(&args.data, &schema)?;
    let fit = fit_mle(
        &data,
        &FitOptions {
            seed: args.seed,
            ..FitOptions::default()
        },
    )?;
    let names = crosslmm::ParamLayout::for_data(&data).names();
    let mut theta0 = vec![0.0; names.len()];
    for entry in &args.nulls {
        let (name, value) = entry
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--null expects NAME=VALUE, got '{entry}'")))?;
        let k = names
            .iter()
            .position(|n| n == name.trim())
            .ok_or_else(|| CliError::usage(format!("unknown parameter '{name}' in --null")))?;
        theta0[k] = value
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("cannot read '{value}' as a number in --null")))?;
    }
    let opts = InferenceOptions {
        alpha: args.alpha,
        se_method: args.se.into(),
        regime: match args.regime {
            RegimeArg::Comparable => Regime::Comparable,
            RegimeArg::FewColumnLevels => Regime::FewColumnLevels,
        },
        theta0: Some(theta0),
    };
    let report = infer(&data, &fit, &opts)?;
    let code = if fit.converged { 0 } else { 2 };
    let doc = json!({
        "command": "fit",
        "data": {
            "m": data.m(),
            "m_prime": data.m_prime(),
            "n_total": data.n_total(),
            "d_A": data.d_a(),
            "d_B": data.d_b(),
        },
        "fit": fit,
        "inference": report,
    });
    Ok(Outcome { doc, code })
}

fn cmd_ssize(args: &DesignArgs) -> Result<Outcome, CliError> {
    let spec = args.spec()?;
    let m = sample_size(&spec)?;
    let doc = json!({
        "command": "ssize",
        "design": spec,
        "m": m,
        "power_at_m": power_at(&spec, m)?,
    });
    Ok(Outcome { doc, code: 0 })
}

fn cmd_power(args: &PowerArgs, threads: Option<usize>) -> Result<Outcome, CliError> {
    let study = match &args.study {
        Some(path) => read_json::<StudyFile>(path)?,
        None => StudyFile {
            design: args.design.spec()?,
            m: args.m,
            slope: args.slope,
            truth: Eq8Truth::default(),
            replications: args.replications,
            base_seed: args.seed,
            se_method: args.se.into(),
        },
    };
    study.design.validate()?;
    let m = match study.m {
        Some(m) => m,
        None => sample_size(&study.design)? as usize,
    };
    let slope = study.slope.unwrap_or(study.design.delta);
    let config = eq8_config(
        &study.design,
        m,
        slope,
        &study.truth,
        study.replications,
        study.base_seed,
    )?;
    let opts = PowerStudyOptions {
        se_method: study.se_method,
        threads,
        ..PowerStudyOptions::default()
    };
    let result = power_study_with(&config, study.design.alpha, &opts)?;
    let doc = json!({
        "command": "power",
        "study": study,
        "m": m,
        "slope": slope,
        "formula_power_at_m": power_at(&study.design, m as u64)?,
        "result": result,
    });
    Ok(Outcome { doc, code: 0 })
}

fn cmd_simulate(args: &SimulateArgs, threads: Option<usize>) -> Result<Outcome, CliError> {
    let config: SimConfig = read_json(&args.config)?;
    config.validate()?;
    let count = args.replicates.unwrap_or(config.replications);
    std::fs::create_dir_all(&args.out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::usage(format!("cannot start thread pool: {e}")))?;
    let written: Vec<Result<(PathBuf, ColumnSchema, usize), Error>> = pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|k| {
                let data = generate(&config, k as u64)?;
                let path = args.out_dir.join(format!("replicate_{k}.csv"));
                let schema = write_csv(&data, &path)?;
                Ok((path, schema, data.n_total()))
            })
            .collect()
    });
    let mut files = Vec::with_capacity(count);
    let mut schema = None;
    for w in written {
        let (path, s, n_total) = w?;
        files.push(json!({ "path": path, "n_total": n_total }));
        schema = Some(s);
    }
    let doc = json!({
        "command": "simulate",
        "base_seed": config.base_seed,
        "m": config.m,
        "m_prime": config.m_prime,
        "schema": schema,
        "files": files,
    });
    Ok(Outcome { doc, code: 0 })
}

fn cmd_verify(args: &VerifyArgs) -> Result<Outcome, CliError> {
    let report = run_suite(&args.suite, args.seed)?;
    let code = if report.passed { 0 } else { 2 };
    let mut doc = serde_json::to_value(&report)?;
    doc["command"] = json!("verify");
    doc["seed"] = json!(args.seed);
    Ok(Outcome { doc, code })
}

fn emit(cli: &Cli, outcome: &Outcome) -> Result<(), CliError> {
    let text = if cli.pretty {
        pretty::render(&outcome.doc)
    } else {
        let mut s = serde_json::to_string(&outcome.doc)?;
        s.push('\n');
        s
    };
    match &cli.output {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn fail(err: &CliError) -> ExitCode {
    let doc = json!({
        "error": {
            "kind": err.kind,
            "message": err.message,
            "details": err.details,
        }
    });
    eprintln!("{doc}");
    ExitCode::from(err.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::usage(e.to_string().trim().to_string())),
    };
    let outcome = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Ssize(a) => cmd_ssize(a),
        Command::Power(a) => cmd_power(a, cli.threads),
        Command::Simulate(a) => cmd_simulate(a, cli.threads),
        Command::Verify(a) => cmd_verify(a),
    };
    match outcome.and_then(|o| emit(&cli, &o).map(|_| o.code)) {
        Ok(code) => ExitCode::from(code),
        Err(e) => fail(&e),
    }
}
