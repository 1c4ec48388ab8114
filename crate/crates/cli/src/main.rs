//! Command-line front end for cluster-sample estimation, bootstrap inference
//! and simulation experiments.
//!
//! Exit codes: 0 success, 1 other failures, 2 malformed CSV or configuration,
//! 3 too few populations or a singleton population, 4 too few bootstrap
//! replicates for the requested level, 5 zero between-population variance in
//! a rate table. Failures print a JSON error object on stderr.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use clusterboot::bootstrap::{
    confidence_interval, interval_variance, point_estimate, required_replicates, run_bootstrap,
    BootstrapMoments, BootstrapOptions, BootstrapRun, IntervalEstimate, IntervalMethod,
    ReplicateMoments, SchemeTag, Statistic,
};
use clusterboot::estimators::{estimate_from_summary, summarize, EstimateReport, EstimatorOptions};
use clusterboot::model::ClusterDataset;
use clusterboot::montecarlo::{
    exact_scheme_comparison, rate_table, run_experiment, scheme_comparison, write_metric_csv,
    ExperimentConfig, MetricRow,
};
use clusterboot::Error;

#[derive(Parser, Debug)]
#[command(
    name = "clusterboot",
    version,
    about = "Two-stage cluster sample estimation and bootstrap"
)]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Use the uncorrected literal formula variants instead of the corrected defaults.
    #[arg(long, global = true)]
    compat_printed_formulas: bool,
    /// Clamp a negative between-population variance estimate at zero.
    #[arg(long, global = true)]
    truncate_gamma: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Point and variance estimates for a cluster dataset.
    Estimate(EstimateArgs),
    /// Bootstrap moments and confidence intervals for a cluster dataset.
    Bootstrap(BootstrapArgs),
    /// Run a simulation experiment from a JSON configuration.
    Simulate(ExperimentArgs),
    /// Scaled bootstrap error along a K grid.
    Rates(ExperimentArgs),
    /// Side-by-side comparison of the four resampling schemes.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// CSV with header `population_id,value`.
    #[arg(long)]
    input: PathBuf,
    /// JSON destination (stdout when omitted).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    B2,
    B1u,
    B1w,
    B3,
}

impl From<SchemeArg> for SchemeTag {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::B2 => SchemeTag::B2Individuals,
            SchemeArg::B1u => SchemeTag::B1Uniform,
            SchemeArg::B1w => SchemeTag::B1Weighted,
            SchemeArg::B3 => SchemeTag::B3Cluster,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TargetArg {
    MuN,
    MuPrimeK,
}

impl From<TargetArg> for Statistic {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::MuN => Statistic::MuN,
            TargetArg::MuPrimeK => Statistic::MuPrimeK,
        }
    }
}

#[derive(Args, Debug)]
struct BootstrapArgs {
    /// CSV with header `population_id,value`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// b2: individuals within populations; b1u, b1w: whole populations drawn
    /// uniformly or by size; b3: populations then individuals.
    #[arg(long, value_enum)]
    scheme: SchemeArg,
    /// Bootstrap replicates B.
    #[arg(long, default_value_t = clusterboot::bootstrap::DEFAULT_INTERVAL_REPLICATES)]
    replicates: usize,
    /// Confidence level of the intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Statistic to make inference on (defaults to the scheme's own target).
    #[arg(long, value_enum)]
    target: Option<TargetArg>,
    /// Also write per-replicate statistics as CSV.
    #[arg(long)]
    replicate_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Experiment configuration (JSON).
    #[arg(long, alias = "config")]
    input: PathBuf,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Long-format CSV `K,alpha,scheme,metric,value`.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Overrides the configuration's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Treat the input as a small CSV dataset and compare the schemes exactly
    /// by enumeration.
    #[arg(long)]
    exact: bool,
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
    code: u8,
}

impl Failure {
    fn new(kind: &'static str, message: impl Into<String>, code: u8) -> Self {
        Self {
            kind,
            message: message.into(),
            code,
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Self::new("malformed_config", message, 2)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (kind, code) = match e {
            Error::Malformed { .. } => ("malformed_input", 2),
            Error::EmptyInput => ("empty_input", 2),
            Error::InvalidData(_) => ("invalid_data", 2),
            Error::InvalidDesign(_) | Error::InvalidTruth(_) => ("invalid_config", 2),
            Error::GridTooSmall { .. } => ("grid_too_small", 2),
            Error::DegenerateK { .. } => ("degenerate_k", 3),
            Error::SingletonPopulation { .. } => ("singleton_population", 3),
            Error::EmptyPopulation { .. } => ("empty_population", 3),
            Error::InsufficientReplicates { .. } => ("insufficient_replicates", 4),
            Error::ZeroGamma => ("zero_gamma", 5),
            Error::Unsupported(_) => ("unsupported", 1),
            Error::TooLarge { .. } => ("too_large", 1),
            Error::Io(_) => ("io", 1),
            _ => ("error", 1),
        };
        Self::new(kind, message, code)
    }
}

#[derive(Serialize)]
struct ErrorObject<'a> {
    error: &'a str,
    message: &'a str,
    exit_code: u8,
}

type CliResult<T> = Result<T, Failure>;

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::new("io", format!("{}: {e}", path.display()), 1)
}

fn read_dataset(path: &Path) -> CliResult<ClusterDataset> {
    let file = File::open(path).map_err(|e| io_failure(path, e))?;
    Ok(ClusterDataset::read_csv(BufReader::new(file))?)
}

fn read_config(path: &Path, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let file = File::open(path).map_err(|e| io_failure(path, e))?;
    let mut config: ExperimentConfig = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    config
        .validate()
        .map_err(|e| Failure::config(e.to_string()))?;
    Ok(config)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| io_failure(path, e))?,
    ))
}

fn write_json<T: Serialize>(value: &T, output: Option<&Path>) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::new("serialization", e.to_string(), 1))?;
    text.push('\n');
    match output {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(text.as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| io_failure(path, e))
        }
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::new("io", e.to_string(), 1)),
    }
}

fn write_csv_rows(rows: &[MetricRow], path: Option<&Path>) -> CliResult<()> {
    if let Some(path) = path {
        write_metric_csv(rows, create(path)?)?;
    }
    Ok(())
}

fn estimator_options(cli: &Cli) -> EstimatorOptions {
    EstimatorOptions {
        printed_formulas: cli.compat_printed_formulas,
        truncate_nonneg: cli.truncate_gamma,
    }
}

fn apply_flags(cli: &Cli, config: &mut ExperimentConfig) {
    config.printed_formulas |= cli.compat_printed_formulas;
    config.truncate_gamma |= cli.truncate_gamma;
}

fn warn(message: &str) {
    eprintln!("warning: {message}");
}

fn cmd_estimate(cli: &Cli, args: &EstimateArgs) -> CliResult<()> {
    let data = read_dataset(&args.input)?;
    let summary = summarize(&data)?;
    let report = estimate_from_summary(&summary, estimator_options(cli))?;
    if report.gamma_hat < 0.0 {
        warn(&format!(
            "between-population variance estimate is negative ({})",
            report.gamma_hat
        ));
    }
    write_json(&report, args.output.as_deref())
}

#[allow(non_snake_case)]
#[derive(Serialize)]
struct BootstrapOutput {
    scheme: SchemeTag,
    B: usize,
    seed: u64,
    level: f64,
    target: Statistic,
    estimate: f64,
    standard_error: Option<f64>,
    analytic_moments: BootstrapMoments,
    monte_carlo_moments: ReplicateMoments,
    /// Replicates whose studentizing variance was not positive.
    degenerate_replicates: usize,
    intervals: Vec<IntervalEstimate>,
    estimates: EstimateReport,
}

fn cmd_bootstrap(cli: &Cli, args: &BootstrapArgs) -> CliResult<()> {
    let scheme = SchemeTag::from(args.scheme);
    let target = args.target.map(Statistic::from).unwrap_or(scheme.target());
    if !scheme.supports(target) {
        return Err(Error::Unsupported(format!(
            "{scheme} cannot be used for inference on mu_N: its resamples do not reproduce the \
             law of the weighted mean; use b1w or b2"
        ))
        .into());
    }
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(Failure::new(
            "invalid_argument",
            format!("level {} outside (0, 1)", args.level),
            1,
        ));
    }
    let required = required_replicates(args.level);
    if args.replicates < required {
        return Err(Error::InsufficientReplicates {
            replicates: args.replicates,
            level: args.level,
            required,
        }
        .into());
    }
    let data = read_dataset(&args.input)?;
    let summary = summarize(&data)?;
    let report = estimate_from_summary(&summary, estimator_options(cli))?;
    let options = BootstrapOptions {
        printed_formulas: cli.compat_printed_formulas,
    };
    let run: BootstrapRun = run_bootstrap(&data, scheme, args.replicates, args.seed, options)?;
    let point = point_estimate(&report, target);
    let native = target == scheme.target();
    let variance = if native {
        Some(interval_variance(scheme, &report, &run.analytic_moments))
    } else {
        run.analytic_moments.variance(target)
    };
    let scale = variance
        .filter(|v| *v > 0.0 && v.is_finite())
        .map(f64::sqrt);

    let mut intervals = vec![confidence_interval(
        &run.stats,
        target,
        point,
        1.0,
        IntervalMethod::Percentile,
        args.level,
    )?];
    let valid: Vec<_> = run
        .stats
        .iter()
        .copied()
        .filter(|r| r.scale > 0.0 && r.scale.is_finite())
        .collect();
    let degenerate = run.stats.len() - valid.len();
    if degenerate > 0 {
        warn(&format!(
            "{degenerate} replicates have a non-positive studentizing variance and are excluded from bootstrap-t"
        ));
    }
    match scale {
        Some(s) => {
            if native {
                match confidence_interval(
                    &valid,
                    target,
                    point,
                    s,
                    IntervalMethod::BootstrapT,
                    args.level,
                ) {
                    Ok(ci) => intervals.push(ci),
                    Err(e) => warn(&format!("bootstrap-t interval unavailable: {e}")),
                }
            }
            intervals.push(confidence_interval(
                &[],
                target,
                point,
                s,
                IntervalMethod::Normal,
                args.level,
            )?);
        }
        None => warn("standard error is not positive; only the percentile interval is reported"),
    }

    if let Some(path) = &args.replicate_csv {
        run.write_replicates_csv(create(path)?)?;
    }
    let output = BootstrapOutput {
        scheme,
        B: run.replicates,
        seed: run.seed,
        level: args.level,
        target,
        estimate: point,
        standard_error: scale,
        analytic_moments: run.analytic_moments,
        monte_carlo_moments: run.monte_carlo_moments,
        degenerate_replicates: degenerate,
        intervals,
        estimates: report,
    };
    write_json(&output, args.output.as_deref())
}

fn progress(what: &str, start: Instant) {
    eprintln!("{what} finished in {:.2} s", start.elapsed().as_secs_f64());
}

fn cmd_simulate(cli: &Cli, args: &ExperimentArgs) -> CliResult<()> {
    let mut config = read_config(&args.input, args.seed)?;
    apply_flags(cli, &mut config);
    eprintln!(
        "simulating {} grid point(s), R = {}, B = {}",
        config.grid.len(),
        config.replications,
        config.bootstrap_replicates
    );
    let start = Instant::now();
    let report = run_experiment(&config)?;
    progress("simulation", start);
    write_csv_rows(&report.metric_rows(), args.csv.as_deref())?;
    write_json(&report, args.output.as_deref())
}

fn cmd_rates(cli: &Cli, args: &ExperimentArgs) -> CliResult<()> {
    let mut config = read_config(&args.input, args.seed)?;
    apply_flags(cli, &mut config);
    let start = Instant::now();
    let table = rate_table(&config)?;
    progress("rate table", start);
    write_csv_rows(&table.metric_rows(), args.csv.as_deref())?;
    write_json(&table, args.output.as_deref())
}

fn cmd_compare(cli: &Cli, args: &CompareArgs) -> CliResult<()> {
    let a = &args.experiment;
    if args.exact {
        let data = read_dataset(&a.input)?;
        let options = BootstrapOptions {
            printed_formulas: cli.compat_printed_formulas,
        };
        let rows = exact_scheme_comparison(&data, options)?;
        return write_json(&rows, a.output.as_deref());
    }
    let mut config = read_config(&a.input, a.seed)?;
    apply_flags(cli, &mut config);
    let start = Instant::now();
    let table = scheme_comparison(&config)?;
    progress("scheme comparison", start);
    write_csv_rows(&table.metric_rows(), a.csv.as_deref())?;
    write_json(&table, a.output.as_deref())
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::new("threads", e.to_string(), 1))?;
    }
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(cli, a),
        Command::Bootstrap(a) => cmd_bootstrap(cli, a),
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::Rates(a) => cmd_rates(cli, a),
        Command::Compare(a) => cmd_compare(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let object = ErrorObject {
                error: f.kind,
                message: &f.message,
                exit_code: f.code,
            };
            eprintln!(
                "{}",
                serde_json::to_string(&object).unwrap_or_else(|_| f.message.clone())
            );
            ExitCode::from(f.code)
        }
    }
}
