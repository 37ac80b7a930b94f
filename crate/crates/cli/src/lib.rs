//! Command-line front end: `estimate`, `simulate`, `study` and `oracle`.

use clap::{Args, Parser, Subcommand};
use seqdr::pipeline::{estimate_dte, make_plan, EstimatorChoice, NuisanceFamily, ReportSummary};
use seqdr::{compare_estimators, generate, oracle_eta, run_study, Dataset, Error, OverlapConfig, ScenarioSpec};
use seqdr::{StudyConfig, TreatmentPath};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_STUDY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "seqdr", version, about = "Doubly robust estimation of dynamic treatment effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate a counterfactual mean (or a contrast with --control) from a CSV dataset.
    Estimate(EstimateArgs),
    /// Draw a dataset from a scenario JSON and write it as CSV.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo study from a study JSON.
    Study(StudyArgs),
    /// Approximate the population nuisance targets of a scenario.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum FamilyArg {
    Moment,
    Baseline,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Dataset CSV with columns Y, A1, A2, S1_0.., S2_0..
    data: PathBuf,
    /// Treatment path a1,a2 whose counterfactual mean is estimated.
    #[arg(long, default_value = "1,1")]
    path: TreatmentPath,
    /// Control path; reports the contrast path minus control.
    #[arg(long)]
    control: Option<TreatmentPath>,
    #[arg(long, default_value_t = 2)]
    folds: usize,
    /// Seed of the fold assignment.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Penalty scales for the gamma, delta, alpha and beta stages.
    #[arg(long, value_name = "XG,XD,XA,XB", value_parser = parse_scales)]
    lambda_scale: Option<[f64; 4]>,
    #[arg(long, value_enum, default_value_t = FamilyArg::Moment)]
    family: FamilyArg,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Overlap floor c0 for propensity clipping.
    #[arg(long, default_value_t = 0.01)]
    clip: f64,
    /// Fail on propensities outside the floor instead of clipping them.
    #[arg(long)]
    no_clip: bool,
    #[arg(long)]
    penalize_intercept: bool,
    /// Treat an uncertified solver stop as an error.
    #[arg(long)]
    strict: bool,
    /// Write the report here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario JSON; missing fields take their defaults.
    spec: PathBuf,
    /// Override the sample size.
    #[arg(long)]
    n: Option<usize>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StudyArgs {
    /// Study JSON; missing fields take their defaults.
    config: PathBuf,
    /// Write the result JSON here (overrides output_path in the config).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Also write the summary table as CSV.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Worker threads (overrides the config and SEQDR_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    spec: PathBuf,
    /// Size of the population draw.
    #[arg(long, default_value_t = 1_000_000)]
    n_pop: usize,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn parse_scales(s: &str) -> Result<[f64; 4], String> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 4]>::try_from(values).map_err(|v| format!("expected 4 comma-separated scales, got {}", v.len()))
}

enum Failure {
    Usage(String),
    Data(String),
    Study(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::StudyFailed { .. } => Failure::Study(e.to_string()),
            e => Failure::Data(e.to_string()),
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn cli_main(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Estimate(args) => run_estimate(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Study(args) => run_study_command(args),
        Command::Oracle(args) => run_oracle(args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            EXIT_DATA
        }
        Err(Failure::Study(msg)) => {
            eprintln!("error: {msg}");
            EXIT_STUDY
        }
    }
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Failure::Data(e.to_string()))
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Failure::Data(e.to_string()))
}

#[derive(Serialize)]
struct ContrastSummary {
    theta_hat: f64,
    sigma_hat: f64,
    std_error: f64,
    ci: [f64; 2],
    level: f64,
    n: usize,
    treat: ReportSummary,
    control: ReportSummary,
}

fn estimator_choice(args: &EstimateArgs) -> Result<EstimatorChoice, Failure> {
    let family = match args.family {
        FamilyArg::Moment => NuisanceFamily::MomentTargeted,
        FamilyArg::Baseline => NuisanceFamily::Baseline,
    };
    let mut choice = EstimatorChoice::new(family);
    if let Some(scales) = args.lambda_scale {
        choice.lambda_scales = scales;
    }
    choice.overlap = OverlapConfig::new(args.clip, !args.no_clip).map_err(|e| Failure::Usage(e.to_string()))?;
    choice.solver.penalize_intercept = args.penalize_intercept;
    choice.strict = args.strict;
    choice.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(choice)
}

fn run_estimate(args: EstimateArgs) -> Result<(), Failure> {
    let choice = estimator_choice(&args)?;
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(Failure::Usage(format!("--level must lie in (0, 1), got {}", args.level)));
    }
    let data = Dataset::read_csv_path(&args.data)?;
    let plan = make_plan(data.n(), args.folds, args.seed)?;
    let text = match args.control {
        None => seqdr::pipeline::estimate(&data, args.path, &choice, &plan, args.level)?.to_json()? + "\n",
        Some(control) => {
            let dte = estimate_dte(&data, args.path, control, &choice, &plan, args.level)?;
            to_json(&ContrastSummary {
                theta_hat: dte.theta_hat,
                sigma_hat: dte.sigma_hat,
                std_error: dte.std_error(),
                ci: [dte.ci_low, dte.ci_high],
                level: dte.level,
                n: dte.n,
                treat: dte.treat.summary(),
                control: dte.control.summary(),
            })?
        }
    };
    emit(args.output.as_deref(), &text)
}

fn run_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut spec: ScenarioSpec = read_json(&args.spec)?;
    if let Some(n) = args.n {
        spec.n = n;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (data, _) = generate(&spec)?;
    match &args.output {
        Some(path) => data.write_csv_path(path)?,
        None => data.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

fn run_study_command(args: StudyArgs) -> Result<(), Failure> {
    let mut config: StudyConfig = read_json(&args.config)?;
    if let Some(path) = &args.output {
        config.output_path = Some(path.display().to_string());
    }
    if args.threads.is_some() {
        config.parallelism = args.threads;
    }
    let result = run_study(&config)?;
    let mut table = result.to_csv_table();
    if result.estimators.len() >= 2 {
        let comparison = compare_estimators(&result);
        table.push('\n');
        table.push_str(&comparison.to_csv_table());
        for flag in &comparison.flags {
            table.push_str(&format!("# {flag}\n"));
        }
    }
    if let Some(path) = &args.table {
        emit(Some(path), &table)?;
    }
    match &config.output_path {
        Some(path) => {
            result.write_json(path)?;
            emit(None, &table)
        }
        None => {
            eprint!("{table}");
            emit(None, &(result.to_json()? + "\n"))
        }
    }
}

fn run_oracle(args: OracleArgs) -> Result<(), Failure> {
    let spec: ScenarioSpec = read_json(&args.spec)?;
    let eta = oracle_eta(&spec, args.n_pop)?;
    emit(args.output.as_deref(), &to_json(&eta)?)
}
