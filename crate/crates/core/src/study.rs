//! Monte Carlo replication of estimators over a simulation scenario.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{GroundTruth, Scenario, ScenarioSpec};
use crate::error::{Error, Result};
use crate::model::{NuisanceParams, TreatmentPath};
use crate::pipeline::{estimate, make_plan, EstimatorChoice, NuisanceFamily};

/// Environment variable consulted when `parallelism` is not set.
pub const THREADS_ENV: &str = "SEQDR_THREADS";

/// Share of failed replications above which a study is an error.
pub const MAX_FAILURE_SHARE: f64 = 0.10;

/// Coverage band used to flag degraded estimators in comparisons.
pub const COVERAGE_BAND: (f64, f64) = (0.91, 0.99);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub scenario: ScenarioSpec,
    pub estimators: Vec<EstimatorChoice>,
    pub replications: usize,
    pub level: f64,
    pub base_seed: u64,
    pub k_folds: usize,
    pub path: TreatmentPath,
    /// Where the CLI writes the JSON result; the CSV table goes next to it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
    /// Worker threads; falls back to `SEQDR_THREADS`, then to the rayon default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            scenario: ScenarioSpec::default(),
            estimators: vec![EstimatorChoice::default()],
            replications: 100,
            level: 0.95,
            base_seed: 0,
            k_folds: 2,
            path: TreatmentPath::TREATED,
            output_path: None,
            parallelism: None,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "level must lie in (0, 1), got {}",
                self.level
            )));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("a study needs at least one estimator".into()));
        }
        if self.parallelism == Some(0) {
            return Err(Error::InvalidArgument("parallelism must be positive".into()));
        }
        for e in &self.estimators {
            e.validate()?;
        }
        self.scenario.validate()?;
        make_plan(self.scenario.n, self.k_folds, 0).map(|_| ())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Data and cross-fitting seeds of replication `r`; they depend only on
/// `(base_seed, r)`.
pub fn replication_seeds(base_seed: u64, r: usize) -> (u64, u64) {
    let data = splitmix64(base_seed ^ splitmix64(r as u64));
    (data, splitmix64(data ^ 0x0f0f_f0f0_5a5a_a5a5))
}

/// One estimator on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub theta_hat: f64,
    pub sigma_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub covered: bool,
    /// Euclidean distance of the fold-0 estimate to the known target, per
    /// stage (gamma, delta, alpha, beta), when the target is known.
    pub nuisance_errors: [Option<f64>; 4],
    pub nonconverged_stages: usize,
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub data_seed: u64,
    pub plan_seed: u64,
    /// One entry per estimator: the outcome or the error message.
    pub outcomes: Vec<std::result::Result<EstimatorOutcome, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub name: String,
    pub nuisance_family: NuisanceFamily,
    pub successes: usize,
    pub failures: usize,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_ci_length: f64,
    pub mean_sigma_hat: f64,
    /// Standard deviation of theta-hat across replications.
    pub sd_theta_hat: f64,
    /// `sd_theta_hat / sqrt(successes)`.
    pub replication_se: f64,
    /// `mean_sigma_hat / (sqrt(n) sd_theta_hat)`.
    pub sigma_ratio: f64,
    pub mean_nuisance_error: [Option<f64>; 4],
    pub median_nuisance_error: [Option<f64>; 4],
    pub nonconverged_stages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub scenario: ScenarioSpec,
    pub path: TreatmentPath,
    pub theta_true: f64,
    pub mc_se: f64,
    pub replications: usize,
    pub level: f64,
    pub base_seed: u64,
    pub estimators: Vec<EstimatorSummary>,
    pub records: Vec<ReplicationRecord>,
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn nuisance_errors(eta: &NuisanceParams, truth: &GroundTruth) -> [Option<f64>; 4] {
    let o = &truth.oracle_eta;
    [
        o.gamma.as_deref().map(|t| l2_distance(&eta.gamma, t)),
        o.delta.as_deref().map(|t| l2_distance(&eta.delta, t)),
        o.alpha.as_deref().map(|t| l2_distance(&eta.alpha, t)),
        o.beta.as_deref().map(|t| l2_distance(&eta.beta, t)),
    ]
}

fn run_replication(
    config: &StudyConfig,
    scenario: &Scenario,
    truth: &GroundTruth,
    theta_true: f64,
    r: usize,
) -> ReplicationRecord {
    let (data_seed, plan_seed) = replication_seeds(config.base_seed, r);
    let prepared = scenario
        .generate_with(config.scenario.n, data_seed)
        .and_then(|data| Ok((make_plan(data.n(), config.k_folds, plan_seed)?, data)));
    let outcomes = match prepared {
        Err(e) => vec![Err(e.to_string()); config.estimators.len()],
        Ok((plan, data)) => config
            .estimators
            .iter()
            .map(|choice| {
                let report = estimate(&data, config.path, choice, &plan, config.level)
                    .map_err(|e| e.to_string())?;
                let tol = 2.0 * truth.mc_se;
                Ok(EstimatorOutcome {
                    theta_hat: report.theta_hat,
                    sigma_hat: report.sigma_hat,
                    ci_low: report.ci_low,
                    ci_high: report.ci_high,
                    covered: report.ci_low <= theta_true + tol && theta_true - tol <= report.ci_high,
                    nuisance_errors: nuisance_errors(&report.per_fold_eta[0], truth),
                    nonconverged_stages: report.diagnostics.nonconverged_stages.len(),
                    clipped: report.diagnostics.clipped,
                })
            })
            .collect(),
    };
    ReplicationRecord {
        replication: r,
        data_seed,
        plan_seed,
        outcomes,
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn summarize(
    choice: &EstimatorChoice,
    index: usize,
    records: &[ReplicationRecord],
    theta_true: f64,
    n: usize,
) -> EstimatorSummary {
    let ok: Vec<&EstimatorOutcome> = records
        .iter()
        .filter_map(|r| r.outcomes[index].as_ref().ok())
        .collect();
    let failures = records.len() - ok.len();
    let k = ok.len();
    let nan_if_empty = |x: f64| if k == 0 { f64::NAN } else { x };

    let thetas: Vec<f64> = ok.iter().map(|o| o.theta_hat).collect();
    let errors: Vec<f64> = thetas.iter().map(|t| t - theta_true).collect();
    let bias = nan_if_empty(mean(&errors));
    let rmse = nan_if_empty(mean(&errors.iter().map(|e| e * e).collect::<Vec<_>>()).sqrt());
    let coverage = nan_if_empty(ok.iter().filter(|o| o.covered).count() as f64 / k as f64);
    let mean_ci_length = nan_if_empty(mean(&ok.iter().map(|o| o.ci_high - o.ci_low).collect::<Vec<_>>()));
    let mean_sigma_hat = nan_if_empty(mean(&ok.iter().map(|o| o.sigma_hat).collect::<Vec<_>>()));
    let sd_theta_hat = if k >= 2 {
        let m = mean(&thetas);
        (thetas.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / (k - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    let replication_se = sd_theta_hat / (k as f64).sqrt();
    let sigma_ratio = mean_sigma_hat / ((n as f64).sqrt() * sd_theta_hat);

    let mut mean_nuisance_error = [None; 4];
    let mut median_nuisance_error = [None; 4];
    for s in 0..4 {
        let v: Vec<f64> = ok.iter().filter_map(|o| o.nuisance_errors[s]).collect();
        if !v.is_empty() {
            mean_nuisance_error[s] = Some(mean(&v));
            median_nuisance_error[s] = Some(median(v));
        }
    }
    EstimatorSummary {
        name: choice.name(),
        nuisance_family: choice.nuisance_family,
        successes: k,
        failures,
        bias,
        rmse,
        coverage,
        mean_ci_length,
        mean_sigma_hat,
        sd_theta_hat,
        replication_se,
        sigma_ratio,
        mean_nuisance_error,
        median_nuisance_error,
        nonconverged_stages: ok.iter().map(|o| o.nonconverged_stages).sum(),
    }
}

fn thread_count(config: &StudyConfig) -> Result<Option<usize>> {
    if let Some(p) = config.parallelism {
        return Ok(Some(p));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(p) if p > 0 => Ok(Some(p)),
            _ => Err(Error::InvalidArgument(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs every estimator on `replications` independent datasets. Outputs do
/// not depend on the thread count.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let scenario = Scenario::new(&config.scenario)?;
    let truth = scenario.ground_truth();
    let theta_true = scenario.theta(config.path);

    let work = || -> Vec<ReplicationRecord> {
        (0..config.replications)
            .into_par_iter()
            .map(|r| run_replication(config, &scenario, &truth, theta_true, r))
            .collect()
    };
    let records = match thread_count(config)? {
        Some(p) => rayon::ThreadPoolBuilder::new()
            .num_threads(p)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start {p} threads: {e}")))?
            .install(work),
        None => work(),
    };

    let estimators: Vec<EstimatorSummary> = config
        .estimators
        .iter()
        .enumerate()
        .map(|(i, c)| summarize(c, i, &records, theta_true, config.scenario.n))
        .collect();
    let failures = estimators.iter().map(|e| e.failures).max().unwrap_or(0);
    if failures as f64 > MAX_FAILURE_SHARE * config.replications as f64 {
        return Err(Error::StudyFailed {
            failures,
            replications: config.replications,
        });
    }
    Ok(StudyResult {
        scenario: config.scenario.clone(),
        path: config.path,
        theta_true,
        mc_se: truth.mc_se,
        replications: config.replications,
        level: config.level,
        base_seed: config.base_seed,
        estimators,
        records,
    })
}

impl StudyResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// Side-by-side metrics with ratios against the first estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Human-readable notes on coverage degradation.
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub nuisance_family: NuisanceFamily,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_ci_length: f64,
    pub mean_sigma_hat: f64,
    pub failures: usize,
    pub rmse_ratio: f64,
    pub coverage_ratio: f64,
    pub ci_length_ratio: f64,
    pub sigma_ratio: f64,
}

fn in_band(c: f64) -> bool {
    c >= COVERAGE_BAND.0 && c <= COVERAGE_BAND.1
}

pub fn compare_estimators(result: &StudyResult) -> Comparison {
    let rows: Vec<ComparisonRow> = match result.estimators.first() {
        None => Vec::new(),
        Some(first) => result
            .estimators
            .iter()
            .map(|e| ComparisonRow {
                name: e.name.clone(),
                nuisance_family: e.nuisance_family,
                bias: e.bias,
                rmse: e.rmse,
                coverage: e.coverage,
                mean_ci_length: e.mean_ci_length,
                mean_sigma_hat: e.mean_sigma_hat,
                failures: e.failures,
                rmse_ratio: e.rmse / first.rmse,
                coverage_ratio: e.coverage / first.coverage,
                ci_length_ratio: e.mean_ci_length / first.mean_ci_length,
                sigma_ratio: e.mean_sigma_hat / first.mean_sigma_hat,
            })
            .collect(),
    };
    let mut flags = Vec::new();
    let holding: Vec<&ComparisonRow> = rows
        .iter()
        .filter(|r| r.nuisance_family == NuisanceFamily::MomentTargeted && in_band(r.coverage))
        .collect();
    if let Some(good) = holding.first() {
        for r in rows
            .iter()
            .filter(|r| r.nuisance_family == NuisanceFamily::Baseline && !in_band(r.coverage))
        {
            flags.push(format!(
                "{} coverage {} is outside [{}, {}] while {} holds at {}",
                r.name,
                fmt_sig(r.coverage),
                COVERAGE_BAND.0,
                COVERAGE_BAND.1,
                good.name,
                fmt_sig(good.coverage)
            ));
        }
    }
    Comparison { rows, flags }
}

/// Six significant digits, plain notation where reasonable.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NA".into() } else { format!("{x}") };
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-5..=15).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn opt_sig(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), fmt_sig)
}

impl StudyResult {
    /// One row per estimator.
    pub fn to_csv_table(&self) -> String {
        let mut out = String::from(
            "estimator,family,successes,failures,bias,rmse,coverage,mean_ci_length,mean_sigma_hat,sd_theta_hat,replication_se,sigma_ratio,err_gamma,err_delta,err_alpha,err_beta\n",
        );
        for e in &self.estimators {
            let errs: Vec<String> = e.median_nuisance_error.iter().map(|v| opt_sig(*v)).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.name,
                e.nuisance_family,
                e.successes,
                e.failures,
                fmt_sig(e.bias),
                fmt_sig(e.rmse),
                fmt_sig(e.coverage),
                fmt_sig(e.mean_ci_length),
                fmt_sig(e.mean_sigma_hat),
                fmt_sig(e.sd_theta_hat),
                fmt_sig(e.replication_se),
                fmt_sig(e.sigma_ratio),
                errs.join(",")
            );
        }
        out
    }
}

impl Comparison {
    pub fn to_csv_table(&self) -> String {
        let mut out = String::from(
            "estimator,family,bias,rmse,coverage,mean_ci_length,mean_sigma_hat,failures,rmse_ratio,coverage_ratio,ci_length_ratio,sigma_ratio\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.name,
                r.nuisance_family,
                fmt_sig(r.bias),
                fmt_sig(r.rmse),
                fmt_sig(r.coverage),
                fmt_sig(r.mean_ci_length),
                fmt_sig(r.mean_sigma_hat),
                r.failures,
                fmt_sig(r.rmse_ratio),
                fmt_sig(r.coverage_ratio),
                fmt_sig(r.ci_length_ratio),
                fmt_sig(r.sigma_ratio)
            );
        }
        out
    }
}
