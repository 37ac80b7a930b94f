//! Cross-fitted estimation: fold construction, sequential nuisance fits on
//! four disjoint subsamples of each fold complement, scoring, variance and
//! normal confidence intervals.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::{Frozen, LossKind, LossProblem};
use crate::model::{relabel_for_path, score_unchecked, NuisanceParams, OverlapConfig, TreatmentPath};
use crate::optim::{lambda_from_theory, solve, SolverConfig};

/// The four nuisance stages, in fitting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Gamma,
    Delta,
    Alpha,
    Beta,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Gamma, Stage::Delta, Stage::Alpha, Stage::Beta];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gamma => "gamma",
            Stage::Delta => "delta",
            Stage::Alpha => "alpha",
            Stage::Beta => "beta",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Fold assignment and per-fold subsample groups, reconstructible from
/// `(n, k_folds, seed)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossFitPlan {
    pub n: usize,
    pub k_folds: usize,
    pub seed: u64,
    /// Fold index of every observation.
    pub fold_of: Vec<usize>,
    /// Indices of each fold, in shuffled order.
    pub folds: Vec<Vec<usize>>,
    /// For each fold, the gamma/delta/alpha/beta groups of its complement.
    pub groups: Vec<[Vec<usize>; 4]>,
}

impl CrossFitPlan {
    pub fn group(&self, fold: usize, stage: Stage) -> &[usize] {
        &self.groups[fold][stage.index()]
    }

    pub fn complement_size(&self, fold: usize) -> usize {
        self.n - self.folds[fold].len()
    }

    /// Common group size `floor(|complement| / 4)`.
    pub fn base_group_size(&self, fold: usize) -> usize {
        self.complement_size(fold) / 4
    }

    /// Complement indices beyond `4 * base_group_size`.
    pub fn leftovers(&self, fold: usize) -> usize {
        self.complement_size(fold) % 4
    }

    /// Structural validity against a dataset of `n` rows.
    pub fn check(&self, n: usize) -> Result<()> {
        if self.n != n || self.fold_of.len() != n {
            return Err(Error::InvalidArgument(format!(
                "cross-fit plan is for {} observations, data has {n}",
                self.n
            )));
        }
        if self.folds.len() != self.k_folds || self.groups.len() != self.k_folds {
            return Err(Error::InvalidArgument("cross-fit plan has inconsistent fold count".into()));
        }
        Ok(())
    }
}

/// Shuffles `0..n` with `seed`, cuts it into `k_folds` folds whose sizes
/// differ by at most one, and deals each fold complement round-robin into
/// four groups.
pub fn make_plan(n: usize, k_folds: usize, seed: u64) -> Result<CrossFitPlan> {
    if k_folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "at least 2 folds are required, got {k_folds}"
        )));
    }
    let min = 8 * k_folds;
    if n < min {
        return Err(Error::Sizing { n, min });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    // The last `n % k` folds take one extra observation.
    let base = n / k_folds;
    let big_from = k_folds - n % k_folds;
    let mut folds = Vec::with_capacity(k_folds);
    let mut fold_of = vec![0; n];
    let mut start = 0;
    for k in 0..k_folds {
        let len = base + usize::from(k >= big_from);
        let fold = perm[start..start + len].to_vec();
        for &i in &fold {
            fold_of[i] = k;
        }
        folds.push(fold);
        start += len;
    }

    let groups = (0..k_folds)
        .map(|k| {
            let mut g: [Vec<usize>; 4] = Default::default();
            for (j, &i) in perm.iter().filter(|&&i| fold_of[i] != k).enumerate() {
                g[j % 4].push(i);
            }
            g
        })
        .collect();

    Ok(CrossFitPlan {
        n,
        k_folds,
        seed,
        fold_of,
        folds,
        groups,
    })
}

/// Which losses fit the nuisance models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceFamily {
    /// Exponential-tilt propensities and reweighted outcome regressions.
    MomentTargeted,
    /// Logistic likelihood propensities and plain least squares.
    Baseline,
}

impl NuisanceFamily {
    pub fn losses(self) -> [LossKind; 4] {
        match self {
            NuisanceFamily::MomentTargeted => [LossKind::Ps1, LossKind::Ps2, LossKind::Or2, LossKind::Or1],
            NuisanceFamily::Baseline => [
                LossKind::BasePs1,
                LossKind::BasePs2,
                LossKind::BaseOr2,
                LossKind::BaseOr1,
            ],
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            NuisanceFamily::MomentTargeted => "moment",
            NuisanceFamily::Baseline => "baseline",
        }
    }
}

impl std::fmt::Display for NuisanceFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

impl std::str::FromStr for NuisanceFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "moment" | "moment_targeted" => Ok(NuisanceFamily::MomentTargeted),
            "baseline" => Ok(NuisanceFamily::Baseline),
            other => Err(Error::InvalidArgument(format!(
                "unknown nuisance family {other:?} (expected moment or baseline)"
            ))),
        }
    }
}

/// Default penalty scales for (gamma, delta, alpha, beta).
pub const DEFAULT_LAMBDA_SCALES: [f64; 4] = [1.0, 1.0, 0.5, 0.5];

/// Everything that defines one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorChoice {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub nuisance_family: NuisanceFamily,
    pub lambda_scales: [f64; 4],
    pub overlap: OverlapConfig,
    pub solver: SolverConfig,
    /// Turn solver non-convergence into an error.
    pub strict: bool,
}

impl Default for EstimatorChoice {
    fn default() -> Self {
        EstimatorChoice {
            label: None,
            nuisance_family: NuisanceFamily::MomentTargeted,
            lambda_scales: DEFAULT_LAMBDA_SCALES,
            overlap: OverlapConfig::default(),
            solver: SolverConfig {
                penalize_intercept: false,
                ..SolverConfig::default()
            },
            strict: false,
        }
    }
}

impl EstimatorChoice {
    pub fn new(nuisance_family: NuisanceFamily) -> Self {
        EstimatorChoice {
            nuisance_family,
            ..Default::default()
        }
    }

    /// `label` if set, else the family name.
    pub fn name(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.nuisance_family.short_name().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_scales.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "lambda scales must be positive, got {:?}",
                self.lambda_scales
            )));
        }
        self.overlap.validate()?;
        self.solver.validate()
    }
}

/// Solver outcome of one stage of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFit {
    pub stage: Stage,
    pub lambda: f64,
    pub rows: usize,
    pub iterations: usize,
    pub kkt_violation: f64,
    pub converged: bool,
    pub saturated: bool,
}

/// Nuisance estimate of one fold complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFit {
    pub eta: NuisanceParams,
    pub stages: [StageFit; 4],
}

impl FoldFit {
    pub fn lambdas(&self) -> [f64; 4] {
        [0, 1, 2, 3].map(|s| self.stages[s].lambda)
    }
}

/// Rows of `rows` that actually inform `stage`: treated at time 1, or at
/// both times for the time-2 outcome model.
fn relevant_treated(data: &Dataset, rows: &[usize], stage: Stage) -> usize {
    let (a1, a2) = (data.a1(), data.a2());
    match stage {
        Stage::Alpha => rows.iter().filter(|&&i| a1[i] == 1 && a2[i] == 1).count(),
        _ => rows.iter().filter(|&&i| a1[i] == 1).count(),
    }
}

/// Fits the four nuisance models on the complement of fold `fold_k`, each on
/// its own group and in the order gamma, delta, alpha, beta. `data` is taken
/// as targeting the `(1, 1)` path; relabel it first for other paths.
pub fn fit_nuisances(
    data: &Dataset,
    plan: &CrossFitPlan,
    fold_k: usize,
    choice: &EstimatorChoice,
) -> Result<FoldFit> {
    choice.validate()?;
    plan.check(data.n())?;
    if fold_k >= plan.k_folds {
        return Err(Error::InvalidArgument(format!(
            "fold {fold_k} out of range for {} folds",
            plan.k_folds
        )));
    }
    let (d1, d2) = (data.d1(), data.d2());
    let kinds = choice.nuisance_family.losses();
    let moment = choice.nuisance_family == NuisanceFamily::MomentTargeted;

    let mut coefs: [Vec<f64>; 4] = Default::default();
    let mut fits = Vec::with_capacity(4);
    for stage in Stage::ALL {
        let s = stage.index();
        let rows = plan.group(fold_k, stage);
        let treated = relevant_treated(data, rows, stage);
        if treated == 0 {
            return Err(Error::DegenerateSubsample {
                fold: fold_k,
                stage: stage.name(),
                treated,
                total: rows.len(),
            });
        }
        let frozen = match (stage, moment) {
            (Stage::Gamma, _) | (Stage::Delta, false) | (Stage::Alpha, false) => Frozen::none(),
            (Stage::Delta, true) => Frozen::gamma(&coefs[0]),
            (Stage::Alpha, true) => Frozen::gamma_delta(&coefs[0], &coefs[1]),
            (Stage::Beta, true) => Frozen::all(&coefs[0], &coefs[1], &coefs[2]),
            (Stage::Beta, false) => Frozen::alpha(&coefs[2]),
        };
        let problem = LossProblem::new(kinds[s], data, rows, &frozen)?;
        let dim = kinds[s].dim(d1, d2);
        let lambda = lambda_from_theory(rows.len(), dim, choice.lambda_scales[s]);
        let config = SolverConfig {
            lambda,
            warm_start: None,
            ..choice.solver.clone()
        };
        // A diverged earlier stage shows up here as non-finite weights.
        let res = solve(&problem, &config).map_err(|e| match e {
            Error::InvalidStart(msg) => Error::StageFailed {
                fold: fold_k,
                stage: stage.name(),
                msg: if s > 0 && fits.iter().any(|f: &StageFit| f.saturated) {
                    format!("{msg}; an earlier stage saturated")
                } else {
                    msg
                },
            },
            other => other,
        })?;
        if !res.converged && choice.strict {
            return Err(Error::NotConverged {
                fold: fold_k,
                stage: stage.name(),
                kkt_violation: res.kkt_violation,
            });
        }
        fits.push(StageFit {
            stage,
            lambda,
            rows: rows.len(),
            iterations: res.iterations,
            kkt_violation: res.kkt_violation,
            converged: res.converged,
            saturated: res.saturated,
        });
        coefs[s] = res.coef;
    }
    let [gamma, delta, alpha, beta] = coefs;
    let stages: [StageFit; 4] = fits.try_into().expect("four stages");
    Ok(FoldFit {
        eta: NuisanceParams {
            gamma,
            delta,
            alpha,
            beta,
        },
        stages,
    })
}

/// Fits every fold; folds run concurrently and the first error in fold
/// order is returned.
pub fn fit_all_folds(
    data: &Dataset,
    plan: &CrossFitPlan,
    choice: &EstimatorChoice,
) -> Result<Vec<FoldFit>> {
    let results: Vec<Result<FoldFit>> = (0..plan.k_folds)
        .into_par_iter()
        .map(|k| fit_nuisances(data, plan, k, choice))
        .collect();
    results.into_iter().collect()
}

/// A stage whose solver stopped before certifying optimality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageWarning {
    pub fold: usize,
    pub stage: Stage,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Propensity values moved by the overlap floor while scoring.
    pub clipped: usize,
    pub nonconverged_stages: Vec<StageWarning>,
    /// Stage fits in which some linear predictor hit the exponent cap.
    pub saturated_evals: usize,
    /// All scores were identical, so the standard error is reported as 0.
    pub degenerate_variance: bool,
}

/// Cross-fitted estimate of one counterfactual mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub theta_hat: f64,
    pub sigma_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub n: usize,
    pub k_folds: usize,
    pub seed: u64,
    pub path: TreatmentPath,
    /// `None` when nuisances were supplied rather than fitted.
    pub nuisance_family: Option<NuisanceFamily>,
    pub per_fold_eta: Vec<NuisanceParams>,
    pub per_fold_lambdas: Vec<[f64; 4]>,
    pub score_values: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Compact JSON form of an [`EstimateReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub theta_hat: f64,
    pub sigma_hat: f64,
    pub ci: [f64; 2],
    pub level: f64,
    pub n: usize,
    pub k_folds: usize,
    pub seed: u64,
    pub path: String,
    pub nuisance_family: String,
    pub diagnostics: Diagnostics,
    pub per_fold_lambdas: Vec<[f64; 4]>,
}

impl EstimateReport {
    /// Standard error `sigma_hat / sqrt(n)`.
    pub fn std_error(&self) -> f64 {
        self.sigma_hat / (self.n as f64).sqrt()
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }

    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            theta_hat: self.theta_hat,
            sigma_hat: self.sigma_hat,
            ci: [self.ci_low, self.ci_high],
            level: self.level,
            n: self.n,
            k_folds: self.k_folds,
            seed: self.seed,
            path: format!("{},{}", self.path.a1_target, self.path.a2_target),
            nuisance_family: self
                .nuisance_family
                .map_or_else(|| "supplied".to_string(), |f| f.short_name().to_string()),
            diagnostics: self.diagnostics.clone(),
            per_fold_lambdas: self.per_fold_lambdas.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    Ok(())
}

/// Mean, root mean squared deviation and the interval half-width.
fn summarize(values: &[f64], level: f64) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sigma = var.sqrt();
    let half = normal_quantile((1.0 + level) / 2.0) * sigma / n.sqrt();
    (mean, sigma, half)
}

/// Scores every observation with the nuisances of its own fold complement
/// and aggregates. `per_fold_eta[k]` is used for the observations of fold `k`.
pub fn estimate_with_nuisances(
    data: &Dataset,
    path: TreatmentPath,
    plan: &CrossFitPlan,
    per_fold_eta: &[NuisanceParams],
    overlap: &OverlapConfig,
    level: f64,
) -> Result<EstimateReport> {
    plan.check(data.n())?;
    check_level(level)?;
    overlap.validate()?;
    if per_fold_eta.len() != plan.k_folds {
        return Err(Error::InvalidArgument(format!(
            "expected {} nuisance sets, got {}",
            plan.k_folds,
            per_fold_eta.len()
        )));
    }
    for eta in per_fold_eta {
        eta.validate(data.d1(), data.d2())?;
    }

    let mut score_values = vec![0.0; data.n()];
    let mut clipped = 0usize;
    for (k, fold) in plan.folds.iter().enumerate() {
        for &i in fold {
            let s = score_unchecked(&data.observation(i), &per_fold_eta[k], path, overlap, i)?;
            if !s.value.is_finite() {
                return Err(Error::NumericalDegeneracy {
                    index: i,
                    msg: format!("score is not finite ({})", s.value),
                });
            }
            score_values[i] = s.value;
            clipped += s.clipped as usize;
        }
    }
    let (theta_hat, sigma_hat, half) = summarize(&score_values, level);
    Ok(EstimateReport {
        theta_hat,
        sigma_hat,
        ci_low: theta_hat - half,
        ci_high: theta_hat + half,
        level,
        n: data.n(),
        k_folds: plan.k_folds,
        seed: plan.seed,
        path,
        nuisance_family: None,
        per_fold_eta: per_fold_eta.to_vec(),
        per_fold_lambdas: Vec::new(),
        score_values,
        diagnostics: Diagnostics {
            clipped,
            degenerate_variance: sigma_hat == 0.0,
            ..Diagnostics::default()
        },
    })
}

/// Cross-fitted doubly robust estimate of the mean outcome under `path`.
pub fn estimate(
    data: &Dataset,
    path: TreatmentPath,
    choice: &EstimatorChoice,
    plan: &CrossFitPlan,
    level: f64,
) -> Result<EstimateReport> {
    choice.validate()?;
    check_level(level)?;
    plan.check(data.n())?;
    let relabeled = relabel_for_path(data, path);
    let fits = fit_all_folds(&relabeled, plan, choice)?;
    let etas: Vec<NuisanceParams> = fits.iter().map(|f| f.eta.clone()).collect();
    let mut report = estimate_with_nuisances(data, path, plan, &etas, &choice.overlap, level)?;
    report.nuisance_family = Some(choice.nuisance_family);
    report.per_fold_lambdas = fits.iter().map(FoldFit::lambdas).collect();
    for (k, fit) in fits.iter().enumerate() {
        for st in &fit.stages {
            if !st.converged {
                report.diagnostics.nonconverged_stages.push(StageWarning {
                    fold: k,
                    stage: st.stage,
                });
            }
            report.diagnostics.saturated_evals += st.saturated as usize;
        }
    }
    Ok(report)
}

/// Difference of two counterfactual means on a shared plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DteReport {
    pub theta_hat: f64,
    pub sigma_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub n: usize,
    pub treat: EstimateReport,
    pub control: EstimateReport,
}

impl DteReport {
    pub fn std_error(&self) -> f64 {
        self.sigma_hat / (self.n as f64).sqrt()
    }
}

/// `theta(path_treat) - theta(path_control)` with a standard error from the
/// per-observation score differences.
pub fn estimate_dte(
    data: &Dataset,
    path_treat: TreatmentPath,
    path_control: TreatmentPath,
    choice: &EstimatorChoice,
    plan: &CrossFitPlan,
    level: f64,
) -> Result<DteReport> {
    if path_treat == path_control {
        return Err(Error::InvalidArgument(
            "treatment and control paths must differ".into(),
        ));
    }
    let treat = estimate(data, path_treat, choice, plan, level)?;
    let control = estimate(data, path_control, choice, plan, level)?;
    Ok(combine_dte(treat, control))
}

/// Builds the contrast report from two arm reports on the same plan.
pub fn combine_dte(treat: EstimateReport, control: EstimateReport) -> DteReport {
    let theta_hat = treat.theta_hat - control.theta_hat;
    let n = treat.n as f64;
    let var = treat
        .score_values
        .iter()
        .zip(&control.score_values)
        .map(|(t, c)| {
            let r = t - c - theta_hat;
            r * r
        })
        .sum::<f64>()
        / n;
    let sigma_hat = var.sqrt();
    let half = normal_quantile((1.0 + treat.level) / 2.0) * sigma_hat / n.sqrt();
    DteReport {
        theta_hat,
        sigma_hat,
        ci_low: theta_hat - half,
        ci_high: theta_hat + half,
        level: treat.level,
        n: treat.n,
        treat,
        control,
    }
}

/// Standard normal quantile by Acklam's rational approximation (relative
/// error below 1.2e-9 over the open unit interval).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p.is_nan() || p <= 0.0 || p >= 1.0 {
        return if p == 0.0 {
            f64::NEG_INFINITY
        } else if p == 1.0 {
            f64::INFINITY
        } else {
            f64::NAN
        };
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn plan_sizes_small() {
        let plan = make_plan(16, 2, 7).unwrap();
        assert_eq!(plan.folds[0].len(), 8);
        assert_eq!(plan.folds[1].len(), 8);
        for k in 0..2 {
            for g in &plan.groups[k] {
                assert_eq!(g.len(), 2);
            }
        }
        assert_eq!(make_plan(16, 2, 7).unwrap(), plan);
        assert_ne!(make_plan(16, 2, 8).unwrap().fold_of, plan.fold_of);
    }

    #[test]
    fn plan_sizes_indivisible() {
        let plan = make_plan(101, 2, 1).unwrap();
        assert_eq!([plan.folds[0].len(), plan.folds[1].len()], [50, 51]);
        assert_eq!([plan.complement_size(0), plan.complement_size(1)], [51, 50]);
        assert_eq!([plan.base_group_size(0), plan.leftovers(0)], [12, 3]);
        assert_eq!([plan.base_group_size(1), plan.leftovers(1)], [12, 2]);
        let sizes: Vec<usize> = plan.groups[0].iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![13, 13, 13, 12]);
    }

    #[test]
    fn plan_rejects_small_samples() {
        match make_plan(7, 2, 0) {
            Err(Error::Sizing { n: 7, min: 16 }) => {}
            other => panic!("{other:?}"),
        }
        assert!(make_plan(100, 1, 0).is_err());
    }

    #[test]
    fn quantiles() {
        assert_eq!(normal_quantile(0.5), 0.0);
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-8);
        assert!((normal_quantile(0.995) - 2.575_829_303_548_901).abs() < 1e-8);
        assert!((normal_quantile(0.841_344_746_068_542_9) - 1.0).abs() < 1e-8);
        assert!((normal_quantile(0.001) + 3.090_232_306_167_813_5).abs() < 1e-8);
        for p in [1e-6, 0.01, 0.2, 0.4] {
            assert!((normal_quantile(p) + normal_quantile(1.0 - p)).abs() < 1e-8);
        }
        assert!(normal_quantile(1.5).is_nan());
    }

    #[test]
    fn family_parsing() {
        assert_eq!("moment".parse::<NuisanceFamily>().unwrap(), NuisanceFamily::MomentTargeted);
        assert_eq!("baseline".parse::<NuisanceFamily>().unwrap(), NuisanceFamily::Baseline);
        assert!("lasso".parse::<NuisanceFamily>().is_err());
        let json = serde_json::to_string(&EstimatorChoice::default()).unwrap();
        let back: EstimatorChoice = serde_json::from_str(&json).unwrap();
        assert_eq!(back, EstimatorChoice::default());
        let partial: EstimatorChoice = serde_json::from_str(r#"{"nuisance_family":"baseline"}"#).unwrap();
        assert_eq!(partial.lambda_scales, DEFAULT_LAMBDA_SCALES);
    }

    fn tiny(n: usize, a1: Vec<u8>, a2: Vec<u8>) -> Dataset {
        let mut s1 = Array2::ones((n, 2));
        let mut s2 = Array2::zeros((n, 1));
        for i in 0..n {
            s1[[i, 1]] = ((i * 7) % 5) as f64 - 2.0;
            s2[[i, 0]] = ((i * 3) % 4) as f64 - 1.5;
        }
        let y = (0..n).map(|i| i as f64 * 0.1).collect();
        Dataset::new(y, a1, a2, s1, s2).unwrap()
    }

    #[test]
    fn degenerate_delta_group_is_reported() {
        let n = 32;
        let plan = make_plan(n, 2, 3).unwrap();
        let mut a1 = vec![1u8; n];
        for &i in plan.group(0, Stage::Delta) {
            a1[i] = 0;
        }
        let data = tiny(n, a1, vec![1; n]);
        match fit_nuisances(&data, &plan, 0, &EstimatorChoice::default()) {
            Err(Error::DegenerateSubsample { fold: 0, stage: "delta", treated: 0, total: 4 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constant_score_has_degenerate_variance() {
        let n = 16;
        let data = tiny(n, vec![0; n], vec![0; n]);
        let plan = make_plan(n, 2, 0).unwrap();
        let mut eta = NuisanceParams::zeros(2, 1);
        eta.beta[0] = 2.5;
        let report = estimate_with_nuisances(
            &data,
            TreatmentPath::TREATED,
            &plan,
            &[eta.clone(), eta],
            &OverlapConfig::default(),
            0.95,
        )
        .unwrap();
        assert_eq!(report.theta_hat, 2.5);
        assert_eq!(report.sigma_hat, 0.0);
        assert!(report.diagnostics.degenerate_variance);
        assert_eq!(report.ci_low, report.ci_high);
    }
}
