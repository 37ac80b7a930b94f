mod common;

use common::*;
use ndarray::{Array2, ArrayView1};
use proptest::prelude::*;
use seqdr::optim::kkt_check_with;
use seqdr::pipeline::{combine_dte, Stage};
use seqdr::{
    estimate, estimate_dte, estimate_with_nuisances, fit_nuisances, generate, make_plan, solve,
    CrossFitPlan, Dataset, EstimatorChoice, Frozen, LossKind, LossProblem, NuisanceFamily,
    NuisanceParams, OverlapConfig, Scenario, ScenarioSpec, SolverConfig, TreatmentPath,
};

fn small_spec(n: usize, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        n,
        d1: 12,
        d2: 8,
        seed,
        ..ScenarioSpec::default()
    }
}

fn small_data(n: usize, seed: u64) -> Dataset {
    generate(&small_spec(n, seed)).unwrap().0
}

/// Copy of `data` with every field of `rows` except the intercept replaced.
fn perturb_rows(data: &Dataset, rows: &[usize]) -> Dataset {
    let mut y = data.y().to_vec();
    let mut a2 = data.a2().to_vec();
    let mut s1 = data.s1().clone();
    let mut s2 = data.s2().clone();
    for &i in rows {
        y[i] = 2.0 * y[i] + 1.0;
        a2[i] = 1 - a2[i];
        for j in 1..s1.ncols() {
            s1[[i, j]] *= -1.0;
        }
        for j in 0..s2.ncols() {
            s2[[i, j]] += 0.2;
        }
    }
    Dataset::new(y, data.a1().to_vec(), a2, s1, s2).unwrap()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn later_groups_never_feed_earlier_stages() {
    let data = small_data(2000, 1);
    let plan = make_plan(data.n(), 2, 9).unwrap();
    for family in [NuisanceFamily::MomentTargeted, NuisanceFamily::Baseline] {
        let choice = EstimatorChoice::new(family);
        let base = fit_nuisances(&data, &plan, 0, &choice).unwrap().eta;

        let beta_rows = plan.group(0, Stage::Beta).to_vec();
        let moved = fit_nuisances(&perturb_rows(&data, &beta_rows), &plan, 0, &choice).unwrap().eta;
        assert_eq!(bits(&moved.gamma), bits(&base.gamma));
        assert_eq!(bits(&moved.delta), bits(&base.delta));
        assert_eq!(bits(&moved.alpha), bits(&base.alpha));
        assert_ne!(bits(&moved.beta), bits(&base.beta));

        let alpha_rows = plan.group(0, Stage::Alpha).to_vec();
        let moved = fit_nuisances(&perturb_rows(&data, &alpha_rows), &plan, 0, &choice).unwrap().eta;
        assert_eq!(bits(&moved.gamma), bits(&base.gamma));
        assert_eq!(bits(&moved.delta), bits(&base.delta));
        assert_ne!(bits(&moved.alpha), bits(&base.alpha));

        let delta_rows = plan.group(0, Stage::Delta).to_vec();
        let moved = fit_nuisances(&perturb_rows(&data, &delta_rows), &plan, 0, &choice).unwrap().eta;
        assert_eq!(bits(&moved.gamma), bits(&base.gamma));
    }
}

/// `plan` on the dataset with row `gone` removed.
fn plan_without(plan: &CrossFitPlan, gone: usize) -> CrossFitPlan {
    let map = |v: &[usize]| -> Vec<usize> {
        v.iter()
            .filter(|&&i| i != gone)
            .map(|&i| if i > gone { i - 1 } else { i })
            .collect()
    };
    let mut fold_of = plan.fold_of.clone();
    fold_of.remove(gone);
    CrossFitPlan {
        n: plan.n - 1,
        k_folds: plan.k_folds,
        seed: plan.seed,
        fold_of,
        folds: plan.folds.iter().map(|f| map(f)).collect(),
        groups: plan
            .groups
            .iter()
            .map(|g| [map(&g[0]), map(&g[1]), map(&g[2]), map(&g[3])])
            .collect(),
    }
}

#[test]
fn a_score_ignores_rows_outside_its_nuisance_fit() {
    let data = small_data(600, 2);
    let plan = make_plan(data.n(), 3, 4).unwrap();
    let choice = EstimatorChoice::default();
    let full = estimate(&data, TreatmentPath::TREATED, &choice, &plan, 0.95).unwrap();
    for k in 0..3 {
        let i = plan.folds[k][0];
        for &gone in plan.folds[k].iter().skip(1).take(3) {
            // with K folds, everything outside fold k backs its nuisance fit
            let keep: Vec<usize> = (0..data.n()).filter(|&r| r != gone).collect();
            let smaller = data.select(&keep).unwrap();
            let report =
                estimate(&smaller, TreatmentPath::TREATED, &choice, &plan_without(&plan, gone), 0.95).unwrap();
            let new_i = if i > gone { i - 1 } else { i };
            assert_eq!(report.score_values[new_i].to_bits(), full.score_values[i].to_bits());
            assert_eq!(bits(&report.per_fold_eta[k].beta), bits(&full.per_fold_eta[k].beta));
        }
    }
}

#[test]
fn report_matches_its_scores() {
    let data = small_data(500, 3);
    let plan = make_plan(data.n(), 2, 5).unwrap();
    for family in [NuisanceFamily::MomentTargeted, NuisanceFamily::Baseline] {
        let r = estimate(&data, TreatmentPath::TREATED, &EstimatorChoice::new(family), &plan, 0.9).unwrap();
        let n = r.score_values.len() as f64;
        let mean = r.score_values.iter().sum::<f64>() / n;
        assert_eq!(r.theta_hat, mean);
        // two-pass variance around a compensated mean
        let var = r.score_values.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        assert!((r.sigma_hat.powi(2) - var).abs() <= 1e-12 * var);
        assert!(r.ci_low <= r.theta_hat && r.theta_hat <= r.ci_high);
        let half = 1.6448536269514722 * r.sigma_hat / n.sqrt();
        assert!((r.ci_high - r.theta_hat - half).abs() < 1e-8 * half);
        assert_eq!(r.per_fold_eta.len(), 2);
        assert_eq!(r.per_fold_lambdas.len(), 2);
        assert_eq!(r.nuisance_family, Some(family));
    }
}

#[test]
fn estimates_are_deterministic() {
    let data = small_data(500, 4);
    let plan = make_plan(data.n(), 2, 6).unwrap();
    let choice = EstimatorChoice::default();
    let a = estimate(&data, TreatmentPath::TREATED, &choice, &plan, 0.95).unwrap();
    let b = estimate(&data, TreatmentPath::TREATED, &choice, &plan, 0.95).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn report_json_has_the_documented_fields() {
    let data = small_data(3000, 5);
    let plan = make_plan(data.n(), 2, 1).unwrap();
    let r = estimate(&data, TreatmentPath::new(1, 0).unwrap(), &EstimatorChoice::default(), &plan, 0.95).unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    for key in [
        "theta_hat",
        "sigma_hat",
        "ci",
        "level",
        "n",
        "k_folds",
        "seed",
        "path",
        "nuisance_family",
        "diagnostics",
        "per_fold_lambdas",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    for key in ["clipped", "nonconverged_stages", "saturated_evals"] {
        assert!(v["diagnostics"].get(key).is_some(), "missing diagnostics.{key}");
    }
    assert_eq!(v["path"], "1,0");
    assert_eq!(v["nuisance_family"], "moment");
    assert_eq!(v["ci"][0].as_f64().unwrap(), r.ci_low);
}

#[test]
fn every_certified_stage_passes_the_kkt_oracle() {
    let data = small_data(1000, 6);
    let plan = make_plan(data.n(), 2, 2).unwrap();
    for family in [NuisanceFamily::MomentTargeted, NuisanceFamily::Baseline] {
        let choice = EstimatorChoice::new(family);
        for k in 0..2 {
            let fit = fit_nuisances(&data, &plan, k, &choice).unwrap();
            let eta = &fit.eta;
            let kinds = family.losses();
            let moment = family == NuisanceFamily::MomentTargeted;
            let frozen = [
                Frozen::none(),
                if moment { Frozen::gamma(&eta.gamma) } else { Frozen::none() },
                if moment { Frozen::gamma_delta(&eta.gamma, &eta.delta) } else { Frozen::none() },
                if moment { Frozen::all(&eta.gamma, &eta.delta, &eta.alpha) } else { Frozen::alpha(&eta.alpha) },
            ];
            let coefs = [&eta.gamma, &eta.delta, &eta.alpha, &eta.beta];
            for stage in Stage::ALL {
                let s = stage.index();
                let st = &fit.stages[s];
                let problem = LossProblem::new(kinds[s], &data, plan.group(k, stage), &frozen[s]).unwrap();
                let v = kkt_check_with(&problem, coefs[s], st.lambda, choice.solver.penalize_intercept);
                assert_eq!(v, st.kkt_violation);
                if st.converged {
                    assert!(v <= choice.solver.tol, "{family:?} fold {k} {}: {v:e}", stage.name());
                }
            }
        }
    }
}

#[test]
fn oracle_nuisances_give_nominal_coverage() {
    let spec = ScenarioSpec { n: 500, ..ScenarioSpec::default() };
    let scenario = Scenario::new(&spec).unwrap();
    let truth = scenario.ground_truth();
    let eta = truth.oracle_eta.complete().unwrap();
    let overlap = OverlapConfig::default();
    let reps = 200;
    let mut hits = 0;
    for r in 0..reps {
        let data = scenario.generate_with(spec.n, 1000 + r).unwrap();
        let plan = make_plan(data.n(), 2, r).unwrap();
        let report = estimate_with_nuisances(
            &data,
            TreatmentPath::TREATED,
            &plan,
            &[eta.clone(), eta.clone()],
            &overlap,
            0.95,
        )
        .unwrap();
        hits += report.covers(truth.theta_true) as usize;
    }
    let coverage = hits as f64 / reps as f64;
    assert!((0.90..=0.99).contains(&coverage), "coverage {coverage}");
}

#[test]
fn unit_propensities_telescope_to_the_outcome_mean() {
    let mut r = rng(31);
    let n = 40;
    let base = random_dataset(&mut r, n, 3, 2, 1.0, 1.0);
    assert!(base.a1().iter().chain(base.a2()).all(|&a| a == 1));
    let mut eta = NuisanceParams::zeros(3, 2);
    eta.gamma[0] = 50.0;
    eta.delta[0] = 50.0;
    let plan = make_plan(n, 2, 3).unwrap();
    let overlap = OverlapConfig::new(0.01, false).unwrap();
    let report =
        estimate_with_nuisances(&base, TreatmentPath::TREATED, &plan, &[eta.clone(), eta], &overlap, 0.95).unwrap();
    for i in 0..n {
        assert_eq!(report.score_values[i], base.y()[i]);
    }
    let mean = base.y().iter().sum::<f64>() / n as f64;
    assert!((report.theta_hat - mean).abs() < 1e-12);
}

#[test]
fn shifting_every_score_moves_only_the_point_estimate() {
    let data = small_data(400, 7);
    let plan = make_plan(data.n(), 2, 8).unwrap();
    let overlap = OverlapConfig::default();
    let choice = EstimatorChoice::default();
    let fitted = estimate(&data, TreatmentPath::TREATED, &choice, &plan, 0.95).unwrap();
    let c = 2.5;
    // Y + c with alpha and beta intercepts raised by c moves every score by c
    let shifted_data = data.with_outcome(data.y().iter().map(|y| y + c).collect()).unwrap();
    let shifted_eta: Vec<NuisanceParams> = fitted
        .per_fold_eta
        .iter()
        .map(|e| {
            let mut e = e.clone();
            e.alpha[0] += c;
            e.beta[0] += c;
            e
        })
        .collect();
    let shifted =
        estimate_with_nuisances(&shifted_data, TreatmentPath::TREATED, &plan, &shifted_eta, &overlap, 0.95).unwrap();
    for (a, b) in fitted.score_values.iter().zip(&shifted.score_values) {
        assert!((b - a - c).abs() < 1e-9 * (1.0 + a.abs()));
    }
    assert!((shifted.theta_hat - fitted.theta_hat - c).abs() < 1e-9);
    assert!((shifted.sigma_hat - fitted.sigma_hat).abs() < 1e-9 * fitted.sigma_hat);
}

#[test]
fn contrasts_are_antisymmetric_and_shift_invariant() {
    let data = small_data(3000, 8);
    let plan = make_plan(data.n(), 2, 9).unwrap();
    let choice = EstimatorChoice::default();
    let treat = TreatmentPath::TREATED;
    let control = TreatmentPath::new(1, 0).unwrap();
    let fwd = estimate_dte(&data, treat, control, &choice, &plan, 0.95).unwrap();
    let back = estimate_dte(&data, control, treat, &choice, &plan, 0.95).unwrap();
    assert_eq!(fwd.theta_hat, -back.theta_hat);
    assert_eq!(fwd.sigma_hat, back.sigma_hat);
    assert!(estimate_dte(&data, treat, treat, &choice, &plan, 0.95).is_err());

    let c = -4.0;
    let moved = data.with_outcome(data.y().iter().map(|y| y + c).collect()).unwrap();
    let fwd2 = estimate_dte(&moved, treat, control, &choice, &plan, 0.95).unwrap();
    assert!((fwd2.treat.theta_hat - fwd.treat.theta_hat - c).abs() < 1e-6);
    assert!((fwd2.control.theta_hat - fwd.control.theta_hat - c).abs() < 1e-6);
    assert!((fwd2.theta_hat - fwd.theta_hat).abs() < 1e-6);

    let combined = combine_dte(fwd.treat.clone(), fwd.control.clone());
    assert_eq!(combined, fwd);
    let diff: Vec<f64> = fwd.treat.score_values.iter().zip(&fwd.control.score_values).map(|(a, b)| a - b).collect();
    let n = diff.len() as f64;
    let m = diff.iter().sum::<f64>() / n;
    let var = diff.iter().map(|d| (d - m).powi(2)).sum::<f64>() / n;
    assert!((fwd.sigma_hat.powi(2) - var).abs() < 1e-10 * var);
}

#[test]
fn null_contrast_stays_within_four_standard_errors() {
    let mut spec = small_spec(3000, 0);
    let mut coef = spec.coefficients();
    coef.offsets = [0.0; 4];
    spec.coef_true = Some(coef);
    let scenario = Scenario::new(&spec).unwrap();
    let treat = TreatmentPath::TREATED;
    let control = TreatmentPath::new(1, 0).unwrap();
    assert_eq!(scenario.theta(treat), scenario.theta(control));
    let choice = EstimatorChoice::default();
    let mut worst = 0.0f64;
    for r in 0..30 {
        let data = scenario.generate_with(spec.n, 500 + r).unwrap();
        let plan = make_plan(data.n(), 2, r).unwrap();
        let dte = estimate_dte(&data, treat, control, &choice, &plan, 0.95).unwrap();
        let z = dte.theta_hat.abs() / dte.std_error();
        worst = worst.max(z);
    }
    assert!(worst < 4.0, "largest |z| {worst}");
}

#[test]
fn baseline_time2_outcome_is_least_squares_at_zero_penalty() {
    let data = small_data(1200, 9);
    let plan = make_plan(data.n(), 2, 10).unwrap();
    let rows = plan.group(0, Stage::Alpha);
    let problem = LossProblem::new(LossKind::BaseOr2, &data, rows, &Frozen::none()).unwrap();
    let config = SolverConfig {
        lambda: 0.0,
        tol: 1e-11,
        max_iter: 100_000,
        ..SolverConfig::default()
    };
    let res = solve(&problem, &config).unwrap();
    assert!(res.converged);
    let (mut x, mut y) = (vec![], vec![]);
    for &i in rows {
        let o = data.observation(i);
        if o.a1 == 1 && o.a2 == 1 {
            x.push(o.s1.iter().chain(o.s2).copied().collect::<Vec<f64>>());
            y.push(o.y);
        }
    }
    assert!(x.len() > 2 * data.d());
    let beta = ols(&x, &y);
    assert!(max_abs_diff(&res.coef, &beta) < 1e-8);
}

#[test]
fn intercept_only_propensity_calibrates_to_the_treated_share() {
    for (treated, want) in [(10usize, 0.0f64), (15, 3.0f64.ln())] {
        let n = 20;
        let a1: Vec<u8> = (0..n).map(|i| u8::from(i < treated)).collect();
        let data = Dataset::new(
            vec![0.0; n],
            a1,
            vec![1; n],
            Array2::from_elem((n, 1), 1.0),
            Array2::zeros((n, 1)),
        )
        .unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let problem = LossProblem::new(LossKind::Ps1, &data, &rows, &Frozen::none()).unwrap();
        let res = solve(&problem, &SolverConfig { lambda: 0.0, tol: 1e-12, ..SolverConfig::default() }).unwrap();
        assert!(res.converged);
        assert!((res.coef[0] - want).abs() < 1e-10, "{} vs {want}", res.coef[0]);
        let grad = problem.eval(ArrayView1::from(&res.coef)).unwrap().gradient;
        assert!(grad[0].abs() < 1e-12);
    }
}

#[test]
fn too_few_treated_rows_is_reported() {
    let mut r = rng(32);
    let data = random_dataset(&mut r, 40, 3, 2, 0.0, 0.5);
    let plan = make_plan(40, 2, 0).unwrap();
    let err = fit_nuisances(&data, &plan, 0, &EstimatorChoice::default()).unwrap_err();
    assert!(matches!(err, seqdr::Error::DegenerateSubsample { fold: 0, stage: "gamma", treated: 0, .. }), "{err}");
}

#[test]
fn strict_mode_turns_warnings_into_errors() {
    let data = small_data(400, 10);
    let plan = make_plan(data.n(), 2, 11).unwrap();
    let mut choice = EstimatorChoice::default();
    choice.solver.max_iter = 1;
    let lax = estimate(&data, TreatmentPath::TREATED, &choice, &plan, 0.95).unwrap();
    assert!(!lax.diagnostics.nonconverged_stages.is_empty());
    choice.strict = true;
    let err = estimate(&data, TreatmentPath::TREATED, &choice, &plan, 0.95).unwrap_err();
    assert!(matches!(err, seqdr::Error::NotConverged { .. }), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plans_partition_and_balance(n in 16usize..400, k in 2usize..6, seed in any::<u64>()) {
        prop_assume!(n >= 8 * k);
        let plan = make_plan(n, k, seed).unwrap();
        prop_assert_eq!(&plan, &make_plan(n, k, seed).unwrap());
        let mut seen = vec![0; n];
        for (f, fold) in plan.folds.iter().enumerate() {
            for &i in fold {
                seen[i] += 1;
                prop_assert_eq!(plan.fold_of[i], f);
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in 0..k {
            let mut in_groups = vec![0; n];
            let mut gs = vec![];
            for s in Stage::ALL {
                let g = plan.group(f, s);
                prop_assert!(!g.is_empty());
                gs.push(g.len());
                for &i in g {
                    prop_assert_ne!(plan.fold_of[i], f);
                    in_groups[i] += 1;
                }
            }
            for i in 0..n {
                prop_assert_eq!(in_groups[i], usize::from(plan.fold_of[i] != f));
            }
            prop_assert!(gs.iter().max().unwrap() - gs.iter().min().unwrap() <= 1);
            prop_assert_eq!(*gs.iter().min().unwrap(), plan.base_group_size(f));
        }
    }
}
