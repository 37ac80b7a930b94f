//! L1-penalized minimization by accelerated proximal gradient.
//!
//! The iteration is FISTA with backtracking on the step size, an adaptive
//! momentum restart, and a monotone safeguard: a candidate that increases the
//! penalized objective is rejected and replaced by a plain proximal gradient
//! step from the current iterate. Termination is certified by the KKT
//! violation of the L1 problem, never by objective stalling.

use ndarray::{Array1, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossProblem;

/// Solver settings. `lambda` is the L1 weight of the current problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub backtrack_shrink: f64,
    pub init_step: f64,
    pub penalize_intercept: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 0.0,
            max_iter: 5000,
            tol: 1e-8,
            backtrack_shrink: 0.5,
            init_step: 1.0,
            penalize_intercept: true,
            warm_start: None,
        }
    }
}

impl SolverConfig {
    pub fn with_lambda(&self, lambda: f64) -> SolverConfig {
        SolverConfig {
            lambda,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be a finite non-negative number, got {}",
                self.lambda
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        if !(self.backtrack_shrink > 0.0 && self.backtrack_shrink < 1.0) {
            return Err(Error::InvalidArgument(
                "backtrack_shrink must lie in (0, 1)".into(),
            ));
        }
        if !(self.init_step > 0.0 && self.init_step.is_finite()) {
            return Err(Error::InvalidArgument("init_step must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub coef: Vec<f64>,
    pub iterations: usize,
    pub kkt_violation: f64,
    pub converged: bool,
    pub saturated: bool,
    /// Penalized objective at `coef`.
    pub objective: f64,
}

/// `sign(x) max(|x| - t, 0)`.
#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Theory-scaled penalty `c sqrt(log(dim) / n)`.
pub fn lambda_from_theory(n_subsample: usize, dim: usize, scale_c: f64) -> f64 {
    scale_c * ((dim as f64).ln() / n_subsample as f64).sqrt()
}

/// Backtracking gives up below this step size.
const MIN_STEP: f64 = 1e-30;

fn penalty_weights(dim: usize, lambda: f64, penalize_intercept: bool) -> Array1<f64> {
    let mut w = Array1::from_elem(dim, lambda);
    if !penalize_intercept && dim > 0 {
        w[0] = 0.0;
    }
    w
}

fn kkt_from_gradient(coef: ArrayView1<'_, f64>, grad: &Array1<f64>, pen: &Array1<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for ((&c, &g), &l) in coef.iter().zip(grad).zip(pen) {
        let v = if c == 0.0 {
            g.abs() - l
        } else {
            (g + l * c.signum()).abs()
        };
        if v.is_nan() {
            return f64::INFINITY;
        }
        worst = worst.max(v);
    }
    worst
}

/// KKT violation of `coef` for the problem with L1 weight `lambda` on every
/// coordinate.
pub fn kkt_check(problem: &LossProblem, coef: &[f64], lambda: f64) -> f64 {
    kkt_check_with(problem, coef, lambda, true)
}

/// As [`kkt_check`], optionally leaving coordinate 0 unpenalized.
pub fn kkt_check_with(
    problem: &LossProblem,
    coef: &[f64],
    lambda: f64,
    penalize_intercept: bool,
) -> f64 {
    let coef = ArrayView1::from(coef);
    let grad = problem.gradient_at(&problem.predict(coef));
    let pen = penalty_weights(coef.len(), lambda, penalize_intercept);
    kkt_from_gradient(coef, &grad, &pen)
}

fn l1(coef: &Array1<f64>, pen: &Array1<f64>) -> f64 {
    coef.iter().zip(pen).map(|(c, l)| l * c.abs()).sum()
}

/// Minimizes `loss(c) + lambda ||c||_1`.
pub fn solve(problem: &LossProblem, config: &SolverConfig) -> Result<SolveResult> {
    solve_inner(problem, config, None)
}

/// As [`solve`], also returning the penalized objective after every accepted
/// iteration (starting with the initial point).
pub fn solve_traced(problem: &LossProblem, config: &SolverConfig) -> Result<(SolveResult, Vec<f64>)> {
    let mut trace = Vec::new();
    let result = solve_inner(problem, config, Some(&mut trace))?;
    Ok((result, trace))
}

fn solve_inner(
    problem: &LossProblem,
    config: &SolverConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<SolveResult> {
    config.validate()?;
    let dim = problem.dim();
    let pen = penalty_weights(dim, config.lambda, config.penalize_intercept);

    let mut x = match &config.warm_start {
        Some(w) if w.len() != dim => {
            return Err(Error::DimensionMismatch(format!(
                "warm start has length {}, problem has dimension {dim}",
                w.len()
            )))
        }
        Some(w) => Array1::from(w.clone()),
        None => Array1::zeros(dim),
    };
    let mut u_x = problem.predict(x.view());
    let (f0, mut saturated) = problem.value_at(&u_x);
    if !f0.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidStart(format!(
            "loss is not finite at the starting point ({f0})"
        )));
    }
    let mut f_x = f0;
    let mut obj_x = f_x + l1(&x, &pen);
    let mut g_x = problem.gradient_at(&u_x);
    let mut kkt = kkt_from_gradient(x.view(), &g_x, &pen);
    if let Some(t) = trace.as_deref_mut() {
        t.push(obj_x);
    }

    let mut y = x.clone();
    let mut u_y = u_x.clone();
    let mut f_y = f_x;
    let mut g_y = g_x.clone();
    let mut momentum = 1.0_f64;
    let mut step = config.init_step;
    let mut iterations = 0;

    while kkt > config.tol && iterations < config.max_iter {
        iterations += 1;

        // Backtracking on the quadratic upper model around y.
        let mut stalled = false;
        let (z, u_z, f_z) = loop {
            let z: Array1<f64> = Zip::from(&y)
                .and(&g_y)
                .and(&pen)
                .map_collect(|&yj, &gj, &lj| soft_threshold(yj - step * gj, step * lj));
            let u_z = problem.predict(z.view());
            let (f_z, sat) = problem.value_at(&u_z);
            saturated |= sat;
            let diff = &z - &y;
            let model = f_y + g_y.dot(&diff) + diff.dot(&diff) / (2.0 * step);
            if f_z.is_finite() && f_z <= model + 1e-12 * model.abs().max(1.0) {
                break (z, u_z, f_z);
            }
            step *= config.backtrack_shrink;
            if step < MIN_STEP {
                stalled = true;
                break (z, u_z, f_z);
            }
        };
        if stalled {
            // No representable step decreases the model: give up uncertified.
            break;
        }
        let obj_z = f_z + l1(&z, &pen);

        let at_x = y == x;
        if obj_z > obj_x && !at_x {
            // Momentum overshot: restart from x with a plain proximal step.
            y.assign(&x);
            u_y.assign(&u_x);
            f_y = f_x;
            g_y.assign(&g_x);
            momentum = 1.0;
            continue;
        }

        // Gradient-based restart test, evaluated before x moves.
        let restart = (&y - &z).dot(&(&z - &x)) > 0.0;
        let g_z = problem.gradient_at(&u_z);
        let next_momentum = if restart {
            1.0
        } else {
            (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0
        };
        let beta = if restart { 0.0 } else { (momentum - 1.0) / next_momentum };
        momentum = next_momentum;

        if beta > 0.0 {
            y = &z + &((&z - &x) * beta);
            u_y = &u_z + &((&u_z - &u_x) * beta);
        } else {
            y.assign(&z);
            u_y.assign(&u_z);
        }
        x = z;
        u_x = u_z;
        f_x = f_z;
        obj_x = obj_z;
        g_x = g_z;
        if let Some(t) = trace.as_deref_mut() {
            t.push(obj_x);
        }

        kkt = kkt_from_gradient(x.view(), &g_x, &pen);
        if kkt <= config.tol {
            break;
        }
        if beta > 0.0 {
            let (fy, sat) = problem.value_at(&u_y);
            saturated |= sat;
            f_y = fy;
            g_y = problem.gradient_at(&u_y);
        } else {
            f_y = f_x;
            g_y.assign(&g_x);
        }
    }

    Ok(SolveResult {
        coef: x.to_vec(),
        iterations,
        kkt_violation: kkt,
        converged: kkt <= config.tol,
        saturated: saturated || problem.frozen_saturated(),
        objective: obj_x,
    })
}
