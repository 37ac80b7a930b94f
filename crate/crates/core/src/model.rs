//! Working models, the doubly robust score and treatment-path relabeling.
//!
//! The score is written for the path `(1, 1)`:
//!
//! ```text
//! psi(W; eta) = S1'b + A1 (S2bar'a - S1'b) / g(S1'c)
//!                    + A1 A2 (Y - S2bar'a) / (g(S1'c) g(S2bar'd))
//! ```
//!
//! with `eta = (c, d, a, b) = (gamma, delta, alpha, beta)` and
//! `S2bar = (S1, S2)`. Any other path is reduced to `(1, 1)` by replacing the
//! indicators with `1{A1 == a1}` and `1{A2 == a2}`.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Observation, ObservationBuf};
use crate::error::{Error, Result};

/// Logistic link `g(u) = 1 / (1 + exp(-u))`.
pub fn logistic(u: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "logistic link needs a finite argument, got {u}"
        )));
    }
    Ok(sigmoid(u))
}

/// Unchecked logistic link, evaluated in the branch that avoids overflow.
#[inline]
pub(crate) fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(u))` without overflow.
#[inline]
pub(crate) fn log1p_exp(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], c: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), c.len());
    x.iter().zip(c).map(|(a, b)| a * b).sum()
}

/// `S2bar' c` for the stacked history, without materializing `S2bar`.
#[inline]
pub(crate) fn dot_history(s1: &[f64], s2: &[f64], c: &[f64]) -> f64 {
    let d1 = s1.len();
    dot(s1, &c[..d1]) + dot(s2, &c[d1..])
}

/// Coefficient quadruple `(gamma, delta, alpha, beta)` of the four working
/// models: time-1 propensity, time-2 propensity, time-2 outcome and time-1
/// outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceParams {
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl NuisanceParams {
    /// All-zero coefficients for a `(d1, d2)` design.
    pub fn zeros(d1: usize, d2: usize) -> Self {
        NuisanceParams {
            gamma: vec![0.0; d1],
            delta: vec![0.0; d1 + d2],
            alpha: vec![0.0; d1 + d2],
            beta: vec![0.0; d1],
        }
    }

    pub fn validate(&self, d1: usize, d2: usize) -> Result<()> {
        let d = d1 + d2;
        let checks = [
            ("gamma", self.gamma.len(), d1),
            ("delta", self.delta.len(), d),
            ("alpha", self.alpha.len(), d),
            ("beta", self.beta.len(), d1),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::DimensionMismatch(format!(
                    "{name} has length {got}, expected {want}"
                )));
            }
        }
        let all = self
            .gamma
            .iter()
            .chain(&self.delta)
            .chain(&self.alpha)
            .chain(&self.beta);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "nuisance coefficients must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// A target treatment sequence `(a1, a2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreatmentPath {
    pub a1_target: u8,
    pub a2_target: u8,
}

impl TreatmentPath {
    pub const TREATED: TreatmentPath = TreatmentPath {
        a1_target: 1,
        a2_target: 1,
    };

    pub fn new(a1_target: u8, a2_target: u8) -> Result<Self> {
        if a1_target > 1 || a2_target > 1 {
            return Err(Error::InvalidArgument(format!(
                "treatment path entries must be 0 or 1, got ({a1_target}, {a2_target})"
            )));
        }
        Ok(TreatmentPath {
            a1_target,
            a2_target,
        })
    }

    /// Indicators after relabeling: `1{a1 == a1_target}`, `1{a2 == a2_target}`.
    #[inline]
    pub fn relabel(&self, a1: u8, a2: u8) -> (u8, u8) {
        ((a1 == self.a1_target) as u8, (a2 == self.a2_target) as u8)
    }
}

impl std::fmt::Display for TreatmentPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.a1_target, self.a2_target)
    }
}

impl std::str::FromStr for TreatmentPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim_matches(|c| c == '(' || c == ')').split(',').collect();
        if parts.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "treatment path must look like `a1,a2`, got {s:?}"
            )));
        }
        let parse = |p: &str| -> Result<u8> {
            p.trim().parse::<u8>().map_err(|_| {
                Error::InvalidArgument(format!("treatment path entry {p:?} is not 0 or 1"))
            })
        };
        TreatmentPath::new(parse(parts[0])?, parse(parts[1])?)
    }
}

/// Propensity floor applied when scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapConfig {
    pub c0: f64,
    pub clip_propensities: bool,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        OverlapConfig {
            c0: 0.01,
            clip_propensities: true,
        }
    }
}

impl OverlapConfig {
    pub fn new(c0: f64, clip_propensities: bool) -> Result<Self> {
        let cfg = OverlapConfig {
            c0,
            clip_propensities,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0 && self.c0 < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "overlap floor c0 must lie in (0, 0.5), got {}",
                self.c0
            )));
        }
        Ok(())
    }

    #[inline]
    fn apply(&self, p: f64) -> (f64, bool) {
        if self.clip_propensities {
            let clipped = p.clamp(self.c0, 1.0 - self.c0);
            (clipped, clipped != p)
        } else {
            (p, false)
        }
    }
}

/// Score value plus the number of propensities that were clipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreEval {
    pub value: f64,
    pub clipped: u8,
}

/// Doubly robust score of one observation for `path`.
pub fn score(
    obs: &Observation<'_>,
    eta: &NuisanceParams,
    path: TreatmentPath,
    overlap: &OverlapConfig,
) -> Result<f64> {
    check_dims(obs, eta)?;
    score_unchecked(obs, eta, path, overlap, 0).map(|s| s.value)
}

fn check_dims(obs: &Observation<'_>, eta: &NuisanceParams) -> Result<()> {
    let d1 = obs.s1.len();
    let d = d1 + obs.s2.len();
    if eta.gamma.len() != d1 || eta.beta.len() != d1 || eta.delta.len() != d || eta.alpha.len() != d
    {
        return Err(Error::DimensionMismatch(format!(
            "nuisance coefficients do not match an observation with d1 = {d1}, d = {d}"
        )));
    }
    Ok(())
}

/// Score evaluation without the dimension check; `index` only labels errors.
pub(crate) fn score_unchecked(
    obs: &Observation<'_>,
    eta: &NuisanceParams,
    path: TreatmentPath,
    overlap: &OverlapConfig,
    index: usize,
) -> Result<ScoreEval> {
    let (a1, a2) = path.relabel(obs.a1, obs.a2);
    let m = dot(obs.s1, &eta.beta);
    if a1 == 0 {
        return Ok(ScoreEval {
            value: m,
            clipped: 0,
        });
    }
    let v = dot_history(obs.s1, obs.s2, &eta.alpha);
    let (p, clip_p) = overlap.apply(sigmoid(dot(obs.s1, &eta.gamma)));
    if p == 0.0 {
        return Err(Error::NumericalDegeneracy {
            index,
            msg: "time-1 propensity is exactly 0".into(),
        });
    }
    let mut value = m + (v - m) / p;
    let mut clipped = clip_p as u8;
    if a2 == 1 {
        let (q, clip_q) = overlap.apply(sigmoid(dot_history(obs.s1, obs.s2, &eta.delta)));
        if q == 0.0 {
            return Err(Error::NumericalDegeneracy {
                index,
                msg: "time-2 propensity is exactly 0".into(),
            });
        }
        clipped += clip_q as u8;
        value += (obs.y - v) / (p * q);
    }
    Ok(ScoreEval { value, clipped })
}

/// Gradient of the unclipped `(1, 1)` score with respect to each coefficient block.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradient {
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Analytic gradient of the score (path `(1, 1)`, no clipping).
pub fn score_gradient(obs: &Observation<'_>, eta: &NuisanceParams) -> Result<ScoreGradient> {
    check_dims(obs, eta)?;
    let a1 = obs.a1 as f64;
    let a2 = obs.a2 as f64;
    let u1 = dot(obs.s1, &eta.gamma);
    let u2 = dot_history(obs.s1, obs.s2, &eta.delta);
    let m = dot(obs.s1, &eta.beta);
    let v = dot_history(obs.s1, obs.s2, &eta.alpha);
    let p = sigmoid(u1);
    let q = sigmoid(u2);
    // d(1/g(u))/du = -exp(-u)
    let e1 = (-u1).exp();
    let e2 = (-u2).exp();

    let c_gamma = -a1 * e1 * (v + a2 * (obs.y - v) / q - m);
    let c_delta = -a1 * a2 * (obs.y - v) * e2 / p;
    let c_alpha = a1 / p * (1.0 - a2 / q);
    let c_beta = 1.0 - a1 / p;

    let history: Vec<f64> = obs.s1.iter().chain(obs.s2).copied().collect();
    Ok(ScoreGradient {
        gamma: obs.s1.iter().map(|x| c_gamma * x).collect(),
        delta: history.iter().map(|x| c_delta * x).collect(),
        alpha: history.iter().map(|x| c_alpha * x).collect(),
        beta: obs.s1.iter().map(|x| c_beta * x).collect(),
    })
}

/// Replaces the treatment indicators by `1{A1 == a1}` and `1{A2 == a2}`, so
/// that `(1, 1)` estimation on the result targets `path`.
pub fn relabel_for_path(data: &Dataset, path: TreatmentPath) -> Dataset {
    let (a1, a2): (Vec<u8>, Vec<u8>) = data
        .a1()
        .iter()
        .zip(data.a2())
        .map(|(&a, &b)| path.relabel(a, b))
        .unzip();
    data.with_treatments(a1, a2)
}

/// Arbitrary (possibly wrong) working functions for the four nuisance models.
pub struct WorkingModels<'a> {
    /// Time-1 propensity `s1 -> P(A1 = 1 | S1)`.
    pub pi: &'a dyn Fn(&[f64]) -> f64,
    /// Time-2 propensity `(s1, s2) -> P(A2 = 1 | S2bar, A1 = 1)`.
    pub rho: &'a dyn Fn(&[f64], &[f64]) -> f64,
    /// Time-2 outcome regression `(s1, s2) -> E{Y(1,1) | S2bar, A1 = 1}`.
    pub nu: &'a dyn Fn(&[f64], &[f64]) -> f64,
    /// Time-1 outcome regression `s1 -> E{Y(1,1) | S1}`.
    pub mu: &'a dyn Fn(&[f64]) -> f64,
}

impl WorkingModels<'_> {
    /// Representation integrand with the working functions plugged in.
    pub fn score(&self, obs: &Observation<'_>) -> f64 {
        let mu = (self.mu)(obs.s1);
        if obs.a1 == 0 {
            return mu;
        }
        let pi = (self.pi)(obs.s1);
        let nu = (self.nu)(obs.s1, obs.s2);
        let mut value = mu + (nu - mu) / pi;
        if obs.a2 == 1 {
            value += (obs.y - nu) / (pi * (self.rho)(obs.s1, obs.s2));
        }
        value
    }
}

/// A source of i.i.d. observations with a known counterfactual mean.
pub trait ObservationSampler {
    /// `E{Y(1,1)}` of the sampled population.
    fn theta(&self) -> f64;
    fn draw(&mut self) -> ObservationBuf;
}

/// Monte Carlo estimate of `E[psi] - theta` and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentCheck {
    pub bias: f64,
    pub mc_se: f64,
    pub n_mc: usize,
}

impl MomentCheck {
    /// `|bias|` expressed in Monte Carlo standard errors.
    pub fn z(&self) -> f64 {
        if self.mc_se > 0.0 {
            self.bias.abs() / self.mc_se
        } else if self.bias == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Simulates `n_mc` draws and averages the representation integrand built from
/// `working`, returning its deviation from the sampler's true mean.
pub fn dr_representation_check<S: ObservationSampler + ?Sized>(
    sampler: &mut S,
    working: &WorkingModels<'_>,
    n_mc: usize,
) -> MomentCheck {
    let theta = sampler.theta();
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..n_mc {
        let obs = sampler.draw();
        let x = working.score(&obs.view()) - theta;
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (x - mean);
    }
    let var = if n_mc > 1 { m2 / (n_mc - 1) as f64 } else { 0.0 };
    MomentCheck {
        bias: mean,
        mc_se: (var / n_mc.max(1) as f64).sqrt(),
        n_mc,
    }
}
