//! Synthetic two-period data with known counterfactual means and controlled
//! misspecification of each working model.
//!
//! With `X ~ N(0, I)` and `S1 = (1, X)`, the generator is
//!
//! ```text
//! S2_j(a1)  = sum_k L_jk S1_k + tau a1 1{j = 0} + [or1] kappa (X1^2 - 1) 1{j = 0} + Z_j
//! logit pi  = gamma0' S1 + [ps1] kappa (X1 X2 + X1^2 - 1)
//! logit rho = delta0' S2bar + [ps2] kappa (Z_1^2 - 1)
//! Y(a1, a2) = alpha0' S2bar(a1) + [or2] kappa (Z_0^2 - 1) + c_{a1 a2} + eps
//! ```
//!
//! with `Z ~ N(0, I)`, `eps ~ N(0, noise_sd^2)`, both propensities clipped into
//! `[c0, 1 - c0]`, `A1 ~ Bernoulli(pi)`, `A2 ~ Bernoulli(rho)` evaluated at the
//! realized history, and `Y = Y(A1, A2)`. Every nonlinear term has mean zero,
//! so `theta_{a1 a2} = alpha0_0 + tau a1 alpha0_{S2_0} + c_{a1 a2}` exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use ndarray::Array2;

use crate::dataset::{Dataset, ObservationBuf};
use crate::error::{Error, Result};
use crate::losses::{Frozen, LossKind, LossProblem};
use crate::model::{dot, dot_history, sigmoid, NuisanceParams, ObservationSampler, TreatmentPath};
use crate::optim::{solve, SolverConfig};

/// Which true mechanisms leave their working model class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct Misspecification {
    pub ps1: bool,
    pub ps2: bool,
    pub or2: bool,
    pub or1: bool,
}

impl Misspecification {
    pub const NONE: Misspecification = Misspecification {
        ps1: false,
        ps2: false,
        or2: false,
        or1: false,
    };

    /// At each time point at least one of the two working models is correct.
    pub fn is_sequentially_valid(&self) -> bool {
        !(self.ps1 && self.or1) && !(self.ps2 && self.or2)
    }
}

/// The four admissible correctness patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CanPattern {
    /// Both propensities wrong, both outcome models right.
    A,
    /// Both outcome models wrong, both propensities right.
    B,
    /// Time-1 propensity and time-2 outcome model wrong.
    C,
    /// Time-2 propensity and time-1 outcome model wrong.
    D,
}

impl CanPattern {
    pub const ALL: [CanPattern; 4] = [CanPattern::A, CanPattern::B, CanPattern::C, CanPattern::D];

    pub fn misspec(self) -> Misspecification {
        let mut m = Misspecification::NONE;
        match self {
            CanPattern::A => (m.ps1, m.ps2) = (true, true),
            CanPattern::B => (m.or1, m.or2) = (true, true),
            CanPattern::C => (m.ps1, m.or2) = (true, true),
            CanPattern::D => (m.ps2, m.or1) = (true, true),
        }
        m
    }

    pub fn name(self) -> &'static str {
        match self {
            CanPattern::A => "CAN_a",
            CanPattern::B => "CAN_b",
            CanPattern::C => "CAN_c",
            CanPattern::D => "CAN_d",
        }
    }
}

/// Loading of `S2_{s2}` on `S1_{s1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub s2: usize,
    pub s1: usize,
    pub weight: f64,
}

/// Generating parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueCoefficients {
    /// Time-1 propensity index on `S1`.
    pub gamma: Vec<f64>,
    /// Time-2 propensity index on `S2bar`.
    pub delta: Vec<f64>,
    /// Time-2 outcome mean on `S2bar`.
    pub alpha: Vec<f64>,
    /// Mean of `S2` given `S1`.
    pub links: Vec<Link>,
    /// Shift of `S2_0` under `A1 = 1`.
    pub tau: f64,
    /// Outcome offsets for paths (1,1), (1,0), (0,1), (0,0).
    pub offsets: [f64; 4],
    /// Strength of every misspecification term.
    pub kappa: f64,
}

/// A simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub n: usize,
    /// Columns of `S1`, intercept included.
    pub d1: usize,
    pub d2: usize,
    pub s_gamma: usize,
    pub s_delta: usize,
    pub s_alpha: usize,
    /// `S2_j` loads on `S1_{j+1}` for `j < s_beta - 1`; the remaining `S2`
    /// coordinates are pure noise. This bounds the support of the time-1
    /// outcome coefficients by `s_beta`.
    pub s_beta: usize,
    pub noise_sd: f64,
    pub misspec: Misspecification,
    pub seed: u64,
    /// Permit patterns with both models wrong at one time point.
    pub allow_violation: bool,
    pub overlap_c0: f64,
    /// Explicit generating parameters; derived from the sparsity counts when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coef_true: Option<TrueCoefficients>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            n: 2000,
            d1: 100,
            d2: 100,
            s_gamma: 4,
            s_delta: 4,
            s_alpha: 4,
            s_beta: 4,
            noise_sd: 1.0,
            misspec: Misspecification::NONE,
            seed: 0,
            allow_violation: false,
            overlap_c0: 0.01,
            coef_true: None,
        }
    }
}

impl ScenarioSpec {
    /// Default-size scenario with the given correctness pattern.
    pub fn with_pattern(pattern: CanPattern) -> Self {
        ScenarioSpec {
            misspec: pattern.misspec(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.d1 < 3 || self.d2 < 2 {
            return bad(format!(
                "need d1 >= 3 and d2 >= 2, got d1 = {}, d2 = {}",
                self.d1, self.d2
            ));
        }
        let d = self.d1 + self.d2;
        for (name, s, max) in [
            ("s_gamma", self.s_gamma, self.d1),
            ("s_delta", self.s_delta, d),
            ("s_alpha", self.s_alpha, d),
            ("s_beta", self.s_beta, self.d1),
        ] {
            if s == 0 || s > max {
                return bad(format!("{name} = {s} must lie in 1..={max}"));
            }
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be positive, got {}", self.noise_sd));
        }
        if !(self.overlap_c0 > 0.0 && self.overlap_c0 < 0.5) {
            return bad(format!("overlap_c0 must lie in (0, 0.5), got {}", self.overlap_c0));
        }
        if !self.allow_violation && !self.misspec.is_sequentially_valid() {
            return bad(format!(
                "misspecification {:?} leaves both working models wrong at one time point",
                self.misspec
            ));
        }
        let c = self.coefficients();
        if c.gamma.len() != self.d1 || c.delta.len() != d || c.alpha.len() != d {
            return bad("coefficient lengths do not match (d1, d2)".into());
        }
        if let Some(l) = c.links.iter().find(|l| l.s2 >= self.d2 || l.s1 >= self.d1) {
            return bad(format!("link {l:?} out of range"));
        }
        let all = c.gamma.iter().chain(&c.delta).chain(&c.alpha).chain(&c.offsets);
        if all.chain([&c.tau, &c.kappa]).any(|v| !v.is_finite()) {
            return bad("coefficients must be finite".into());
        }
        Ok(())
    }

    /// The generating parameters in force.
    pub fn coefficients(&self) -> TrueCoefficients {
        self.coef_true
            .clone()
            .unwrap_or_else(|| default_coefficients(self))
    }
}

/// Signs alternate along each support so that no index is dominated by a
/// single direction.
fn default_coefficients(spec: &ScenarioSpec) -> TrueCoefficients {
    let (d1, d2) = (spec.d1, spec.d2);
    let sign = |k: usize| if k.is_multiple_of(2) { 1.0 } else { -1.0 };

    let mut gamma = vec![0.0; d1];
    gamma[0] = 1.5;
    for k in 1..spec.s_gamma {
        gamma[k] = 0.3 * sign(k - 1);
    }

    // Odd positions of the support go to S2, even ones to S1.
    let interleave = |s: usize, first: f64, mag: f64| {
        let mut c = vec![0.0; d1 + d2];
        c[0] = first;
        let (mut next1, mut next2) = (1, 0);
        for k in 1..s {
            let v = mag * sign((k - 1) / 2);
            if (k % 2 == 1 && next2 < d2) || next1 >= d1 {
                c[d1 + next2] = v;
                next2 += 1;
            } else {
                c[next1] = v;
                next1 += 1;
            }
        }
        c
    };
    let delta = interleave(spec.s_delta, 1.5, -0.25);
    let alpha = interleave(spec.s_alpha, 1.0, 1.0);

    let links = (0..d2.min(spec.s_beta - 1))
        .map(|j| Link {
            s2: j,
            s1: j + 1,
            weight: 0.5,
        })
        .collect();

    TrueCoefficients {
        gamma,
        delta,
        alpha,
        links,
        tau: 0.5,
        offsets: [0.0, -0.5, -0.25, -1.0],
        kappa: 0.5,
    }
}

/// Parameters known to equal the population targets of the working losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleEta {
    pub gamma: Option<Vec<f64>>,
    pub delta: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

impl OracleEta {
    /// All four blocks, when every working model is correct.
    pub fn complete(&self) -> Option<NuisanceParams> {
        Some(NuisanceParams {
            gamma: self.gamma.clone()?,
            delta: self.delta.clone()?,
            alpha: self.alpha.clone()?,
            beta: self.beta.clone()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `E{Y(1,1)}`.
    pub theta_true: f64,
    pub oracle_eta: OracleEta,
    /// Simulation error of `theta_true`; zero for the closed form.
    pub mc_se: f64,
}

/// A validated scenario with its true mechanisms.
#[derive(Debug, Clone)]
pub struct Scenario {
    spec: ScenarioSpec,
    coef: TrueCoefficients,
    /// `links_by_s2[j]` lists `(s1 index, weight)` for `S2_j`.
    links_by_s2: Vec<Vec<(usize, f64)>>,
}

fn path_index(a1: u8, a2: u8) -> usize {
    match (a1, a2) {
        (1, 1) => 0,
        (1, 0) => 1,
        (0, 1) => 2,
        _ => 3,
    }
}

impl Scenario {
    pub fn new(spec: &ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let coef = spec.coefficients();
        let mut links_by_s2 = vec![Vec::new(); spec.d2];
        for l in &coef.links {
            links_by_s2[l.s2].push((l.s1, l.weight));
        }
        Ok(Scenario {
            spec: spec.clone(),
            coef,
            links_by_s2,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn coefficients(&self) -> &TrueCoefficients {
        &self.coef
    }

    fn clip(&self, p: f64) -> f64 {
        p.clamp(self.spec.overlap_c0, 1.0 - self.spec.overlap_c0)
    }

    fn link_mean(&self, j: usize, s1: &[f64]) -> f64 {
        self.links_by_s2[j].iter().map(|&(k, w)| w * s1[k]).sum()
    }

    /// `E{S2_j(a1) | S1}`.
    pub fn s2_mean(&self, j: usize, s1: &[f64], a1: u8) -> f64 {
        let mut m = self.link_mean(j, s1);
        if j == 0 {
            m += self.coef.tau * a1 as f64;
            if self.spec.misspec.or1 {
                m += self.coef.kappa * (s1[1] * s1[1] - 1.0);
            }
        }
        m
    }

    /// True `P(A1 = 1 | S1)`.
    pub fn pi(&self, s1: &[f64]) -> f64 {
        let mut u = dot(s1, &self.coef.gamma);
        if self.spec.misspec.ps1 {
            u += self.coef.kappa * (s1[1] * s1[2] + s1[1] * s1[1] - 1.0);
        }
        self.clip(sigmoid(u))
    }

    /// True `P(A2 = 1 | S2bar)`.
    pub fn rho(&self, s1: &[f64], s2: &[f64]) -> f64 {
        let mut u = dot_history(s1, s2, &self.coef.delta);
        if self.spec.misspec.ps2 {
            let z1 = s2[1] - self.s2_mean(1, s1, 0);
            u += self.coef.kappa * (z1 * z1 - 1.0);
        }
        self.clip(sigmoid(u))
    }

    /// True `E{Y(1,1) | S2bar, A1 = 1}`.
    pub fn nu(&self, s1: &[f64], s2: &[f64]) -> f64 {
        let mut v = dot_history(s1, s2, &self.coef.alpha) + self.coef.offsets[0];
        if self.spec.misspec.or2 {
            let z0 = s2[0] - self.s2_mean(0, s1, 1);
            v += self.coef.kappa * (z0 * z0 - 1.0);
        }
        v
    }

    /// True `E{Y(1,1) | S1}`.
    pub fn mu(&self, s1: &[f64]) -> f64 {
        let d1 = self.spec.d1;
        let a = &self.coef.alpha;
        let mut m = dot(s1, &a[..d1]) + self.coef.offsets[0];
        for j in 0..self.spec.d2 {
            if a[d1 + j] != 0.0 {
                m += a[d1 + j] * self.s2_mean(j, s1, 1);
            }
        }
        m
    }

    /// `E{Y(a1, a2)}` in closed form.
    pub fn theta(&self, path: TreatmentPath) -> f64 {
        let d1 = self.spec.d1;
        let a = &self.coef.alpha;
        a[0] + self.coef.tau * path.a1_target as f64 * a[d1]
            + self.coef.offsets[path_index(path.a1_target, path.a2_target)]
    }

    /// Linear coefficients of `mu` when the time-1 outcome model is correct.
    pub fn beta0(&self) -> Vec<f64> {
        let d1 = self.spec.d1;
        let a = &self.coef.alpha;
        let mut b = a[..d1].to_vec();
        b[0] += self.coef.offsets[0] + self.coef.tau * a[d1];
        for l in &self.coef.links {
            b[l.s1] += a[d1 + l.s2] * l.weight;
        }
        b
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let m = self.spec.misspec;
        let mut alpha = self.coef.alpha.clone();
        alpha[0] += self.coef.offsets[0];
        GroundTruth {
            theta_true: self.theta(TreatmentPath::TREATED),
            oracle_eta: OracleEta {
                gamma: (!m.ps1).then(|| self.coef.gamma.clone()),
                delta: (!m.ps2).then(|| self.coef.delta.clone()),
                alpha: (!m.or2).then_some(alpha),
                beta: (!m.or1 && (!m.ps2 || !m.or2)).then(|| self.beta0()),
            },
            mc_se: 0.0,
        }
    }

    /// One observation drawn with `rng`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ObservationBuf {
        self.draw_potential(rng).observed
    }

    /// One observation together with its four potential outcomes; consumes
    /// the same random numbers as [`Scenario::draw`].
    pub fn draw_potential<R: Rng + ?Sized>(&self, rng: &mut R) -> PotentialDraw {
        let (d1, d2) = (self.spec.d1, self.spec.d2);
        let mut s1 = Vec::with_capacity(d1);
        s1.push(1.0);
        for _ in 1..d1 {
            s1.push(rng.sample::<f64, _>(StandardNormal));
        }
        let z: Vec<f64> = (0..d2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let eps = self.spec.noise_sd * rng.sample::<f64, _>(StandardNormal);
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();

        let s2_under = |a1: u8| -> Vec<f64> {
            (0..d2).map(|j| self.s2_mean(j, &s1, a1) + z[j]).collect()
        };
        let extra = if self.spec.misspec.or2 {
            self.coef.kappa * (z[0] * z[0] - 1.0)
        } else {
            0.0
        };
        let mut potential = [0.0; 4];
        for a1 in [1u8, 0] {
            let base = dot_history(&s1, &s2_under(a1), &self.coef.alpha);
            for a2 in [1u8, 0] {
                potential[path_index(a1, a2)] =
                    base + self.coef.offsets[path_index(a1, a2)] + eps + extra;
            }
        }

        let a1 = u8::from(u1 < self.pi(&s1));
        let s2 = s2_under(a1);
        let a2 = u8::from(u2 < self.rho(&s1, &s2));
        PotentialDraw {
            observed: ObservationBuf {
                y: potential[path_index(a1, a2)],
                a1,
                a2,
                s1,
                s2,
            },
            potential,
        }
    }

    /// `n` observations from a stream seeded by `seed`.
    pub fn generate_with(&self, n: usize, seed: u64) -> Result<Dataset> {
        let (d1, d2) = (self.spec.d1, self.spec.d2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::with_capacity(n);
        let mut a1 = Vec::with_capacity(n);
        let mut a2 = Vec::with_capacity(n);
        let mut s1 = Vec::with_capacity(n * d1);
        let mut s2 = Vec::with_capacity(n * d2);
        for _ in 0..n {
            let o = self.draw(&mut rng);
            y.push(o.y);
            a1.push(o.a1);
            a2.push(o.a2);
            s1.extend_from_slice(&o.s1);
            s2.extend_from_slice(&o.s2);
        }
        let s1 = Array2::from_shape_vec((n, d1), s1).expect("row-major buffer");
        let s2 = Array2::from_shape_vec((n, d2), s2).expect("row-major buffer");
        Dataset::new(y, a1, a2, s1, s2)
    }

    /// An endless i.i.d. stream.
    pub fn sampler(&self, seed: u64) -> ScenarioSampler<'_> {
        ScenarioSampler {
            scenario: self,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// An observation and its potential outcomes `Y(a1, a2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialDraw {
    pub observed: ObservationBuf,
    potential: [f64; 4],
}

impl PotentialDraw {
    pub fn outcome(&self, path: TreatmentPath) -> f64 {
        self.potential[path_index(path.a1_target, path.a2_target)]
    }
}

/// Streams observations of a [`Scenario`].
pub struct ScenarioSampler<'a> {
    scenario: &'a Scenario,
    rng: ChaCha8Rng,
}

impl ObservationSampler for ScenarioSampler<'_> {
    fn theta(&self) -> f64 {
        self.scenario.theta(TreatmentPath::TREATED)
    }

    fn draw(&mut self) -> ObservationBuf {
        self.scenario.draw(&mut self.rng)
    }
}

/// Draws `spec.n` observations with `spec.seed`.
pub fn generate(spec: &ScenarioSpec) -> Result<(Dataset, GroundTruth)> {
    let scenario = Scenario::new(spec)?;
    let data = scenario.generate_with(spec.n, spec.seed)?;
    Ok((data, scenario.ground_truth()))
}

/// Seed offset that keeps the population draw apart from `spec.seed`'s sample.
const POPULATION_STREAM: u64 = 0x005e_ed0f_9090_7a7a;

/// Population targets of the four moment-targeted losses, approximated by
/// unpenalized sequential fits on one draw of `n_pop` observations.
pub fn oracle_eta(spec: &ScenarioSpec, n_pop: usize) -> Result<NuisanceParams> {
    let scenario = Scenario::new(spec)?;
    let data = scenario.generate_with(n_pop, spec.seed ^ POPULATION_STREAM)?;
    oracle_eta_on(&data)
}

/// Unpenalized sequential moment-targeted fits on all rows of `data`.
pub fn oracle_eta_on(data: &Dataset) -> Result<NuisanceParams> {
    let rows: Vec<usize> = (0..data.n()).collect();
    let config = SolverConfig {
        max_iter: 200_000,
        tol: 1e-9,
        ..SolverConfig::default()
    };
    let fit = |kind: LossKind, frozen: &Frozen| -> Result<Vec<f64>> {
        let problem = LossProblem::new(kind, data, &rows, frozen)?;
        let res = solve(&problem, &config)?;
        if !res.converged {
            return Err(Error::NotConverged {
                fold: 0,
                stage: match kind {
                    LossKind::Ps1 => "gamma",
                    LossKind::Ps2 => "delta",
                    LossKind::Or2 => "alpha",
                    _ => "beta",
                },
                kkt_violation: res.kkt_violation,
            });
        }
        Ok(res.coef)
    };
    let gamma = fit(LossKind::Ps1, &Frozen::none())?;
    let delta = fit(LossKind::Ps2, &Frozen::gamma(&gamma))?;
    let alpha = fit(LossKind::Or2, &Frozen::gamma_delta(&gamma, &delta))?;
    let beta = fit(LossKind::Or1, &Frozen::all(&gamma, &delta, &alpha))?;
    Ok(NuisanceParams {
        gamma,
        delta,
        alpha,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(misspec: Misspecification) -> ScenarioSpec {
        ScenarioSpec {
            n: 200,
            d1: 6,
            d2: 4,
            misspec,
            ..Default::default()
        }
    }

    #[test]
    fn default_supports() {
        let spec = ScenarioSpec::default();
        let c = spec.coefficients();
        let nnz = |v: &[f64]| v.iter().filter(|x| **x != 0.0).count();
        assert_eq!(nnz(&c.gamma), 4);
        assert_eq!(nnz(&c.delta), 4);
        assert_eq!(nnz(&c.alpha), 4);
        let s = Scenario::new(&spec).unwrap();
        assert!(nnz(&s.beta0()) <= spec.s_beta);
        assert!(s.beta0()[spec.s_beta..].iter().all(|&b| b == 0.0));
        assert_ne!(c.alpha[spec.d1], 0.0);
    }

    #[test]
    fn excluded_patterns_need_override() {
        for m in [
            Misspecification { ps1: true, or1: true, ..Misspecification::NONE },
            Misspecification { ps2: true, or2: true, ..Misspecification::NONE },
        ] {
            let spec = small(m);
            assert!(matches!(generate(&spec), Err(Error::InvalidScenario(_))));
            let spec = ScenarioSpec { allow_violation: true, ..spec };
            assert!(generate(&spec).is_ok());
        }
        for p in CanPattern::ALL {
            assert!(p.misspec().is_sequentially_valid());
        }
    }

    #[test]
    fn intercept_only_truth() {
        let mut spec = small(Misspecification::NONE);
        let mut c = spec.coefficients();
        c.alpha = vec![0.0; 10];
        c.alpha[0] = 2.25;
        spec.coef_true = Some(c);
        let (_, truth) = generate(&spec).unwrap();
        assert_eq!(truth.theta_true, 2.25);
        assert_eq!(truth.mc_se, 0.0);
    }

    #[test]
    fn same_seed_same_data() {
        let spec = small(CanPattern::C.misspec());
        assert_eq!(generate(&spec).unwrap().0, generate(&spec).unwrap().0);
        let other = ScenarioSpec { seed: 1, ..spec.clone() };
        assert_ne!(generate(&other).unwrap().0, generate(&spec).unwrap().0);
    }

    #[test]
    fn oracle_blocks_follow_correctness() {
        let s = Scenario::new(&small(CanPattern::D.misspec())).unwrap();
        let o = s.ground_truth().oracle_eta;
        assert!(o.gamma.is_some() && o.alpha.is_some());
        assert!(o.delta.is_none() && o.beta.is_none());
        let s = Scenario::new(&small(Misspecification::NONE)).unwrap();
        assert!(s.ground_truth().oracle_eta.complete().is_some());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = ScenarioSpec::with_pattern(CanPattern::B);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ScenarioSpec>(&json).unwrap(), spec);
        let partial: ScenarioSpec = serde_json::from_str(r#"{"n": 50, "misspec": {"ps1": true}}"#).unwrap();
        assert_eq!(partial.n, 50);
        assert!(partial.misspec.ps1 && !partial.misspec.ps2);
    }
}
