//! Subsample losses for the four working models.
//!
//! Every loss has the form `M^{-1} sum_i f_i(x_i' c)` where `x_i` is either
//! `S1` or the stacked history `S2bar`, `c` is the coefficient being fitted and
//! `f_i` is one of three scalar families:
//!
//! * exponential tilt: `w ((1 - a) u + a exp(-u))` (time-1 and time-2 propensity),
//! * logistic likelihood: `w (-a u + log(1 + exp(u)))` (baseline propensities),
//! * weighted square: `w (t - u)^2` (outcome regressions).
//!
//! Rows whose weight is identically zero (for example `A1 = 0` rows in the
//! time-2 losses) are dropped at construction; the mean is still taken over
//! the full subsample size `M`.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{dot, dot_history, log1p_exp, sigmoid};

/// Linear predictors are capped at this magnitude before exponentiation.
pub const PREDICTOR_CAP: f64 = 700.0;

/// The eight losses: moment-targeted ones first, then the baseline
/// (likelihood / least-squares) counterparts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    Ps1,
    Ps2,
    Or2,
    Or1,
    BasePs1,
    BasePs2,
    BaseOr2,
    BaseOr1,
}

impl LossKind {
    pub const ALL: [LossKind; 8] = [
        LossKind::Ps1,
        LossKind::Ps2,
        LossKind::Or2,
        LossKind::Or1,
        LossKind::BasePs1,
        LossKind::BasePs2,
        LossKind::BaseOr2,
        LossKind::BaseOr1,
    ];

    /// Whether the coefficient lives on `S1` (else on `S2bar`).
    pub fn on_time1(self) -> bool {
        matches!(
            self,
            LossKind::Ps1 | LossKind::Or1 | LossKind::BasePs1 | LossKind::BaseOr1
        )
    }

    pub fn dim(self, d1: usize, d2: usize) -> usize {
        if self.on_time1() {
            d1
        } else {
            d1 + d2
        }
    }

    fn family(self) -> Family {
        match self {
            LossKind::Ps1 | LossKind::Ps2 => Family::ExpTilt,
            LossKind::BasePs1 | LossKind::BasePs2 => Family::Logistic,
            _ => Family::Square,
        }
    }
}

/// Scalar family of the per-row loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    ExpTilt,
    Logistic,
    Square,
}

/// Previously fitted coefficients a loss depends on. Only the entries a
/// given kind needs are read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frozen {
    pub gamma: Option<Vec<f64>>,
    pub delta: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
}

impl Frozen {
    pub fn none() -> Self {
        Frozen::default()
    }

    pub fn gamma(gamma: &[f64]) -> Self {
        Frozen {
            gamma: Some(gamma.to_vec()),
            ..Frozen::default()
        }
    }

    pub fn gamma_delta(gamma: &[f64], delta: &[f64]) -> Self {
        Frozen {
            gamma: Some(gamma.to_vec()),
            delta: Some(delta.to_vec()),
            alpha: None,
        }
    }

    pub fn all(gamma: &[f64], delta: &[f64], alpha: &[f64]) -> Self {
        Frozen {
            gamma: Some(gamma.to_vec()),
            delta: Some(delta.to_vec()),
            alpha: Some(alpha.to_vec()),
        }
    }

    pub fn alpha(alpha: &[f64]) -> Self {
        Frozen {
            alpha: Some(alpha.to_vec()),
            ..Frozen::default()
        }
    }
}

/// Value and gradient of a subsample loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub gradient: Array1<f64>,
    /// Some linear predictor hit the exponent cap.
    pub saturated: bool,
}

/// A loss bound to its subsample rows and frozen coefficients.
#[derive(Debug, Clone)]
pub struct LossProblem {
    kind: Option<LossKind>,
    family: Family,
    /// Active rows x dim, row-major.
    x: Array2<f64>,
    weight: Array1<f64>,
    /// Treatment indicator (exponential / logistic) or regression target (square).
    aux: Array1<f64>,
    /// Multiplier of the row sum, `1 / M`.
    scale: f64,
    /// Frozen weights or targets already needed the exponent cap.
    saturated: bool,
}

#[inline]
fn capped_exp(u: f64, saturated: &mut bool) -> f64 {
    if u.abs() > PREDICTOR_CAP {
        *saturated = true;
    }
    u.clamp(-PREDICTOR_CAP, PREDICTOR_CAP).exp()
}

fn expect_frozen<'a>(v: &'a Option<Vec<f64>>, name: &str, len: usize, kind: LossKind) -> Result<&'a [f64]> {
    let v = v.as_deref().ok_or_else(|| {
        Error::InvalidArgument(format!("loss {kind:?} needs a fitted {name}"))
    })?;
    if v.len() != len {
        return Err(Error::DimensionMismatch(format!(
            "frozen {name} has length {}, expected {len}",
            v.len()
        )));
    }
    Ok(v)
}

impl LossProblem {
    /// Builds loss `kind` on rows `rows` of `data`.
    pub fn new(kind: LossKind, data: &Dataset, rows: &[usize], frozen: &Frozen) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("a loss needs at least one row".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= data.n()) {
            return Err(Error::InvalidArgument(format!("row index {bad} out of range")));
        }
        let d1 = data.d1();
        let d = data.d();
        let dim = kind.dim(d1, data.d2());
        let mut saturated = false;

        let gamma = if matches!(kind, LossKind::Ps2 | LossKind::Or2 | LossKind::Or1) {
            Some(expect_frozen(&frozen.gamma, "gamma", d1, kind)?)
        } else {
            None
        };
        let delta = if matches!(kind, LossKind::Or2 | LossKind::Or1) {
            Some(expect_frozen(&frozen.delta, "delta", d, kind)?)
        } else {
            None
        };
        let alpha = if matches!(kind, LossKind::Or1 | LossKind::BaseOr1) {
            Some(expect_frozen(&frozen.alpha, "alpha", d, kind)?)
        } else {
            None
        };

        let mut active = Vec::with_capacity(rows.len());
        let mut weight = Vec::with_capacity(rows.len());
        let mut aux = Vec::with_capacity(rows.len());
        for &i in rows {
            let o = data.observation(i);
            let a1 = o.a1 as f64;
            let a2 = o.a2 as f64;
            let (w, t) = match kind {
                LossKind::Ps1 | LossKind::BasePs1 => (1.0, a1),
                LossKind::Ps2 => {
                    let g = gamma.unwrap();
                    // 1/g(u) = 1 + exp(-u)
                    (a1 * (1.0 + capped_exp(-dot(o.s1, g), &mut saturated)), a2)
                }
                LossKind::BasePs2 => (a1, a2),
                LossKind::Or2 => {
                    if o.a1 == 0 || o.a2 == 0 {
                        (0.0, o.y)
                    } else {
                        let g = gamma.unwrap();
                        let dl = delta.unwrap();
                        let inv_p = 1.0 + capped_exp(-dot(o.s1, g), &mut saturated);
                        let e2 = capped_exp(-dot_history(o.s1, o.s2, dl), &mut saturated);
                        (e2 * inv_p, o.y)
                    }
                }
                LossKind::BaseOr2 => (a1 * a2, o.y),
                LossKind::Or1 => {
                    if o.a1 == 0 {
                        (0.0, 0.0)
                    } else {
                        let g = gamma.unwrap();
                        let dl = delta.unwrap();
                        let al = alpha.unwrap();
                        let w = capped_exp(-dot(o.s1, g), &mut saturated);
                        (w, pseudo_outcome(o.y, o.a2, o.s1, o.s2, al, dl, &mut saturated))
                    }
                }
                LossKind::BaseOr1 => {
                    if o.a1 == 0 {
                        (0.0, 0.0)
                    } else {
                        (1.0, dot_history(o.s1, o.s2, alpha.unwrap()))
                    }
                }
            };
            if w != 0.0 {
                active.push(i);
                weight.push(w);
                aux.push(t);
            }
        }

        let mut x = Array2::<f64>::zeros((active.len(), dim));
        for (r, &i) in active.iter().enumerate() {
            let mut row = x.row_mut(r);
            let s1 = data.s1_row(i);
            row.as_slice_mut().unwrap()[..d1].copy_from_slice(s1);
            if dim == d {
                row.as_slice_mut().unwrap()[d1..].copy_from_slice(data.s2_row(i));
            }
        }
        Ok(LossProblem {
            kind: Some(kind),
            family: kind.family(),
            x,
            weight: Array1::from(weight),
            aux: Array1::from(aux),
            scale: 1.0 / rows.len() as f64,
            saturated,
        })
    }

    /// A loss from explicit parts: `scale * sum_i f(x_i' c)` with `f` from
    /// `family`, per-row `weight` and `aux` (treatment or target).
    pub fn from_parts(
        family: Family,
        x: Array2<f64>,
        weight: Array1<f64>,
        aux: Array1<f64>,
        scale: f64,
    ) -> Result<Self> {
        if weight.len() != x.nrows() || aux.len() != x.nrows() {
            return Err(Error::DimensionMismatch(
                "weight and aux must have one entry per row".into(),
            ));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument("scale must be positive".into()));
        }
        Ok(LossProblem {
            kind: None,
            family,
            x: x.as_standard_layout().into_owned(),
            weight,
            aux,
            scale,
            saturated: false,
        })
    }

    pub fn kind(&self) -> Option<LossKind> {
        self.kind
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Rows with non-zero weight.
    pub fn active_rows(&self) -> usize {
        self.x.nrows()
    }

    /// Whether building the frozen weights already hit the exponent cap.
    pub fn frozen_saturated(&self) -> bool {
        self.saturated
    }

    /// Linear predictors `x_i' c` of the active rows.
    pub fn predict(&self, coef: ArrayView1<'_, f64>) -> Array1<f64> {
        self.x.dot(&coef)
    }

    /// Loss value from predictors; the flag reports exponent capping.
    pub fn value_at(&self, u: &Array1<f64>) -> (f64, bool) {
        let mut saturated = false;
        let mut sum = 0.0;
        for ((&ui, &w), &t) in u.iter().zip(&self.weight).zip(&self.aux) {
            sum += w * match self.family {
                Family::ExpTilt => (1.0 - t) * ui + t * capped_exp(-ui, &mut saturated),
                Family::Logistic => -t * ui + log1p_exp(ui),
                Family::Square => (t - ui) * (t - ui),
            };
        }
        (self.scale * sum, saturated)
    }

    /// Gradient from predictors.
    pub fn gradient_at(&self, u: &Array1<f64>) -> Array1<f64> {
        let mut ignore = false;
        let deriv: Array1<f64> = u
            .iter()
            .zip(&self.weight)
            .zip(&self.aux)
            .map(|((&ui, &w), &t)| {
                self.scale
                    * w
                    * match self.family {
                        Family::ExpTilt => (1.0 - t) - t * capped_exp(-ui, &mut ignore),
                        Family::Logistic => sigmoid(ui) - t,
                        Family::Square => -2.0 * (t - ui),
                    }
            })
            .collect();
        self.x.t().dot(&deriv)
    }

    pub fn value(&self, coef: ArrayView1<'_, f64>) -> f64 {
        self.value_at(&self.predict(coef)).0
    }

    pub fn eval(&self, coef: ArrayView1<'_, f64>) -> Result<LossEval> {
        if coef.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "coefficient has length {}, loss expects {}",
                coef.len(),
                self.dim()
            )));
        }
        let u = self.predict(coef);
        let (value, sat) = self.value_at(&u);
        Ok(LossEval {
            value,
            gradient: self.gradient_at(&u),
            saturated: sat || self.saturated,
        })
    }
}

/// Doubly robust pseudo-outcome `S2bar'a + A2 (Y - S2bar'a) / g(S2bar'd)`.
fn pseudo_outcome(
    y: f64,
    a2: u8,
    s1: &[f64],
    s2: &[f64],
    alpha: &[f64],
    delta: &[f64],
    saturated: &mut bool,
) -> f64 {
    let v = dot_history(s1, s2, alpha);
    if a2 == 0 {
        return v;
    }
    let inv_q = 1.0 + capped_exp(-dot_history(s1, s2, delta), saturated);
    v + (y - v) * inv_q
}

fn eval_kind(
    kind: LossKind,
    coef: &[f64],
    data: &Dataset,
    rows: &[usize],
    frozen: &Frozen,
) -> Result<LossEval> {
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("coefficients must be finite".into()));
    }
    LossProblem::new(kind, data, rows, frozen)?.eval(ArrayView1::from(coef))
}

/// Time-1 propensity loss `(1 - A1) S1'c + A1 exp(-S1'c)`.
pub fn eval_l1(gamma: &[f64], data: &Dataset, rows: &[usize]) -> Result<LossEval> {
    eval_kind(LossKind::Ps1, gamma, data, rows, &Frozen::none())
}

/// Time-2 propensity loss, weighted by `A1 / g(S1' gamma_hat)`.
pub fn eval_l2(delta: &[f64], gamma_hat: &[f64], data: &Dataset, rows: &[usize]) -> Result<LossEval> {
    eval_kind(LossKind::Ps2, delta, data, rows, &Frozen::gamma(gamma_hat))
}

/// Time-2 outcome loss, weighted square with weight `A1 A2 exp(-S2bar'd) / g(S1'c)`.
pub fn eval_l3(
    alpha: &[f64],
    gamma_hat: &[f64],
    delta_hat: &[f64],
    data: &Dataset,
    rows: &[usize],
) -> Result<LossEval> {
    eval_kind(
        LossKind::Or2,
        alpha,
        data,
        rows,
        &Frozen::gamma_delta(gamma_hat, delta_hat),
    )
}

/// Time-1 outcome loss on the doubly robust pseudo-outcome, weight `A1 exp(-S1'c)`.
pub fn eval_l4(
    beta: &[f64],
    gamma_hat: &[f64],
    delta_hat: &[f64],
    alpha_hat: &[f64],
    data: &Dataset,
    rows: &[usize],
) -> Result<LossEval> {
    eval_kind(
        LossKind::Or1,
        beta,
        data,
        rows,
        &Frozen::all(gamma_hat, delta_hat, alpha_hat),
    )
}

/// Baseline losses: logistic likelihoods for the propensities, plain least
/// squares for the outcome regressions (`BaseOr1` regresses `S2bar' alpha_1`
/// on `S1` over `A1 = 1` rows).
pub fn eval_baseline(
    kind: LossKind,
    coef: &[f64],
    frozen: &Frozen,
    data: &Dataset,
    rows: &[usize],
) -> Result<LossEval> {
    if !matches!(
        kind,
        LossKind::BasePs1 | LossKind::BasePs2 | LossKind::BaseOr2 | LossKind::BaseOr1
    ) {
        return Err(Error::InvalidArgument(format!("{kind:?} is not a baseline loss")));
    }
    eval_kind(kind, coef, data, rows, frozen)
}
