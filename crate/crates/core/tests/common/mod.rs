//! Shared oracles for the integration tests: random small instances, a
//! loss written out row by row straight from its definition, and a dense
//! damped-Newton solver built on that definition.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use seqdr::{Dataset, Frozen, LossKind};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, len: usize, sd: f64) -> Vec<f64> {
    (0..len).map(|_| sd * normal(rng)).collect()
}

/// Dataset with standard normal covariates and Bernoulli(p1), Bernoulli(p2)
/// treatments that ignore the covariates.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d1: usize, d2: usize, p1: f64, p2: f64) -> Dataset {
    let mut s1 = Array2::<f64>::zeros((n, d1));
    let mut s2 = Array2::<f64>::zeros((n, d2));
    let mut y = Vec::with_capacity(n);
    let mut a1 = Vec::with_capacity(n);
    let mut a2 = Vec::with_capacity(n);
    for i in 0..n {
        s1[[i, 0]] = 1.0;
        for j in 1..d1 {
            s1[[i, j]] = normal(rng);
        }
        for j in 0..d2 {
            s2[[i, j]] = normal(rng);
        }
        y.push(normal(rng));
        a1.push(u8::from(rng.random::<f64>() < p1));
        a2.push(u8::from(rng.random::<f64>() < p2));
    }
    Dataset::new(y, a1, a2, s1, s2).unwrap()
}

/// Random frozen coefficients for every kind, small enough to keep the
/// exponential weights moderate.
pub fn random_frozen(rng: &mut ChaCha8Rng, d1: usize, d: usize) -> Frozen {
    Frozen::all(
        &normal_vec(rng, d1, 0.3),
        &normal_vec(rng, d, 0.3),
        &normal_vec(rng, d, 0.5),
    )
}

fn g(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One row of a loss: covariates `x`, and the scalar loss of `u = x'c` with
/// its first two derivatives.
struct RefRow {
    x: Vec<f64>,
    f: Box<dyn Fn(f64) -> (f64, f64, f64)>,
}

fn ref_rows(kind: LossKind, data: &Dataset, rows: &[usize], frozen: &Frozen) -> Vec<RefRow> {
    let gamma = frozen.gamma.clone().unwrap_or_default();
    let delta = frozen.delta.clone().unwrap_or_default();
    let alpha = frozen.alpha.clone().unwrap_or_default();
    let mut out = Vec::new();
    for &i in rows {
        let o = data.observation(i);
        let s1 = o.s1.to_vec();
        let sbar: Vec<f64> = o.s1.iter().chain(o.s2).copied().collect();
        let (a1, a2, y) = (o.a1 as f64, o.a2 as f64, o.y);
        let x = if kind.on_time1() { s1.clone() } else { sbar.clone() };
        let f: Box<dyn Fn(f64) -> (f64, f64, f64)> = match kind {
            LossKind::Ps1 => Box::new(move |u| {
                let e = (-u).exp();
                ((1.0 - a1) * u + a1 * e, (1.0 - a1) - a1 * e, a1 * e)
            }),
            LossKind::Ps2 => {
                let w = a1 / g(dotp(&s1, &gamma));
                Box::new(move |u| {
                    let e = (-u).exp();
                    (
                        w * ((1.0 - a2) * u + a2 * e),
                        w * ((1.0 - a2) - a2 * e),
                        w * a2 * e,
                    )
                })
            }
            LossKind::Or2 => {
                let w = a1 * a2 * (-dotp(&sbar, &delta)).exp() / g(dotp(&s1, &gamma));
                Box::new(move |u| (w * (y - u).powi(2), -2.0 * w * (y - u), 2.0 * w))
            }
            LossKind::Or1 => {
                let w = a1 * (-dotp(&s1, &gamma)).exp();
                let v = dotp(&sbar, &alpha);
                let t = v + a2 * (y - v) / g(dotp(&sbar, &delta));
                Box::new(move |u| (w * (t - u).powi(2), -2.0 * w * (t - u), 2.0 * w))
            }
            LossKind::BasePs1 => Box::new(move |u| {
                let p = g(u);
                (-a1 * u + (1.0 + u.exp()).ln(), p - a1, p * (1.0 - p))
            }),
            LossKind::BasePs2 => Box::new(move |u| {
                let p = g(u);
                (
                    a1 * (-a2 * u + (1.0 + u.exp()).ln()),
                    a1 * (p - a2),
                    a1 * p * (1.0 - p),
                )
            }),
            LossKind::BaseOr2 => {
                let w = a1 * a2;
                Box::new(move |u| (w * (y - u).powi(2), -2.0 * w * (y - u), 2.0 * w))
            }
            LossKind::BaseOr1 => {
                let t = dotp(&sbar, &alpha);
                Box::new(move |u| (a1 * (t - u).powi(2), -2.0 * a1 * (t - u), 2.0 * a1))
            }
        };
        out.push(RefRow { x, f });
    }
    out
}

/// Value, gradient and Hessian of the subsample-mean loss.
pub struct RefLoss {
    rows: Vec<RefRow>,
    m: f64,
    dim: usize,
}

impl RefLoss {
    pub fn new(kind: LossKind, data: &Dataset, rows: &[usize], frozen: &Frozen) -> Self {
        RefLoss {
            rows: ref_rows(kind, data, rows, frozen),
            m: rows.len() as f64,
            dim: kind.dim(data.d1(), data.d2()),
        }
    }

    pub fn value(&self, c: &[f64]) -> f64 {
        self.rows.iter().map(|r| (r.f)(dotp(&r.x, c)).0).sum::<f64>() / self.m
    }

    pub fn derivs(&self, c: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let mut v = 0.0;
        let mut grad = DVector::<f64>::zeros(self.dim);
        let mut hess = DMatrix::<f64>::zeros(self.dim, self.dim);
        for r in &self.rows {
            let (f0, f1, f2) = (r.f)(dotp(&r.x, c));
            let x = DVector::from_column_slice(&r.x);
            v += f0;
            grad += &x * f1;
            hess += &x * x.transpose() * f2;
        }
        (v / self.m, grad / self.m, hess / self.m)
    }
}

/// Damped Newton with Armijo backtracking on the smooth (unpenalized) loss.
pub fn newton_reference(loss: &RefLoss, start: &[f64]) -> Vec<f64> {
    let mut c = DVector::from_column_slice(start);
    for _ in 0..200 {
        let (v, grad, hess) = loss.derivs(c.as_slice());
        if grad.amax() < 1e-13 {
            break;
        }
        let step = hess
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&grad))
            .or_else(|| hess.lu().solve(&grad))
            .expect("reference Hessian is singular");
        let slope = grad.dot(&step);
        let mut t = 1.0;
        loop {
            let trial = &c - &step * t;
            let vt = loss.value(trial.as_slice());
            if vt <= v - 1e-4 * t * slope || t < 1e-12 {
                c = trial;
                break;
            }
            t *= 0.5;
        }
    }
    c.as_slice().to_vec()
}

/// Ordinary least squares of `y` on the rows of `x`.
pub fn ols(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for (row, &t) in x.iter().zip(y) {
        let v = DVector::from_column_slice(row);
        xtx += &v * v.transpose();
        xty += &v * t;
    }
    xtx.cholesky().expect("full rank").solve(&xty).as_slice().to_vec()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Central differences of `f` at `x` with step `h`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            xp[j] = x[j] + h;
            let up = f(&xp);
            xp[j] = x[j] - h;
            let down = f(&xp);
            xp[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b||_inf / ||b||_inf`, or the absolute gap when `b` vanishes.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gap = max_abs_diff(a, b);
    if scale > 0.0 {
        gap / scale
    } else {
        gap
    }
}

/// Frozen blocks a kind needs, taken from a full random set.
pub fn frozen_for(kind: LossKind, full: &Frozen) -> Frozen {
    match kind {
        LossKind::Ps1 | LossKind::BasePs1 | LossKind::BasePs2 | LossKind::BaseOr2 => Frozen::none(),
        LossKind::Ps2 => Frozen::gamma(full.gamma.as_ref().unwrap()),
        LossKind::Or2 => Frozen::gamma_delta(full.gamma.as_ref().unwrap(), full.delta.as_ref().unwrap()),
        LossKind::Or1 => full.clone(),
        LossKind::BaseOr1 => Frozen::alpha(full.alpha.as_ref().unwrap()),
    }
}
