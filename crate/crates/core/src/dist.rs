//! Primitive distributions paired with a gradient strategy.

use std::fmt;

use rand_distr::{Distribution, StandardNormal};
use statrs::function::beta::beta_reg as statrs_beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::trace::Name;
use crate::value::{smoothness_check, GroundType, NonSmoothOp, Real, Smoothness, Value};
use crate::weight::LogWeight;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Normal,
    Flip,
    Categorical,
    UniformStar,
    Poisson,
    Beta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Reparam,
    Reinforce,
    Enum,
    Mvd,
    #[serde(rename = "none")]
    NoneStar,
}

impl Strategy {
    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Reparam => "reparam",
            Strategy::Reinforce => "reinforce",
            Strategy::Enum => "enum",
            Strategy::Mvd => "mvd",
            Strategy::NoneStar => "none",
        }
    }

    pub fn from_tag(s: &str) -> Option<Strategy> {
        match s {
            "reparam" => Some(Strategy::Reparam),
            "reinforce" => Some(Strategy::Reinforce),
            "enum" => Some(Strategy::Enum),
            "mvd" => Some(Strategy::Mvd),
            "none" => Some(Strategy::NoneStar),
            _ => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl Family {
    pub fn valid_strategies(self) -> &'static [Strategy] {
        use Strategy::*;
        match self {
            Family::Normal => &[Reparam, Reinforce],
            Family::Flip => &[Enum, Reinforce, Mvd],
            Family::Categorical => &[Enum, Reinforce],
            Family::UniformStar => &[NoneStar],
            Family::Poisson => &[Reinforce],
            Family::Beta => &[Reinforce],
        }
    }

    pub fn finite_support(self) -> bool {
        matches!(self, Family::Flip | Family::Categorical)
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Params<S> {
    Normal {
        mu: S,
        sigma: S,
    },
    Flip {
        p: S,
    },
    Categorical {
        probs: Vec<S>,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Poisson {
        rate: S,
    },
    /// `ln_b` is `ln B(alpha, beta)`, computed once at construction.
    Beta {
        alpha: S,
        beta: S,
        ln_b: S,
    },
}

#[derive(Clone, Debug)]
pub struct Dist<S> {
    pub(crate) params: Params<S>,
    pub(crate) strategy: Strategy,
}

impl<S: Scalar> Dist<S> {
    fn build(params: Params<S>, strategy: Strategy) -> Result<Self> {
        let d = Dist { params, strategy };
        if !d.family().valid_strategies().contains(&strategy) {
            return Err(Error::InvalidStrategy { family: format!("{:?}", d.family()), strategy: strategy.to_string() });
        }
        Ok(d)
    }

    pub fn normal(mu: S, sigma: S, strategy: Strategy) -> Result<Self> {
        if !(sigma.value() > 0.0) || !mu.value().is_finite() || !sigma.value().is_finite() {
            return Err(Error::domain(format!(
                "normal needs finite mu and sigma > 0, got ({}, {})",
                mu.value(),
                sigma.value()
            )));
        }
        Self::build(Params::Normal { mu, sigma }, strategy)
    }

    pub fn flip(p: S, strategy: Strategy) -> Result<Self> {
        let pv = p.value();
        if !(0.0..=1.0).contains(&pv) {
            return Err(Error::InvalidDist(format!("flip probability {pv} outside [0, 1]")));
        }
        Self::build(Params::Flip { p }, strategy)
    }

    pub fn categorical(probs: Vec<S>, strategy: Strategy) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDist("categorical with no outcomes".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(p.value() >= 0.0)) {
            return Err(Error::InvalidDist(format!("negative categorical probability {}", p.value())));
        }
        let total = probs.iter().fold(S::zero(), |a, &b| a + b);
        if (total.value() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDist(format!("categorical probabilities sum to {}", total.value())));
        }
        let probs = if total.value() == 1.0 { probs } else { probs.iter().map(|&p| p / total).collect() };
        Self::build(Params::Categorical { probs }, strategy)
    }

    /// Uniform on `[lo, hi]` with a non-smooth output. Both bounds must be
    /// Star values, since the density is discontinuous in them.
    pub fn uniform_star(lo: Real<S>, hi: Real<S>) -> Result<Self> {
        let lo = lo.get()?;
        let hi = hi.get()?;
        if !(lo < hi) {
            return Err(Error::InvalidDist(format!("uniform needs lo < hi, got [{lo}, {hi}]")));
        }
        Self::build(Params::Uniform { lo, hi }, Strategy::NoneStar)
    }

    pub fn poisson(rate: S, strategy: Strategy) -> Result<Self> {
        if !(rate.value() > 0.0) {
            return Err(Error::domain(format!("poisson rate must be positive, got {}", rate.value())));
        }
        Self::build(Params::Poisson { rate }, strategy)
    }

    pub fn beta(alpha: S, beta: S, strategy: Strategy) -> Result<Self> {
        if !(alpha.value() > 0.0 && beta.value() > 0.0) {
            return Err(Error::domain(format!(
                "beta needs positive shapes, got ({}, {})",
                alpha.value(),
                beta.value()
            )));
        }
        let ln_b = alpha.ln_gamma() + beta.ln_gamma() - (alpha + beta).ln_gamma();
        Self::build(Params::Beta { alpha, beta, ln_b }, strategy)
    }

    pub fn family(&self) -> Family {
        match self.params {
            Params::Normal { .. } => Family::Normal,
            Params::Flip { .. } => Family::Flip,
            Params::Categorical { .. } => Family::Categorical,
            Params::Uniform { .. } => Family::UniformStar,
            Params::Poisson { .. } => Family::Poisson,
            Params::Beta { .. } => Family::Beta,
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn output_type(&self) -> GroundType {
        match self.params {
            Params::Flip { .. } => GroundType::Bool,
            Params::Categorical { .. } | Params::Poisson { .. } => GroundType::Int,
            _ => GroundType::Real,
        }
    }

    /// Tag carried by real outputs.
    pub fn output_smoothness(&self) -> Smoothness {
        match (self.family(), self.strategy) {
            (Family::Normal, Strategy::Reparam) => Smoothness::Smooth,
            _ => Smoothness::Star,
        }
    }

    /// All outcomes with their probabilities, for finite-support families.
    pub fn support(&self) -> Option<Vec<(Value<S>, S)>> {
        match &self.params {
            Params::Flip { p } => Some(vec![(Value::Bool(true), *p), (Value::Bool(false), S::one() - *p)]),
            Params::Categorical { probs } => {
                Some(probs.iter().enumerate().map(|(i, &p)| (Value::Int(i as i64), p)).collect())
            }
            _ => None,
        }
    }

    /// Log density of `x` with respect to the family's base measure.
    pub fn log_density(&self, x: &Value<S>) -> Result<LogWeight<S>> {
        let mismatch = || {
            Error::TypeMismatch(format!(
                "{:?} expects {:?}, got {:?}",
                self.family(),
                self.output_type(),
                x.ground_type()
            ))
        };
        match (&self.params, x) {
            (Params::Normal { mu, sigma }, Value::Real(r)) => {
                let z = (r.val - *mu) / *sigma;
                Ok(LogWeight::Log(-(z * z) * 0.5 - sigma.ln() - HALF_LN_2PI))
            }
            (Params::Flip { p }, Value::Bool(b)) => {
                let q = if *b { *p } else { S::one() - *p };
                Ok(if q.value() > 0.0 { LogWeight::Log(q.ln()) } else { LogWeight::Zero })
            }
            (Params::Categorical { probs }, Value::Int(i)) => Ok(match probs.get(*i as usize) {
                Some(p) if *i >= 0 && p.value() > 0.0 => LogWeight::Log(p.ln()),
                _ => LogWeight::Zero,
            }),
            (Params::Uniform { lo, hi }, Value::Real(_)) => {
                smoothness_check(x, NonSmoothOp::SupportTest)?;
                let v = x.as_real()?.value();
                Ok(if *lo <= v && v <= *hi { LogWeight::Log(S::constant(-(hi - lo).ln())) } else { LogWeight::Zero })
            }
            (Params::Poisson { rate }, Value::Int(n)) => Ok(if *n < 0 {
                LogWeight::Zero
            } else {
                let n = *n as f64;
                LogWeight::Log(rate.ln() * n - *rate - ln_gamma(n + 1.0))
            }),
            (Params::Beta { alpha, beta, ln_b }, Value::Real(r)) => {
                let v = r.value();
                if !(v > 0.0 && v < 1.0) {
                    return Ok(LogWeight::Zero);
                }
                let x = r.val;
                Ok(LogWeight::Log((*alpha - 1.0) * x.ln() + (*beta - 1.0) * (S::one() - x).ln() - *ln_b))
            }
            _ => Err(mismatch()),
        }
    }

    /// Draw a value directly, without any gradient estimator around it.
    /// Reparameterized normals keep their pathwise derivative.
    pub fn simulate(&self, rng: &mut Stream, name: &Name) -> Value<S> {
        match &self.params {
            Params::Normal { mu, sigma } => {
                let eps: f64 = StandardNormal.sample(rng);
                let x = *mu + *sigma * eps;
                let r = if self.strategy == Strategy::Reparam { Real::smooth(x) } else { Real::star(x.value()) };
                Value::Real(r.with_origin(*name))
            }
            Params::Flip { p } => Value::Bool(rng.uniform() < p.value()),
            Params::Categorical { probs } => Value::Int(sample_categorical(probs, rng.uniform()) as i64),
            Params::Uniform { lo, hi } => Value::Real(Real::star(lo + (hi - lo) * rng.uniform()).with_origin(*name)),
            Params::Poisson { rate } => Value::Int(poisson_quantile(rate.value(), rng.uniform())),
            Params::Beta { alpha, beta, ln_b } => {
                let x = beta_quantile(alpha.value(), beta.value(), ln_b.value(), rng.uniform());
                Value::Real(Real::star(x).with_origin(*name))
            }
        }
    }
}

/// Inverse-CDF categorical draw from a uniform `u`.
pub(crate) fn sample_categorical<S: Scalar>(probs: &[S], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.value();
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| p.value() > 0.0).unwrap_or(0)
}

/// Poisson quantile by summing the pmf; monotone in `u`, so draws from a
/// shared uniform stay coupled as the rate moves.
pub(crate) fn poisson_quantile(rate: f64, u: f64) -> i64 {
    let mut n = 0i64;
    let mut log_p = -rate;
    let mut cdf = log_p.exp();
    let cap = (rate + 60.0 * rate.sqrt() + 100.0) as i64;
    while u > cdf && n < cap {
        n += 1;
        log_p += rate.ln() - (n as f64).ln();
        cdf += log_p.exp();
    }
    n
}

/// Regularized incomplete beta function. statrs rounds arguments below
/// about 1e-16 to zero, so the far lower tail uses the leading terms of
/// the power series instead.
pub(crate) fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x > 0.0 && x < 1e-10 {
        let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
        (a * x.ln() - a.ln() - ln_beta).exp() * (1.0 + a * (1.0 - b) * x / (a + 1.0))
    } else {
        statrs_beta_reg(a, b, x)
    }
}

/// Closed-form approximation to the beta quantile, good to a few digits.
fn beta_quantile_guess(a: f64, b: f64, u: f64) -> f64 {
    if a >= 1.0 && b >= 1.0 {
        let pp = if u < 0.5 { u } else { 1.0 - u };
        let t = (-2.0 * pp.ln()).sqrt();
        let mut z = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t;
        if u < 0.5 {
            z = -z;
        }
        let al = (z * z - 3.0) / 6.0;
        let h = 2.0 / (1.0 / (2.0 * a - 1.0) + 1.0 / (2.0 * b - 1.0));
        let w = z * (al + h).sqrt() / h
            - (1.0 / (2.0 * b - 1.0) - 1.0 / (2.0 * a - 1.0)) * (al + 5.0 / 6.0 - 2.0 / (3.0 * h));
        a / (a + b * (2.0 * w).exp())
    } else {
        let t = (a * (a / (a + b)).ln()).exp() / a;
        let v = (b * (b / (a + b)).ln()).exp() / b;
        let w = t + v;
        if u < t / w {
            (a * w * u).powf(1.0 / a)
        } else {
            1.0 - (b * w * (1.0 - u)).powf(1.0 / b)
        }
    }
}

/// Beta quantile by safeguarded Halley iteration on the regularized
/// incomplete beta function.
pub(crate) fn beta_quantile(a: f64, b: f64, lnb: f64, u: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x = beta_quantile_guess(a, b, u);
    if !(x > 0.0 && x < 1.0) {
        x = a / (a + b);
    }
    for _ in 0..100 {
        let f = beta_reg(a, b, x) - u;
        if f.abs() < 1e-14 {
            break;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let pdf = ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - lnb).exp();
        let t = f / pdf;
        // pdf'/pdf gives the second-order correction.
        let curv = (a - 1.0) / x - (b - 1.0) / (1.0 - x);
        let step = x - t / (1.0 - 0.5 * (t * curv).min(1.0));
        let next = if pdf > 0.0 && step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        let moved = (next - x).abs();
        x = next;
        if moved <= 4.0 * f64::EPSILON * x || hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    x.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}
