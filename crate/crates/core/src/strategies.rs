//! Gradient strategies for each primitive.
//!
//! Every estimator here is written once, generically over the scalar type.
//! Score-function terms are added as [`Scalar::phantom`] terms, which have
//! value zero and the right derivative in both forward and reverse mode.

use rand_distr::{Distribution, StandardNormal};

use crate::adev::{Cont, Ctx};
use crate::dist::{beta_quantile, poisson_quantile, sample_categorical, Dist, Params, Strategy};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trace::Name;
use crate::value::{Real, Value};

/// Sample from `dist` with its strategy and pass the draw to `k`.
pub fn estimate<S: Scalar>(dist: &Dist<S>, name: &Name, k: &Cont<'_, Value<S>, S>, ctx: &mut Ctx) -> Result<S> {
    match (&dist.params, dist.strategy) {
        (Params::Normal { mu, sigma }, Strategy::Reparam) => normal_reparam(*mu, *sigma, name, k, ctx),
        (Params::Normal { mu, sigma }, Strategy::Reinforce) => normal_reinforce(*mu, *sigma, name, k, ctx),
        (Params::Flip { p }, Strategy::Enum) => flip_enum(*p, k, ctx),
        (Params::Flip { p }, Strategy::Reinforce) => flip_reinforce(*p, k, ctx),
        (Params::Flip { p }, Strategy::Mvd) => flip_mvd(*p, k, ctx),
        (Params::Categorical { probs }, Strategy::Enum) => {
            categorical_enum(probs, &|i, c| k(Value::Int(i as i64), c), ctx)
        }
        (Params::Categorical { probs }, Strategy::Reinforce) => categorical_reinforce(probs, k, ctx),
        (Params::Poisson { rate }, Strategy::Reinforce) => poisson_reinforce(*rate, k, ctx),
        (Params::Uniform { lo, hi }, Strategy::NoneStar) => uniform_star(*lo, *hi, name, k, ctx),
        (Params::Beta { alpha, beta, ln_b }, Strategy::Reinforce) => beta_reinforce(*alpha, *beta, *ln_b, name, k, ctx),
        (_, s) => Err(Error::InvalidStrategy { family: format!("{:?}", dist.family()), strategy: s.to_string() }),
    }
}

fn reinforce<S: Scalar>(v: S, log_q: S, ctx: &Ctx) -> S {
    v + S::phantom(log_q, v.value() - ctx.baseline())
}

fn normal_log_q<S: Scalar>(x: f64, mu: S, sigma: S) -> S {
    let z = (S::constant(x) - mu) / sigma;
    -(z * z) * 0.5 - sigma.ln()
}

/// `x = mu + sigma * eps` with the derivative carried along the path.
pub fn normal_reparam<S: Scalar>(mu: S, sigma: S, name: &Name, k: &Cont<'_, Value<S>, S>, ctx: &mut Ctx) -> Result<S> {
    let eps: f64 = StandardNormal.sample(&mut ctx.rng);
    let x = mu + sigma * eps;
    k(Value::Real(Real::smooth(x).with_origin(*name)), ctx)
}

pub fn normal_reinforce<S: Scalar>(
    mu: S,
    sigma: S,
    name: &Name,
    k: &Cont<'_, Value<S>, S>,
    ctx: &mut Ctx,
) -> Result<S> {
    let eps: f64 = StandardNormal.sample(&mut ctx.rng);
    let x = mu.value() + sigma.value() * eps;
    let v = k(Value::Real(Real::star(x).with_origin(*name)), ctx)?;
    Ok(reinforce(v, normal_log_q(x, mu, sigma), ctx))
}

/// Exact sum over both outcomes; each branch continues on its own stream.
pub fn flip_enum<S: Scalar>(p: S, k: &Cont<'_, Value<S>, S>, ctx: &mut Ctx) -> Result<S> {
    let probs = [p, S::one() - p];
    categorical_enum(&probs, &|i, c| k(Value::Bool(i == 0), c), ctx)
}

pub fn flip_reinforce<S: Scalar>(p: S, k: &Cont<'_, Value<S>, S>, ctx: &mut Ctx) -> Result<S> {
    let pv = p.value();
    if (pv == 0.0 || pv == 1.0) && !p.is_constant() {
        return Err(Error::domain(format!("score of flip is undefined at p = {pv}")));
    }
    let b = ctx.rng.uniform() < pv;
    let v = k(Value::Bool(b), ctx)?;
    if pv == 0.0 || pv == 1.0 {
        return Ok(v);
    }
    let log_q = if b { p.ln() } else { (S::one() - p).ln() };
    Ok(reinforce(v, log_q, ctx))
}

/// Measure-valued derivative: both outcomes are evaluated on a common
/// stream and their difference weights the derivative of `p`.
pub fn flip_mvd<S: Scalar>(p: S, k: &Cont<'_, Value<S>, S>, ctx: &mut Ctx) -> Result<S> {
    let b = ctx.rng.uniform() < p.value();
    let shared = ctx.fork();
    let vt = k(Value::Bool(true), &mut shared.clone())?;
    let vf = k(Value::Bool(false), &mut shared.clone())?;
    let v = if b { vt } else { vf };
    Ok(v + S::phantom(p, vt.value() - vf.value()))
}

/// `sum_i p_i * k(i)`. Outcome `i` runs on substream `i`; outcomes with a
/// constant zero probability are skipped.
pub fn categorical_enum<S: Scalar>(probs: &[S], k: &Cont<'_, usize, S>, ctx: &mut Ctx) -> Result<S> {
    let mut acc: Option<S> = None;
    for (i, &p) in probs.iter().enumerate() {
        if p.value() == 0.0 && p.is_constant() {
            continue;
        }
        let v = k(i, &mut ctx.split(i as u64))?;
        acc = Some(match acc {
            None => p * v,
            Some(a) => a + p * v,
        });
    }
    Ok(acc.unwrap_or_else(S::zero))
}

pub fn categorical_reinforce<S: Scalar>(probs: &[S], k: &Cont<'_, Value<S>, S>, ctx: &mut Ctx) -> Result<S> {
    let i = sample_categorical(probs, ctx.rng.uniform());
    let v = k(Value::Int(i as i64), ctx)?;
    Ok(reinforce(v, probs[i].ln(), ctx))
}

pub fn poisson_reinforce<S: Scalar>(rate: S, k: &Cont<'_, Value<S>, S>, ctx: &mut Ctx) -> Result<S> {
    let n = poisson_quantile(rate.value(), ctx.rng.uniform());
    let v = k(Value::Int(n), ctx)?;
    Ok(reinforce(v, rate.ln() * n as f64 - rate, ctx))
}

/// Non-smooth uniform; no derivative flows through the draw.
pub fn uniform_star<S: Scalar>(lo: f64, hi: f64, name: &Name, k: &Cont<'_, Value<S>, S>, ctx: &mut Ctx) -> Result<S> {
    let x = lo + (hi - lo) * ctx.rng.uniform();
    k(Value::Real(Real::star(x).with_origin(*name)), ctx)
}

pub fn beta_reinforce<S: Scalar>(
    alpha: S,
    beta: S,
    ln_b: S,
    name: &Name,
    k: &Cont<'_, Value<S>, S>,
    ctx: &mut Ctx,
) -> Result<S> {
    let x = beta_quantile(alpha.value(), beta.value(), ln_b.value(), ctx.rng.uniform());
    let v = k(Value::Real(Real::star(x).with_origin(*name)), ctx)?;
    let log_q = (alpha - 1.0) * x.ln() + (beta - 1.0) * (1.0 - x).ln() - ln_b;
    Ok(reinforce(v, log_q, ctx))
}
