//! Continuation-passing probabilistic computations and the expected-loss
//! combinators built on them.
//!
//! A [`Prob<T, S>`] is a function from a continuation `T -> S` to an `S`.
//! Primitive samplers decide how to call their continuation (once with a
//! reparameterized draw, once per outcome when enumerating, ...) and combine
//! the results so that the derivative of the output is an unbiased
//! estimate of the derivative of the expectation.

use std::rc::Rc;

use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::scalar::{Dual, Scalar};
use crate::strategies;
use crate::trace::Name;
use crate::value::Value;

/// Estimator settings shared by every primitive in a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub reinforce_baseline: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { reinforce_baseline: 0.0 }
    }
}

impl EstimatorConfig {
    pub fn reinforce_baseline_set(mut self, b: f64) -> Self {
        self.reinforce_baseline = b;
        self
    }
}

/// Random stream plus estimator configuration, threaded through every
/// continuation.
#[derive(Clone, Debug)]
pub struct Ctx {
    pub rng: Stream,
    pub cfg: EstimatorConfig,
}

impl Ctx {
    pub fn new(seed: u64) -> Self {
        Ctx { rng: Stream::new(seed), cfg: EstimatorConfig::default() }
    }

    pub fn from_stream(rng: Stream) -> Self {
        Ctx { rng, cfg: EstimatorConfig::default() }
    }

    pub fn with_config(mut self, cfg: EstimatorConfig) -> Self {
        self.cfg = cfg;
        self
    }

    pub fn split(&self, index: u64) -> Ctx {
        Ctx { rng: self.rng.split(index), cfg: self.cfg }
    }

    pub fn fork(&mut self) -> Ctx {
        Ctx { rng: self.rng.fork(), cfg: self.cfg }
    }

    pub fn baseline(&self) -> f64 {
        self.cfg.reinforce_baseline
    }
}

pub type Cont<'a, T, S> = dyn Fn(T, &mut Ctx) -> Result<S> + 'a;

type ProbFn<T, S> = dyn Fn(&Cont<'_, T, S>, &mut Ctx) -> Result<S>;

pub struct Prob<T, S>(Rc<ProbFn<T, S>>);

impl<T, S> Clone for Prob<T, S> {
    fn clone(&self) -> Self {
        Prob(self.0.clone())
    }
}

impl<T: 'static, S: Scalar> Prob<T, S> {
    pub fn new(f: impl Fn(&Cont<'_, T, S>, &mut Ctx) -> Result<S> + 'static) -> Self {
        Prob(Rc::new(f))
    }

    pub fn run(&self, k: &Cont<'_, T, S>, ctx: &mut Ctx) -> Result<S> {
        (self.0)(k, ctx)
    }

    pub fn bind<U: 'static>(self, f: impl Fn(T) -> Result<Prob<U, S>> + 'static) -> Prob<U, S> {
        prob_bind(self, f)
    }

    pub fn map<U: 'static>(self, f: impl Fn(T) -> Result<U> + 'static) -> Prob<U, S> {
        Prob::new(move |k, ctx| self.run(&|t, ctx: &mut Ctx| k(f(t)?, ctx), ctx))
    }
}

pub fn prob_return<T: Clone + 'static, S: Scalar>(x: T) -> Prob<T, S> {
    Prob::new(move |k, ctx| k(x.clone(), ctx))
}

pub fn prob_bind<A: 'static, B: 'static, S: Scalar>(
    m: Prob<A, S>,
    f: impl Fn(A) -> Result<Prob<B, S>> + 'static,
) -> Prob<B, S> {
    Prob::new(move |k, ctx| m.run(&|a, ctx: &mut Ctx| f(a)?.run(k, ctx), ctx))
}

/// Multiply the rest of the computation by a non-negative weight.
pub fn score<T: 'static, S: Scalar>(w: S, rest: Prob<T, S>) -> Prob<T, S> {
    Prob::new(move |k, ctx| {
        if !(w.value() >= 0.0) {
            return Err(Error::domain(format!("score weight {} is negative", w.value())));
        }
        Ok(w * rest.run(k, ctx)?)
    })
}

/// Draw from a primitive using its gradient strategy.
pub fn sample<S: Scalar>(dist: Dist<S>, name: impl Into<Name>) -> Prob<Value<S>, S> {
    let name: Name = name.into();
    Prob::new(move |k, ctx| strategies::estimate(&dist, &name, k, ctx))
}

/// Run computations left to right and collect their results.
pub fn prob_sequence<T: Clone + 'static, S: Scalar>(ms: Vec<Prob<T, S>>) -> Prob<Vec<T>, S> {
    ms.into_iter().fold(prob_return(Vec::new()), |acc, m| {
        acc.bind(move |xs: Vec<T>| {
            Ok(m.clone().map(move |x| {
                let mut ys = xs.clone();
                ys.push(x);
                Ok(ys)
            }))
        })
    })
}

/// A sampler of unbiased estimates of a loss and its derivative.
pub struct LossEst<S>(Rc<dyn Fn(&mut Ctx) -> Result<S>>);

impl<S> Clone for LossEst<S> {
    fn clone(&self) -> Self {
        LossEst(self.0.clone())
    }
}

impl<S: Scalar> LossEst<S> {
    pub fn new(f: impl Fn(&mut Ctx) -> Result<S> + 'static) -> Self {
        LossEst(Rc::new(f))
    }

    pub fn sample(&self, ctx: &mut Ctx) -> Result<S> {
        (self.0)(ctx)
    }
}

pub fn expect<S: Scalar>(m: Prob<S, S>) -> LossEst<S> {
    LossEst::new(move |ctx| m.run(&|x, _| Ok(x), ctx))
}

pub fn exact<S: Scalar>(r: S) -> LossEst<S> {
    LossEst::new(move |_| Ok(r))
}

pub fn loss_add<S: Scalar>(a: LossEst<S>, b: LossEst<S>) -> LossEst<S> {
    LossEst::new(move |ctx| Ok(a.sample(ctx)? + b.sample(ctx)?))
}

pub fn loss_scale<S: Scalar>(c: f64, a: LossEst<S>) -> LossEst<S> {
    LossEst::new(move |ctx| Ok(a.sample(ctx)? * c))
}

/// Product of two independent estimates; each factor gets its own stream.
pub fn loss_mul<S: Scalar>(a: LossEst<S>, b: LossEst<S>) -> LossEst<S> {
    LossEst::new(move |ctx| {
        let mut ca = ctx.fork();
        let mut cb = ctx.fork();
        Ok(a.sample(&mut ca)? * b.sample(&mut cb)?)
    })
}

/// Unbiased estimate of `exp(E[a])`: draw `N ~ Poisson(rate)` and return
/// `e^rate * rate^-N * prod_i a_i` over `N` independent estimates of `a`.
pub fn loss_exp<S: Scalar>(a: LossEst<S>, rate: f64) -> Result<LossEst<S>> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::domain(format!("exp estimator rate must be positive, got {rate}")));
    }
    Ok(LossEst::new(move |ctx| {
        let n = crate::dist::poisson_quantile(rate, ctx.rng.uniform());
        let mut acc = S::constant((rate - n as f64 * rate.ln()).exp());
        for _ in 0..n {
            let mut sub = ctx.fork();
            acc = acc * a.sample(&mut sub)?;
        }
        Ok(acc)
    }))
}

/// A differentiable objective over a flat vector of named parameters.
pub trait Loss {
    fn param_names(&self) -> Vec<String>;
    fn estimator<S: Scalar>(&self, params: &[S]) -> Result<LossEst<S>>;
}

/// Named parameters with a tangent direction for forward mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub names: Vec<String>,
    pub theta: Vec<f64>,
    pub tangent: Vec<f64>,
}

impl ParamVector {
    pub fn new(names: Vec<String>, theta: Vec<f64>, tangent: Vec<f64>) -> Result<Self> {
        if names.len() != theta.len() || theta.len() != tangent.len() {
            return Err(Error::domain(format!(
                "parameter vector lengths differ: {} names, {} values, {} tangents",
                names.len(),
                theta.len(),
                tangent.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::DuplicateName(dup.clone()));
        }
        Ok(ParamVector { names, theta, tangent })
    }

    pub fn duals(&self) -> Vec<Dual> {
        self.theta.iter().zip(&self.tangent).map(|(&v, &d)| Dual::new(v, d)).collect()
    }
}

/// One forward-mode sample: the loss value and its derivative along `v`.
pub fn adev_grad<L: Loss>(loss: &L, theta: &[f64], v: &[f64], ctx: &mut Ctx) -> Result<Dual> {
    let pv = ParamVector::new(loss.param_names(), theta.to_vec(), v.to_vec())?;
    let out = loss.estimator(&pv.duals())?.sample(ctx)?;
    if !out.is_finite() {
        return Err(Error::domain(format!("non-finite estimate {out:?}")));
    }
    Ok(out)
}

/// Full gradient from one sample, one forward pass per coordinate; every
/// pass replays the same random stream.
pub fn forward_grad<L: Loss>(loss: &L, theta: &[f64], ctx: &Ctx) -> Result<(f64, Vec<f64>)> {
    let n = theta.len();
    let mut grad = Vec::with_capacity(n);
    let mut value = f64::NAN;
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let out = adev_grad(loss, theta, &e, &mut ctx.clone())?;
        value = out.v;
        grad.push(out.d);
    }
    if n == 0 {
        value = adev_grad(loss, theta, &[], &mut ctx.clone())?.v;
    }
    Ok((value, grad))
}
