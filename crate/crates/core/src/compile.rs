//! Interpreters for generative programs: density evaluation, plain
//! simulation, and their continuation-passing counterparts used inside
//! gradient estimators.

use crate::adev::{Cont, Ctx, Prob};
use crate::error::{Error, Result};
use crate::gen::GenProgram;
use crate::scalar::Scalar;
use crate::strategies;
use crate::trace::{Name, Trace};
use crate::value::Value;
use crate::weight::LogWeight;

#[derive(Clone, Debug)]
pub struct DensityResult<S> {
    pub retval: Value<S>,
    pub log_weight: LogWeight<S>,
    /// Entries of the input trace that the program did not consume.
    pub remainder: Trace<S>,
    pub consumed: Vec<Name>,
}

impl<S: Scalar> DensityResult<S> {
    pub fn density(&self) -> S {
        self.log_weight.density()
    }
}

#[derive(Clone, Debug)]
pub struct SimResult<S> {
    pub trace: Trace<S>,
    pub log_weight: LogWeight<S>,
    pub retval: Value<S>,
}

enum Step<S> {
    Done(DensityResult<S>),
    Nested { node: std::rc::Rc<crate::marginal::Node<S>>, cont: crate::gen::Cont<S>, state: DensityResult<S> },
}

/// Run the deterministic part of a density evaluation until the program
/// returns or reaches a stochastic node.
fn density_steps<S: Scalar>(mut p: GenProgram<S>, mut st: DensityResult<S>) -> Result<Step<S>> {
    loop {
        if st.log_weight.is_zero() {
            // Out of support: the density is zero whatever follows.
            return Ok(Step::Done(st));
        }
        match p {
            GenProgram::Return(v) => {
                st.retval = v;
                if !st.remainder.is_empty() {
                    st.log_weight = LogWeight::Zero;
                }
                return Ok(Step::Done(st));
            }
            GenProgram::Sample { dist, name, cont } => match st.remainder.take(&name, &dist.output_type()) {
                None => {
                    st.log_weight = LogWeight::Zero;
                    return Ok(Step::Done(st));
                }
                Some(mut x) => {
                    if let Value::Real(r) = &mut x {
                        r.tag = r.tag.join(dist.output_smoothness());
                        if r.origin.is_none() {
                            r.origin = Some(name);
                        }
                    }
                    st.log_weight = st.log_weight.mul(dist.log_density(&x)?);
                    st.consumed.push(name);
                    p = cont(x)?;
                }
            },
            GenProgram::Observe { dist, value, rest } => {
                st.log_weight = st.log_weight.mul(dist.log_density(&value)?);
                p = unwrap_rest(rest);
            }
            GenProgram::Nested { node, cont } => return Ok(Step::Nested { node, cont, state: st }),
        }
    }
}

/// Continuation of an observe node, cloned only when shared.
fn unwrap_rest<S: Scalar>(rest: std::rc::Rc<GenProgram<S>>) -> GenProgram<S> {
    std::rc::Rc::try_unwrap(rest).unwrap_or_else(|rc| (*rc).clone())
}

fn start<S: Scalar>(u: Trace<S>) -> DensityResult<S> {
    DensityResult { retval: Value::Unit, log_weight: LogWeight::one(), remainder: u, consumed: Vec::new() }
}

/// Exact density of a trace. Names the program does not consume make the
/// density zero.
pub fn density<S: Scalar>(p: &GenProgram<S>, u: &Trace<S>) -> Result<DensityResult<S>> {
    match density_steps(p.clone(), start(u.clone()))? {
        Step::Done(r) => Ok(r),
        Step::Nested { .. } => Err(Error::StochasticNode),
    }
}

/// Density as an estimator: a point mass for ordinary programs, and an
/// unbiased estimate for programs containing marginal or normalize nodes.
pub fn density_estimator<S: Scalar>(p: GenProgram<S>, u: Trace<S>) -> Prob<DensityResult<S>, S> {
    Prob::new(move |k, ctx| density_go(p.clone(), start(u.clone()), k, ctx))
}

/// Run a density evaluation straight into `k`, without building a [`Prob`].
pub(crate) fn density_run<S: Scalar>(
    p: GenProgram<S>,
    u: Trace<S>,
    k: &Cont<'_, DensityResult<S>, S>,
    ctx: &mut Ctx,
) -> Result<S> {
    density_go(p, start(u), k, ctx)
}

fn density_go<S: Scalar>(
    p: GenProgram<S>,
    st: DensityResult<S>,
    k: &Cont<'_, DensityResult<S>, S>,
    ctx: &mut Ctx,
) -> Result<S> {
    match density_steps(p, st)? {
        Step::Done(r) => k(r, ctx),
        Step::Nested { node, cont, state } => {
            let est = crate::marginal::node_density(&node, state.remainder.clone());
            est.run(
                &|sub: DensityResult<S>, ctx: &mut Ctx| {
                    let mut consumed = state.consumed.clone();
                    consumed.extend(sub.consumed.iter().cloned());
                    let next = DensityResult {
                        retval: Value::Unit,
                        log_weight: state.log_weight.mul(sub.log_weight),
                        remainder: sub.remainder.clone(),
                        consumed,
                    };
                    if next.log_weight.is_zero() {
                        return k(next, ctx);
                    }
                    density_go(cont(sub.retval)?, next, k, ctx)
                },
                ctx,
            )
        }
    }
}

/// Draw a trace by plain ancestral sampling. Reusing a name is an error.
pub fn simulate<S: Scalar>(p: &GenProgram<S>, ctx: &mut Ctx) -> Result<SimResult<S>> {
    let mut p = p.clone();
    let mut trace = Trace::new();
    let mut lw = LogWeight::one();
    loop {
        match p {
            GenProgram::Return(v) => return Ok(SimResult { trace, log_weight: lw, retval: v }),
            GenProgram::Sample { dist, name, cont } => {
                if trace.contains(&name) {
                    return Err(Error::DuplicateName(name.to_string()));
                }
                let x = dist.simulate(&mut ctx.rng, &name);
                lw = lw.mul(dist.log_density(&x)?);
                trace.insert(name, x.clone())?;
                p = cont(x)?;
            }
            GenProgram::Observe { dist, value, rest } => {
                lw = lw.mul(dist.log_density(&value)?);
                p = unwrap_rest(rest);
            }
            GenProgram::Nested { node, cont } => {
                let sub = crate::marginal::node_simulate(&node, ctx)?;
                trace = trace.concat(&sub.trace).map_err(dup_from_disjoint)?;
                lw = lw.mul(sub.log_weight);
                p = cont(sub.retval)?;
            }
        }
    }
}

fn dup_from_disjoint(e: Error) -> Error {
    match e {
        Error::Disjointness(n) => Error::DuplicateName(n),
        other => other,
    }
}

/// Simulation as a probabilistic computation: every choice is drawn with
/// its gradient strategy, so derivatives of whatever the continuation
/// computes from the trace are estimated without bias.
pub fn sim_cps<S: Scalar>(p: GenProgram<S>) -> Prob<SimResult<S>, S> {
    Prob::new(move |k, ctx| sim_run(p.clone(), k, ctx))
}

/// Run a simulation straight into `k`, without building a [`Prob`].
pub(crate) fn sim_run<S: Scalar>(p: GenProgram<S>, k: &Cont<'_, SimResult<S>, S>, ctx: &mut Ctx) -> Result<S> {
    sim_go(p, Trace::with_capacity(8), LogWeight::one(), k, ctx)
}

fn sim_go<S: Scalar>(
    p: GenProgram<S>,
    trace: Trace<S>,
    lw: LogWeight<S>,
    k: &Cont<'_, SimResult<S>, S>,
    ctx: &mut Ctx,
) -> Result<S> {
    match p {
        GenProgram::Return(v) => k(SimResult { trace, log_weight: lw, retval: v }, ctx),
        GenProgram::Sample { dist, name, cont } => {
            if trace.contains(&name) {
                return Err(Error::DuplicateName(name.to_string()));
            }
            strategies::estimate(
                &dist,
                &name,
                &|x: Value<S>, ctx: &mut Ctx| {
                    let step = dist.log_density(&x)?;
                    let mut t = trace.clone();
                    t.insert(name, x.clone())?;
                    sim_go(cont(x)?, t, lw.mul(step), k, ctx)
                },
                ctx,
            )
        }
        GenProgram::Observe { dist, value, rest } => {
            let step = dist.log_density(&value)?;
            sim_go(unwrap_rest(rest), trace, lw.mul(step), k, ctx)
        }
        GenProgram::Nested { node, cont } => crate::marginal::node_sim(&node).run(
            &|sub: SimResult<S>, ctx: &mut Ctx| {
                let t = trace.concat(&sub.trace).map_err(dup_from_disjoint)?;
                sim_go(cont(sub.retval)?, t, lw.mul(sub.log_weight), k, ctx)
            },
            ctx,
        ),
    }
}
