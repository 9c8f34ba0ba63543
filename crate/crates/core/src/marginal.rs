//! Marginalization and normalization of programs by importance sampling.
//!
//! Both nodes behave like ordinary programs whose density can only be
//! estimated: `simulate` returns a trace with a weight whose reciprocal is
//! unbiased for the reciprocal density, and the density estimator is
//! unbiased for the density itself.

use std::rc::Rc;

use crate::adev::{prob_return, Cont, Ctx, Prob};
use crate::compile::{density, density_estimator, density_run, sim_cps, sim_run, simulate, DensityResult, SimResult};
use crate::dist::sample_categorical;
use crate::error::{Error, Result};
use crate::gen::{gp_nested, gp_return, GenProgram};
use crate::scalar::Scalar;
use crate::strategies::categorical_enum;
use crate::trace::{Name, Trace};
use crate::value::Value;
use crate::weight::LogWeight;

/// Importance sampling with `n` particles from `proposal`.
pub struct ImportanceAlg<S> {
    pub proposal: GenProgram<S>,
    pub n: usize,
}

impl<S: Scalar> Clone for ImportanceAlg<S> {
    fn clone(&self) -> Self {
        ImportanceAlg { proposal: self.proposal.clone(), n: self.n }
    }
}

pub fn importance<S: Scalar>(proposal: GenProgram<S>, n: usize) -> Result<ImportanceAlg<S>> {
    if n == 0 {
        return Err(Error::domain("importance sampling needs at least one particle"));
    }
    Ok(ImportanceAlg { proposal, n })
}

pub type AlgFn<S> = Rc<dyn Fn(&Trace<S>) -> Result<ImportanceAlg<S>>>;

/// Keep only `kept` names of `inner`; the other choices are integrated
/// out with an importance sampler over them that may depend on the kept
/// values.
pub struct MarginalNode<S> {
    pub kept: Vec<Name>,
    pub inner: GenProgram<S>,
    pub alg: AlgFn<S>,
}

/// The normalized posterior of `inner`, approximated by sampling
/// importance resampling.
pub struct NormalizeNode<S> {
    pub inner: GenProgram<S>,
    pub alg: ImportanceAlg<S>,
}

pub enum Node<S> {
    Marginal(MarginalNode<S>),
    Normalize(NormalizeNode<S>),
}

/// Program whose trace holds the `kept` names of `inner`. Returns the kept
/// values as a tuple in `kept` order.
pub fn marginal<S: Scalar>(
    kept: Vec<String>,
    inner: GenProgram<S>,
    alg: impl Fn(&Trace<S>) -> Result<ImportanceAlg<S>> + 'static,
) -> GenProgram<S> {
    gp_nested(
        Node::Marginal(MarginalNode { kept: kept.iter().map(Name::from).collect(), inner, alg: Rc::new(alg) }),
        |v| Ok(gp_return(v)),
    )
}

/// Program whose traces follow the normalized `inner`. Returns the return
/// value of `inner` at the chosen particle.
pub fn normalize<S: Scalar>(inner: GenProgram<S>, alg: ImportanceAlg<S>) -> GenProgram<S> {
    gp_nested(Node::Normalize(NormalizeNode { inner, alg }), |v| Ok(gp_return(v)))
}

fn kept_tuple<S: Scalar>(kept: &Trace<S>, names: &[Name]) -> Value<S> {
    Value::Tuple(names.iter().filter_map(|n| kept.get(n).cloned()).collect())
}

fn must_consume<S: Scalar>(r: &DensityResult<S>, what: &str) -> Result<()> {
    if let Some(name) = r.remainder.names().next() {
        return Err(Error::Structural(format!("`{name}` is not consumed by the {what}")));
    }
    Ok(())
}

#[derive(Clone)]
struct Particle<S: Scalar> {
    trace: Trace<S>,
    target: LogWeight<S>,
    weight: LogWeight<S>,
    retval: Value<S>,
}

/// One importance particle: draw `a` from `proposal` and weigh
/// `target(base ++ a) / proposal(a)`.
fn particles<S: Scalar>(
    target: &GenProgram<S>,
    base: &Trace<S>,
    proposal: &GenProgram<S>,
    n: usize,
) -> Prob<Vec<Particle<S>>, S> {
    let (target, base, proposal) = (target.clone(), base.clone(), proposal.clone());
    Prob::new(move |k, ctx| particles_go(&target, &base, &proposal, n, Vec::with_capacity(n), k, ctx))
}

/// Draw particles one after another until there are `n`, then continue.
fn particles_go<S: Scalar>(
    target: &GenProgram<S>,
    base: &Trace<S>,
    proposal: &GenProgram<S>,
    n: usize,
    acc: Vec<Particle<S>>,
    k: &Cont<'_, Vec<Particle<S>>, S>,
    ctx: &mut Ctx,
) -> Result<S> {
    if acc.len() >= n {
        return k(acc, ctx);
    }
    sim_run(
        proposal.clone(),
        &|q: SimResult<S>, ctx: &mut Ctx| {
            let full = base.concat(&q.trace)?;
            density_run(
                target.clone(),
                full,
                &|r: DensityResult<S>, ctx: &mut Ctx| {
                    must_consume(&r, "target")?;
                    let mut acc = acc.clone();
                    acc.push(Particle {
                        trace: q.trace.clone(),
                        target: r.log_weight,
                        weight: r.log_weight.div(q.log_weight)?,
                        retval: r.retval,
                    });
                    particles_go(target, base, proposal, n, acc, k, ctx)
                },
                ctx,
            )
        },
        ctx,
    )
}

fn mean_weight<S: Scalar>(ps: &[Particle<S>], extra: Option<LogWeight<S>>) -> LogWeight<S> {
    let mut ws: Vec<LogWeight<S>> = extra.into_iter().collect();
    ws.extend(ps.iter().map(|p| p.weight));
    LogWeight::mean(&ws)
}

pub(crate) fn node_density<S: Scalar>(node: &Rc<Node<S>>, u: Trace<S>) -> Prob<DensityResult<S>, S> {
    match &**node {
        Node::Marginal(m) => marginal_density(m, u),
        Node::Normalize(nz) => normalize_density(nz, u),
    }
}

pub(crate) fn node_sim<S: Scalar>(node: &Rc<Node<S>>) -> Prob<SimResult<S>, S> {
    let node = node.clone();
    Prob::new(move |k, ctx| match &*node {
        Node::Marginal(m) => marginal_sim(m).run(k, ctx),
        Node::Normalize(nz) => normalize_sim(nz).run(k, ctx),
    })
}

fn marginal_density<S: Scalar>(m: &MarginalNode<S>, u: Trace<S>) -> Prob<DensityResult<S>, S> {
    let (kept, rest) = u.subtrace_remainder(&m.kept);
    if kept.len() < m.kept.len() {
        return prob_return(DensityResult {
            retval: Value::Unit,
            log_weight: LogWeight::Zero,
            remainder: rest,
            consumed: Vec::new(),
        });
    }
    let alg = match (m.alg)(&kept) {
        Ok(a) => a,
        Err(e) => return Prob::new(move |_, _| Err(e.clone())),
    };
    let names = m.kept.clone();
    let retval = kept_tuple(&kept, &names);
    particles(&m.inner, &kept, &alg.proposal, alg.n).map(move |ps| {
        Ok(DensityResult {
            retval: retval.clone(),
            log_weight: mean_weight(&ps, None),
            remainder: rest.clone(),
            consumed: names.clone(),
        })
    })
}

fn split_kept<S: Scalar>(names: &[Name], full: &Trace<S>) -> Result<(Trace<S>, Trace<S>)> {
    let (kept, aux) = full.subtrace_remainder(names);
    if let Some(missing) = names.iter().find(|n| !kept.contains(n)) {
        return Err(Error::Structural(format!("kept name `{missing}` was not sampled")));
    }
    Ok((kept, aux))
}

fn marginal_sim<S: Scalar>(m: &MarginalNode<S>) -> Prob<SimResult<S>, S> {
    let names = m.kept.clone();
    let inner = m.inner.clone();
    let alg_fn = m.alg.clone();
    sim_cps(m.inner.clone()).bind(move |full: SimResult<S>| {
        let (kept, aux) = split_kept(&names, &full.trace)?;
        let alg = alg_fn(&kept)?;
        let joint = full.log_weight;
        let retval = kept_tuple(&kept, &names);
        let inner = inner.clone();
        let proposal = alg.proposal.clone();
        let n = alg.n;
        Ok(density_estimator(alg.proposal.clone(), aux).bind(move |q: DensityResult<S>| {
            must_consume(&q, "proposal")?;
            let retained = joint.div(q.log_weight)?;
            let kept = kept.clone();
            let retval = retval.clone();
            Ok(particles(&inner, &kept, &proposal, n - 1).map(move |ps| {
                Ok(SimResult {
                    trace: kept.clone(),
                    log_weight: mean_weight(&ps, Some(retained)),
                    retval: retval.clone(),
                })
            }))
        }))
    })
}

fn normalize_density<S: Scalar>(nz: &NormalizeNode<S>, u: Trace<S>) -> Prob<DensityResult<S>, S> {
    let inner = nz.inner.clone();
    let proposal = nz.alg.proposal.clone();
    let n = nz.alg.n;
    density_estimator(nz.inner.clone(), u.clone()).bind(move |r: DensityResult<S>| {
        if r.log_weight.is_zero() {
            return Ok(prob_return(r));
        }
        let (z, _) = u.subtrace_remainder(&r.consumed);
        let inner = inner.clone();
        let proposal2 = proposal.clone();
        Ok(density_estimator(proposal.clone(), z).bind(move |q: DensityResult<S>| {
            must_consume(&q, "proposal")?;
            let retained = r.log_weight.div(q.log_weight)?;
            let r = r.clone();
            Ok(particles(&inner, &Trace::new(), &proposal2, n - 1).map(move |ps| {
                let mean = mean_weight(&ps, Some(retained));
                Ok(DensityResult { log_weight: r.log_weight.div(mean)?, ..r.clone() })
            }))
        }))
    })
}

fn normalize_sim<S: Scalar>(nz: &NormalizeNode<S>) -> Prob<SimResult<S>, S> {
    let ps = particles(&nz.inner, &Trace::new(), &nz.alg.proposal, nz.alg.n);
    Prob::new(move |k, ctx| {
        ps.run(
            &|ps: Vec<Particle<S>>, ctx: &mut Ctx| {
                let mean = mean_weight(&ps, None);
                let log_mean = mean.log().map_err(|_| Error::Resampling)?;
                let log_total = log_mean + (ps.len() as f64).ln();
                let probs: Vec<S> = ps
                    .iter()
                    .map(|p| match p.weight {
                        LogWeight::Zero => S::zero(),
                        LogWeight::Log(l) => (l - log_total).exp(),
                    })
                    .collect();
                categorical_enum(
                    &probs,
                    &|j, ctx| {
                        let p = &ps[j];
                        let out = SimResult {
                            trace: p.trace.clone(),
                            log_weight: p.target.div(mean)?,
                            retval: p.retval.clone(),
                        };
                        k(out, ctx)
                    },
                    ctx,
                )
            },
            ctx,
        )
    })
}

pub(crate) fn node_simulate<S: Scalar>(node: &Node<S>, ctx: &mut Ctx) -> Result<SimResult<S>> {
    match node {
        Node::Marginal(m) => {
            let full = simulate(&m.inner, ctx)?;
            let (kept, aux) = split_kept(&m.kept, &full.trace)?;
            let alg = (m.alg)(&kept)?;
            let q = density(&alg.proposal, &aux)?;
            must_consume(&q, "proposal")?;
            let mut ws = vec![full.log_weight.div(q.log_weight)?];
            for _ in 1..alg.n {
                ws.push(plain_particle(&m.inner, &kept, &alg.proposal, ctx)?.weight);
            }
            Ok(SimResult { retval: kept_tuple(&kept, &m.kept), trace: kept, log_weight: LogWeight::mean(&ws) })
        }
        Node::Normalize(nz) => {
            let ps = (0..nz.alg.n)
                .map(|_| plain_particle(&nz.inner, &Trace::new(), &nz.alg.proposal, ctx))
                .collect::<Result<Vec<_>>>()?;
            let mean = mean_weight(&ps, None);
            let log_mean = mean.log().map_err(|_| Error::Resampling)?.value();
            let probs: Vec<f64> =
                ps.iter().map(|p| (p.weight.log_value() - log_mean).exp() / ps.len() as f64).collect();
            let j = sample_categorical(&probs, ctx.rng.uniform());
            let p = &ps[j];
            Ok(SimResult { trace: p.trace.clone(), log_weight: p.target.div(mean)?, retval: p.retval.clone() })
        }
    }
}

fn plain_particle<S: Scalar>(
    target: &GenProgram<S>,
    base: &Trace<S>,
    proposal: &GenProgram<S>,
    ctx: &mut Ctx,
) -> Result<Particle<S>> {
    let q = simulate(proposal, ctx)?;
    let r = density(target, &base.concat(&q.trace)?)?;
    must_consume(&r, "target")?;
    Ok(Particle { weight: r.log_weight.div(q.log_weight)?, target: r.log_weight, trace: q.trace, retval: r.retval })
}
