//! Generative programs: a small embedded language of named random choices,
//! observations and host-language continuations.

use std::rc::Rc;

use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::marginal::Node;
use crate::scalar::Scalar;
use crate::trace::{Name, Trace};
use crate::value::Value;
use crate::weight::LogWeight;

pub type Cont<S> = Rc<dyn Fn(Value<S>) -> Result<GenProgram<S>>>;

pub enum GenProgram<S> {
    Return(Value<S>),
    Sample {
        dist: Dist<S>,
        name: Name,
        cont: Cont<S>,
    },
    Observe {
        dist: Dist<S>,
        value: Value<S>,
        rest: Rc<GenProgram<S>>,
    },
    /// A marginal or normalize node whose choices are spliced into the trace.
    Nested {
        node: Rc<Node<S>>,
        cont: Cont<S>,
    },
}

impl<S: Scalar> Clone for GenProgram<S> {
    fn clone(&self) -> Self {
        match self {
            GenProgram::Return(v) => GenProgram::Return(v.clone()),
            GenProgram::Sample { dist, name, cont } => {
                GenProgram::Sample { dist: dist.clone(), name: *name, cont: cont.clone() }
            }
            GenProgram::Observe { dist, value, rest } => {
                GenProgram::Observe { dist: dist.clone(), value: value.clone(), rest: rest.clone() }
            }
            GenProgram::Nested { node, cont } => GenProgram::Nested { node: node.clone(), cont: cont.clone() },
        }
    }
}

pub fn gp_return<S: Scalar>(v: Value<S>) -> GenProgram<S> {
    GenProgram::Return(v)
}

pub fn gp_sample<S: Scalar>(
    dist: Dist<S>,
    name: impl Into<Name>,
    cont: impl Fn(Value<S>) -> Result<GenProgram<S>> + 'static,
) -> GenProgram<S> {
    GenProgram::Sample { dist, name: name.into(), cont: Rc::new(cont) }
}

pub fn gp_observe<S: Scalar>(dist: Dist<S>, value: Value<S>, rest: GenProgram<S>) -> Result<GenProgram<S>> {
    if value.ground_type() != dist.output_type() {
        return Err(Error::TypeMismatch(format!(
            "observed {:?} for a {:?} distribution",
            value.ground_type(),
            dist.family()
        )));
    }
    Ok(GenProgram::Observe { dist, value, rest: Rc::new(rest) })
}

pub fn gp_nested<S: Scalar>(
    node: Node<S>,
    cont: impl Fn(Value<S>) -> Result<GenProgram<S>> + 'static,
) -> GenProgram<S> {
    GenProgram::Nested { node: Rc::new(node), cont: Rc::new(cont) }
}

impl<S: Scalar> GenProgram<S> {
    /// Monadic bind on the return value.
    pub fn and_then(self, f: impl Fn(Value<S>) -> Result<GenProgram<S>> + 'static) -> Result<GenProgram<S>> {
        self.bind_rc(Rc::new(f))
    }

    fn bind_rc(self, f: Cont<S>) -> Result<GenProgram<S>> {
        Ok(match self {
            GenProgram::Return(v) => f(v)?,
            GenProgram::Sample { dist, name, cont } => {
                GenProgram::Sample { dist, name, cont: Rc::new(move |x| cont(x)?.bind_rc(f.clone())) }
            }
            GenProgram::Observe { dist, value, rest } => {
                let rest = (*rest).clone().bind_rc(f)?;
                GenProgram::Observe { dist, value, rest: Rc::new(rest) }
            }
            GenProgram::Nested { node, cont } => {
                GenProgram::Nested { node, cont: Rc::new(move |x| cont(x)?.bind_rc(f.clone())) }
            }
        })
    }
}

/// One complete execution of a finite-support program.
#[derive(Clone, Debug)]
pub struct Outcome<S> {
    pub trace: Trace<S>,
    pub density: f64,
    pub log_weight: LogWeight<f64>,
    pub retval: Value<S>,
}

#[derive(Clone, Debug)]
pub struct Enumeration<S> {
    pub outcomes: Vec<Outcome<S>>,
    /// Set when some path reused a name; such paths carry zero mass.
    pub duplicate_name: bool,
}

impl<S: Scalar> Enumeration<S> {
    pub fn total_mass(&self) -> f64 {
        self.outcomes.iter().map(|o| o.density).sum()
    }
}

/// Exhaustively list every execution of a program whose random choices all
/// have finite support.
pub fn enumerate_discrete<S: Scalar>(p: &GenProgram<S>) -> Result<Enumeration<S>> {
    let mut out = Enumeration { outcomes: Vec::new(), duplicate_name: false };
    walk(p.clone(), Trace::new(), LogWeight::one(), &mut out)?;
    Ok(out)
}

fn walk<S: Scalar>(p: GenProgram<S>, trace: Trace<S>, lw: LogWeight<f64>, out: &mut Enumeration<S>) -> Result<()> {
    match p {
        GenProgram::Return(v) => {
            out.outcomes.push(Outcome { trace, density: lw.density(), log_weight: lw, retval: v });
            Ok(())
        }
        GenProgram::Sample { dist, name, cont } => {
            let support =
                dist.support().ok_or_else(|| Error::InfiniteSupport(format!("{name} ~ {:?}", dist.family())))?;
            if trace.contains(&name) {
                out.duplicate_name = true;
                return Ok(());
            }
            for (x, _) in support {
                let step = to_f64(dist.log_density(&x)?);
                let mut t = trace.clone();
                t.insert(name, x.clone())?;
                walk(cont(x)?, t, lw.mul(step), out)?;
            }
            Ok(())
        }
        GenProgram::Observe { dist, value, rest } => {
            let step = to_f64(dist.log_density(&value)?);
            walk((*rest).clone(), trace, lw.mul(step), out)
        }
        GenProgram::Nested { .. } => Err(Error::StochasticNode),
    }
}

fn to_f64<S: Scalar>(w: LogWeight<S>) -> LogWeight<f64> {
    match w {
        LogWeight::Zero => LogWeight::Zero,
        LogWeight::Log(l) => LogWeight::Log(l.value()),
    }
}
