//! Built-in models and variational families.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::dist::{Dist, Strategy};
use crate::error::{Error, Result};
use crate::gen::{gp_observe, gp_return, gp_sample, GenProgram};
use crate::objectives::{Family, MarginalFamily, NormalizeFamily};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::value::{Real, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Program {
    /// `a ~ flip(pa)`, `b ~ flip(a ? pb1 : pb0)`.
    TwoFlip,
    /// [`Program::TwoFlip`] plus a noisy observation of whether they agree.
    TwoFlipObs,
    /// One biased flip and an observation whose likelihood depends on it.
    FlipObs,
    /// `c ~ flip(qc)`.
    FlipGuide,
    /// Mean-field guide over `a` and `b`.
    TwoFlipGuide,
    /// Guide with an auxiliary flip `v` that correlates `a` and `b`.
    TwoFlipJoint,
    /// Fair-flip proposal for the auxiliary `v`.
    TwoFlipAux,
    /// `z ~ N(mu0, 1)`, `1.0 ~ N(z, 1)`; `mu0` is a parameter only when
    /// the prior mean is learned.
    Conj {
        learn_prior: bool,
    },
    ConjGuide,
    /// `x, y ~ N(0, 1)`, observed `5.0 ~ N(x^2 + y^2, 0.1 + (x^2 + y^2) / 100)`.
    Cone,
    ConeNaive,
    /// `v ~ U[0, 2pi)`, `(x, y)` normal around radius `r` at angle `v`.
    ConeJoint,
    ConeAux,
    /// Beta(10, 10) coin with ten observed flips.
    Coin,
    CoinGuide,
    /// Bayesian linear regression on a fixed synthetic data set.
    LinReg,
    LinRegGuide,
}

pub const COIN_FLIPS: [bool; 10] = [true, true, false, true, true, true, false, true, true, false];
pub const CONE_OBSERVATION: f64 = 5.0;
pub const CONJ_OBSERVATION: f64 = 1.0;

/// A zoo program with optional per-choice strategy overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct ZooFamily {
    pub program: Program,
    pub overrides: BTreeMap<String, Strategy>,
}

impl ZooFamily {
    pub fn new(program: Program) -> Self {
        ZooFamily { program, overrides: BTreeMap::new() }
    }

    pub fn with_strategy(mut self, name: &str, s: Strategy) -> Self {
        self.overrides.insert(name.to_string(), s);
        self
    }

    fn strat(&self, name: &str, default: Strategy) -> Strategy {
        self.overrides.get(name).copied().unwrap_or(default)
    }

    pub fn default_params(&self) -> Vec<f64> {
        match self.program {
            Program::TwoFlip | Program::TwoFlipObs => vec![0.3, 0.8, 0.4],
            Program::FlipGuide => vec![0.5],
            Program::TwoFlipGuide => vec![0.5, 0.5],
            Program::TwoFlipJoint => vec![0.5, 0.7, 0.3, 0.5],
            Program::Conj { learn_prior: true } => vec![0.0],
            Program::ConjGuide => vec![0.0, 1.0],
            Program::ConeNaive => vec![0.0, 0.0, 0.0, 0.0],
            Program::ConeJoint => vec![1.0, 0.0],
            Program::CoinGuide => vec![10f64.ln(), 10f64.ln()],
            Program::LinRegGuide => vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
            _ => vec![],
        }
    }
}

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn real<S: Scalar>(v: &Value<S>) -> Result<Real<S>> {
    v.as_real().cloned()
}

fn unit<S: Scalar>() -> GenProgram<S> {
    gp_return(Value::Unit)
}

impl Family for ZooFamily {
    fn param_names(&self) -> Vec<String> {
        match self.program {
            Program::TwoFlip | Program::TwoFlipObs => names(&["pa", "pb1", "pb0"]),
            Program::FlipGuide => names(&["qc"]),
            Program::TwoFlipGuide => names(&["qa", "qb"]),
            Program::TwoFlipJoint => names(&["qv", "qa1", "qa0", "qb"]),
            Program::Conj { learn_prior: true } => names(&["mu0"]),
            Program::ConjGuide => names(&["m", "s"]),
            Program::ConeNaive => names(&["mx", "log_sx", "my", "log_sy"]),
            Program::ConeJoint => names(&["r", "log_s"]),
            Program::CoinGuide => names(&["log_alpha", "log_beta"]),
            Program::LinRegGuide => {
                names(&["a_mu", "a_log_s", "ba_mu", "ba_log_s", "br_mu", "br_log_s", "bar_mu", "bar_log_s", "sigma_mu"])
            }
            _ => vec![],
        }
    }

    fn build<S: Scalar>(&self, p: &[S]) -> Result<GenProgram<S>> {
        if p.len() != self.param_names().len() {
            return Err(Error::domain(format!(
                "{:?} takes {} parameters, got {}",
                self.program,
                self.param_names().len(),
                p.len()
            )));
        }
        let p = p.to_vec();
        match self.program {
            Program::TwoFlip | Program::TwoFlipObs => {
                let observe = self.program == Program::TwoFlipObs;
                let sa = self.strat("a", Strategy::Enum);
                let sb = self.strat("b", Strategy::Enum);
                Ok(gp_sample(Dist::flip(p[0], sa)?, "a", move |a| {
                    let a = a.as_bool()?;
                    let pb = if a { p[1] } else { p[2] };
                    Ok(gp_sample(Dist::flip(pb, sb)?, "b", move |b| {
                        let b = b.as_bool()?;
                        let ret = Value::Tuple(vec![Value::Bool(a), Value::Bool(b)]);
                        if !observe {
                            return Ok(gp_return(ret));
                        }
                        let agree = if a == b { 0.9 } else { 0.2 };
                        gp_observe(Dist::flip(S::constant(agree), Strategy::Enum)?, Value::Bool(true), gp_return(ret))
                    }))
                }))
            }
            Program::FlipObs => {
                let sc = self.strat("c", Strategy::Enum);
                Ok(gp_sample(Dist::flip(S::constant(0.3), sc)?, "c", |c| {
                    let q = if c.as_bool()? { 0.9 } else { 0.1 };
                    gp_observe(Dist::flip(S::constant(q), Strategy::Enum)?, Value::Bool(true), unit())
                }))
            }
            Program::FlipGuide => {
                let sc = self.strat("c", Strategy::Enum);
                Ok(gp_sample(Dist::flip(p[0], sc)?, "c", |_| Ok(unit())))
            }
            Program::TwoFlipGuide => {
                let (sa, sb) = (self.strat("a", Strategy::Enum), self.strat("b", Strategy::Enum));
                Ok(gp_sample(Dist::flip(p[0], sa)?, "a", move |_| {
                    Ok(gp_sample(Dist::flip(p[1], sb)?, "b", |_| Ok(unit())))
                }))
            }
            Program::TwoFlipJoint => {
                let sv = self.strat("v", Strategy::Enum);
                let sa = self.strat("a", Strategy::Enum);
                let sb = self.strat("b", Strategy::Enum);
                Ok(gp_sample(Dist::flip(p[0], sv)?, "v", move |v| {
                    let pa = if v.as_bool()? { p[1] } else { p[2] };
                    let pb = p[3];
                    Ok(gp_sample(Dist::flip(pa, sa)?, "a", move |_| {
                        Ok(gp_sample(Dist::flip(pb, sb)?, "b", |_| Ok(unit())))
                    }))
                }))
            }
            Program::TwoFlipAux => {
                let sv = self.strat("v", Strategy::Enum);
                Ok(gp_sample(Dist::flip(S::constant(0.5), sv)?, "v", |_| Ok(unit())))
            }
            Program::Conj { learn_prior } => {
                let mu0 = if learn_prior { p[0] } else { S::zero() };
                let sz = self.strat("z", Strategy::Reparam);
                Ok(gp_sample(Dist::normal(mu0, S::one(), sz)?, "z", |z| {
                    let z = real(&z)?.val;
                    gp_observe(Dist::normal(z, S::one(), Strategy::Reparam)?, Value::star(CONJ_OBSERVATION), unit())
                }))
            }
            Program::ConjGuide => {
                let sz = self.strat("z", Strategy::Reparam);
                Ok(gp_sample(Dist::normal(p[0], p[1], sz)?, "z", |_| Ok(unit())))
            }
            Program::Cone => {
                let sx = self.strat("x", Strategy::Reparam);
                let sy = self.strat("y", Strategy::Reparam);
                Ok(gp_sample(Dist::normal(S::zero(), S::one(), sx)?, "x", move |x| {
                    let x = real(&x)?.val;
                    Ok(gp_sample(Dist::normal(S::zero(), S::one(), sy)?, "y", move |y| {
                        let y = real(&y)?.val;
                        let rs = x * x + y * y;
                        let noise = rs / 100.0 + 0.1;
                        gp_observe(Dist::normal(rs, noise, Strategy::Reparam)?, Value::star(CONE_OBSERVATION), unit())
                    }))
                }))
            }
            Program::ConeNaive => {
                let sx = self.strat("x", Strategy::Reparam);
                let sy = self.strat("y", Strategy::Reparam);
                Ok(gp_sample(Dist::normal(p[0], p[1].exp(), sx)?, "x", move |_| {
                    Ok(gp_sample(Dist::normal(p[2], p[3].exp(), sy)?, "y", |_| Ok(unit())))
                }))
            }
            Program::ConeJoint => {
                let sx = self.strat("x", Strategy::Reparam);
                let sy = self.strat("y", Strategy::Reparam);
                let angle = Dist::uniform_star(Real::star(0.0), Real::star(2.0 * PI))?;
                Ok(gp_sample(angle, "v", move |v| {
                    let v = real(&v)?;
                    let (r, s) = (p[0], p[1].exp());
                    let (cx, cy) = (r * v.val.cos(), r * v.val.sin());
                    Ok(gp_sample(Dist::normal(cx, s, sx)?, "x", move |_| {
                        Ok(gp_sample(Dist::normal(cy, s, sy)?, "y", |_| Ok(unit())))
                    }))
                }))
            }
            Program::ConeAux => {
                let angle = Dist::uniform_star(Real::star(0.0), Real::star(2.0 * PI))?;
                Ok(gp_sample(angle, "v", |_| Ok(unit())))
            }
            Program::Coin => {
                let sp = self.strat("p", Strategy::Reinforce);
                Ok(gp_sample(Dist::beta(S::constant(10.0), S::constant(10.0), sp)?, "p", |f| {
                    let f = real(&f)?.val;
                    let mut prog = unit();
                    for &heads in COIN_FLIPS.iter().rev() {
                        prog = gp_observe(Dist::flip(f, Strategy::Enum)?, Value::Bool(heads), prog)?;
                    }
                    Ok(prog)
                }))
            }
            Program::CoinGuide => {
                let sp = self.strat("p", Strategy::Reinforce);
                Ok(gp_sample(Dist::beta(p[0].exp(), p[1].exp(), sp)?, "p", |_| Ok(unit())))
            }
            Program::LinReg => self.linreg(),
            Program::LinRegGuide => {
                let st = |n: &str| self.strat(n, Strategy::Reparam);
                let (s_a, s_ba, s_br, s_bar) = (st("a"), st("ba"), st("br"), st("bar"));
                let s_sigma = self.strat("sigma", Strategy::Reinforce);
                let coef = |i: usize, s: Strategy| Dist::normal(p[2 * i], p[2 * i + 1].exp(), s);
                let (d_a, d_ba, d_br, d_bar) = (coef(0, s_a)?, coef(1, s_ba)?, coef(2, s_br)?, coef(3, s_bar)?);
                let d_sigma = Dist::normal(p[8], S::constant(0.05), s_sigma)?;
                Ok(gp_sample(d_a, "a", move |_| {
                    let (d_br, d_bar, d_sigma) = (d_br.clone(), d_bar.clone(), d_sigma.clone());
                    Ok(gp_sample(d_ba.clone(), "ba", move |_| {
                        let (d_bar, d_sigma) = (d_bar.clone(), d_sigma.clone());
                        Ok(gp_sample(d_br.clone(), "br", move |_| {
                            let d_sigma = d_sigma.clone();
                            Ok(gp_sample(d_bar.clone(), "bar", move |_| {
                                Ok(gp_sample(d_sigma.clone(), "sigma", |_| Ok(unit())))
                            }))
                        }))
                    }))
                }))
            }
        }
    }
}

/// Synthetic regression data: a binary covariate `c`, a real covariate
/// `r`, and responses from fixed coefficients with Gaussian noise.
#[derive(Clone, Debug, PartialEq)]
pub struct LinRegData {
    pub c: Vec<f64>,
    pub r: Vec<f64>,
    pub y: Vec<f64>,
}

pub const LINREG_TRUTH: [f64; 5] = [1.5, -0.8, 0.5, 0.3, 0.5];

pub fn linreg_data() -> Arc<LinRegData> {
    let mut rng = Stream::new(2024);
    let n = 20;
    let [a, ba, br, bar, sigma] = LINREG_TRUTH;
    let mut d = LinRegData { c: vec![], r: vec![], y: vec![] };
    for i in 0..n {
        let c = (i % 2) as f64;
        let r = -2.0 + 4.0 * rng.uniform();
        let eps: f64 = StandardNormal.sample(&mut rng);
        d.c.push(c);
        d.r.push(r);
        d.y.push(a + ba * c + br * r + bar * c * r + sigma * eps);
    }
    Arc::new(d)
}

impl ZooFamily {
    fn linreg<S: Scalar>(&self) -> Result<GenProgram<S>> {
        let data = linreg_data();
        let st = |n: &str| self.strat(n, Strategy::Reparam);
        let (s_a, s_ba, s_br, s_bar) = (st("a"), st("ba"), st("br"), st("bar"));
        let std_normal = move |s: Strategy| Dist::normal(S::zero(), S::one(), s);
        Ok(gp_sample(Dist::normal(S::zero(), S::constant(10.0), s_a)?, "a", move |a| {
            let a = real(&a)?.val;
            let data = data.clone();
            Ok(gp_sample(std_normal(s_ba)?, "ba", move |ba| {
                let ba = real(&ba)?.val;
                let data = data.clone();
                Ok(gp_sample(std_normal(s_br)?, "br", move |br| {
                    let br = real(&br)?.val;
                    let data = data.clone();
                    Ok(gp_sample(std_normal(s_bar)?, "bar", move |bar| {
                        let bar = real(&bar)?.val;
                        let data = data.clone();
                        let prior = Dist::uniform_star(Real::star(0.0), Real::star(10.0))?;
                        Ok(gp_sample(prior, "sigma", move |sigma| {
                            let sigma = real(&sigma)?.val;
                            let mut prog = unit();
                            for i in (0..data.y.len()).rev() {
                                let (c, r) = (data.c[i], data.r[i]);
                                let mean = a + ba * c + br * r + bar * (c * r);
                                prog = gp_observe(
                                    Dist::normal(mean, sigma, Strategy::Reparam)?,
                                    Value::star(data.y[i]),
                                    prog,
                                )?;
                            }
                            Ok(prog)
                        }))
                    }))
                }))
            }))
        }))
    }
}

/// Any guide the command line can name.
#[derive(Clone, Debug)]
pub enum AnyFamily {
    Plain(ZooFamily),
    Marginal(MarginalFamily<ZooFamily, ZooFamily>),
    Normalize(NormalizeFamily<ZooFamily, ZooFamily>),
}

impl Family for AnyFamily {
    fn param_names(&self) -> Vec<String> {
        match self {
            AnyFamily::Plain(f) => f.param_names(),
            AnyFamily::Marginal(f) => f.param_names(),
            AnyFamily::Normalize(f) => f.param_names(),
        }
    }

    fn build<S: Scalar>(&self, params: &[S]) -> Result<GenProgram<S>> {
        match self {
            AnyFamily::Plain(f) => f.build(params),
            AnyFamily::Marginal(f) => f.build(params),
            AnyFamily::Normalize(f) => f.build(params),
        }
    }
}

impl AnyFamily {
    pub fn default_params(&self) -> Vec<f64> {
        match self {
            AnyFamily::Plain(f) => f.default_params(),
            AnyFamily::Marginal(f) => [f.joint.default_params(), f.proposal.default_params()].concat(),
            AnyFamily::Normalize(f) => [f.target.default_params(), f.proposal.default_params()].concat(),
        }
    }

    pub fn overrides_mut(&mut self) -> Vec<&mut BTreeMap<String, Strategy>> {
        match self {
            AnyFamily::Plain(f) => vec![&mut f.overrides],
            AnyFamily::Marginal(f) => vec![&mut f.joint.overrides, &mut f.proposal.overrides],
            AnyFamily::Normalize(f) => vec![&mut f.proposal.overrides],
        }
    }
}

pub const MODEL_IDS: [&str; 8] = ["twoflip", "twoflip_obs", "flipobs", "conj", "conj_learn", "cone", "coin", "linreg"];
pub const GUIDE_IDS: [&str; 9] = [
    "flipobs_mf",
    "twoflip_mf",
    "twoflip_marg",
    "conj_normal",
    "cone_naive",
    "cone_marg",
    "cone_sir",
    "coin_beta",
    "linreg_mf",
];

pub fn model(id: &str) -> Option<ZooFamily> {
    let p = match id {
        "twoflip" => Program::TwoFlip,
        "twoflip_obs" => Program::TwoFlipObs,
        "flipobs" => Program::FlipObs,
        "conj" => Program::Conj { learn_prior: false },
        "conj_learn" => Program::Conj { learn_prior: true },
        "cone" => Program::Cone,
        "coin" => Program::Coin,
        "linreg" => Program::LinReg,
        _ => return None,
    };
    Some(ZooFamily::new(p))
}

/// Guide by id; `n` is the particle count for marginal and SIR guides.
pub fn guide(id: &str, n: usize) -> Option<AnyFamily> {
    let plain = |p| Some(AnyFamily::Plain(ZooFamily::new(p)));
    match id {
        "flipobs_mf" => plain(Program::FlipGuide),
        "twoflip_mf" => plain(Program::TwoFlipGuide),
        "twoflip_marg" => Some(AnyFamily::Marginal(MarginalFamily {
            joint: ZooFamily::new(Program::TwoFlipJoint),
            proposal: ZooFamily::new(Program::TwoFlipAux),
            kept: names(&["a", "b"]),
            n,
        })),
        "conj_normal" => plain(Program::ConjGuide),
        "cone_naive" => plain(Program::ConeNaive),
        "cone_marg" => Some(AnyFamily::Marginal(MarginalFamily {
            joint: ZooFamily::new(Program::ConeJoint),
            proposal: ZooFamily::new(Program::ConeAux),
            kept: names(&["x", "y"]),
            n,
        })),
        "cone_sir" => Some(AnyFamily::Normalize(NormalizeFamily {
            target: ZooFamily::new(Program::Cone),
            proposal: ZooFamily::new(Program::ConeNaive),
            n,
        })),
        "coin_beta" => plain(Program::CoinGuide),
        "linreg_mf" => plain(Program::LinRegGuide),
        _ => None,
    }
}

pub fn default_guide(model_id: &str) -> Option<&'static str> {
    Some(match model_id {
        "flipobs" => "flipobs_mf",
        "twoflip" | "twoflip_obs" => "twoflip_mf",
        "conj" | "conj_learn" => "conj_normal",
        "cone" => "cone_naive",
        "coin" => "coin_beta",
        "linreg" => "linreg_mf",
        _ => return None,
    })
}

/// Log evidence of the conjugate model: `log N(1; 0, 2)`.
pub fn conj_log_evidence() -> f64 {
    -0.5 * (4.0 * PI).ln() - CONJ_OBSERVATION * CONJ_OBSERVATION / 4.0
}

/// Exact posterior of the conjugate model as `(mean, sd)`.
pub fn conj_posterior() -> (f64, f64) {
    (CONJ_OBSERVATION / 2.0, 0.5f64.sqrt())
}

pub fn coin_counts() -> (f64, f64) {
    let h = COIN_FLIPS.iter().filter(|&&b| b).count() as f64;
    (h, COIN_FLIPS.len() as f64 - h)
}

/// Log evidence of the coin model: `log B(10 + h, 10 + t) - log B(10, 10)`.
pub fn coin_log_evidence() -> f64 {
    let (h, t) = coin_counts();
    ln_beta(10.0 + h, 10.0 + t) - ln_beta(10.0, 10.0)
}
