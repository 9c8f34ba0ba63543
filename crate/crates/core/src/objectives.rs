//! Variational objectives assembled from simulation and density
//! estimation.

use serde::{Deserialize, Serialize};

use crate::adev::{expect, prob_sequence, Ctx, Loss, LossEst, Prob};
use crate::compile::{density_estimator, density_run, sim_cps, sim_run, DensityResult, SimResult};
use crate::error::{Error, Result};
use crate::gen::GenProgram;
use crate::marginal::{importance, marginal, normalize};
use crate::scalar::Scalar;
use crate::trace::Trace;
use crate::weight::LogWeight;

/// A parameterized family of programs.
pub trait Family {
    fn param_names(&self) -> Vec<String>;
    fn build<S: Scalar>(&self, params: &[S]) -> Result<GenProgram<S>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObjectiveKind {
    Elbo,
    Iwelbo {
        n: usize,
    },
    /// Guide update of reweighted wake-sleep: minimize `-log q(z)` with `z`
    /// drawn from self-normalized importance sampling.
    Qwake {
        n: usize,
    },
    /// Model update of reweighted wake-sleep.
    Pwake {
        n: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Maximize,
    Minimize,
}

impl ObjectiveKind {
    pub fn direction(self) -> Direction {
        match self {
            ObjectiveKind::Qwake { .. } => Direction::Minimize,
            _ => Direction::Maximize,
        }
    }

    pub fn particles(self) -> usize {
        match self {
            ObjectiveKind::Elbo => 1,
            ObjectiveKind::Iwelbo { n } | ObjectiveKind::Qwake { n } | ObjectiveKind::Pwake { n } => n,
        }
    }
}

/// Objective over the concatenation of model and guide parameters.
#[derive(Clone, Debug)]
pub struct Objective<M, G> {
    pub kind: ObjectiveKind,
    pub model: M,
    pub guide: G,
}

pub fn elbo<M: Family, G: Family>(model: M, guide: G) -> Objective<M, G> {
    Objective { kind: ObjectiveKind::Elbo, model, guide }
}

pub fn iwelbo<M: Family, G: Family>(model: M, guide: G, n: usize) -> Objective<M, G> {
    Objective { kind: ObjectiveKind::Iwelbo { n }, model, guide }
}

pub fn qwake<M: Family, G: Family>(model: M, guide: G, n: usize) -> Objective<M, G> {
    Objective { kind: ObjectiveKind::Qwake { n }, model, guide }
}

pub fn pwake<M: Family, G: Family>(model: M, guide: G, n: usize) -> Objective<M, G> {
    Objective { kind: ObjectiveKind::Pwake { n }, model, guide }
}

/// ELBO with a guide whose auxiliary choices are marginalized by
/// importance sampling.
pub fn hvi_elbo<M: Family, G: Family, P: Family>(
    model: M,
    joint: G,
    kept: Vec<String>,
    proposal: P,
    n: usize,
) -> Objective<M, MarginalFamily<G, P>> {
    elbo(model, MarginalFamily { joint, proposal, kept, n })
}

/// Importance-weighted bound with a marginalized guide: `outer` guide
/// particles, each with an `inner`-particle density estimate.
pub fn diwhvi<M: Family, G: Family, P: Family>(
    model: M,
    joint: G,
    kept: Vec<String>,
    proposal: P,
    inner: usize,
    outer: usize,
) -> Objective<M, MarginalFamily<G, P>> {
    iwelbo(model, MarginalFamily { joint, proposal, kept, n: inner }, outer)
}

fn prefixed(prefix: &str, names: Vec<String>) -> Vec<String> {
    names.into_iter().map(|n| format!("{prefix}.{n}")).collect()
}

fn detached<S: Scalar>(xs: &[S]) -> Vec<S> {
    xs.iter().map(|x| x.detach()).collect()
}

/// `p(z) / q(z)` for one guide draw, failing loudly when the guide leaves
/// the model's support.
fn log_ratio<S: Scalar>(model: GenProgram<S>, guide: GenProgram<S>) -> Prob<LogWeight<S>, S> {
    Prob::new(move |k, ctx| {
        sim_run(
            guide.clone(),
            &|q: SimResult<S>, ctx: &mut Ctx| {
                density_run(
                    model.clone(),
                    q.trace.clone(),
                    &|r: DensityResult<S>, ctx: &mut Ctx| {
                        if r.log_weight.is_zero() {
                            return Err(out_of_support(&q.trace));
                        }
                        k(r.log_weight.div(q.log_weight)?, ctx)
                    },
                    ctx,
                )
            },
            ctx,
        )
    })
}

fn out_of_support<S: Scalar>(trace: &Trace<S>) -> Error {
    Error::domain(format!("model density is zero at guide sample {}", trace.to_json_string()))
}

impl<M: Family, G: Family> Objective<M, G> {
    pub fn direction(&self) -> Direction {
        self.kind.direction()
    }

    fn split<'a, S>(&self, params: &'a [S]) -> Result<(&'a [S], &'a [S])> {
        let nm = self.model.param_names().len();
        let ng = self.guide.param_names().len();
        if params.len() != nm + ng {
            return Err(Error::domain(format!("expected {} parameters, got {}", nm + ng, params.len())));
        }
        Ok(params.split_at(nm))
    }
}

impl<M: Family, G: Family> Loss for Objective<M, G> {
    fn param_names(&self) -> Vec<String> {
        let mut names = prefixed("p", self.model.param_names());
        names.extend(prefixed("q", self.guide.param_names()));
        names
    }

    fn estimator<S: Scalar>(&self, params: &[S]) -> Result<LossEst<S>> {
        self.estimator_with_sampler(params, &detached(params))
    }
}

impl<M: Family, G: Family> Objective<M, G> {
    /// Like [`Loss::estimator`], but the wake objectives draw particles at
    /// `sampler` instead of at `params`. Tangents of `sampler` are dropped.
    /// ELBO and IWELBO ignore it.
    pub fn estimator_with_sampler<S: Scalar>(&self, params: &[S], sampler: &[S]) -> Result<LossEst<S>> {
        let (theta, phi) = self.split(params)?;
        let (theta_s, phi_s) = self.split(sampler)?;
        match self.kind {
            ObjectiveKind::Elbo => {
                let m = log_ratio(self.model.build(theta)?, self.guide.build(phi)?);
                Ok(expect(m.map(|w| w.log())))
            }
            ObjectiveKind::Iwelbo { n } => {
                if n == 0 {
                    return Err(Error::domain("IWELBO needs at least one particle"));
                }
                let model = self.model.build(theta)?;
                let guide = self.guide.build(phi)?;
                let ws = prob_sequence((0..n).map(|_| log_ratio(model.clone(), guide.clone())).collect());
                Ok(expect(ws.map(|ws: Vec<LogWeight<S>>| LogWeight::mean(&ws).log())))
            }
            ObjectiveKind::Qwake { n } => {
                let sampler = normalize(
                    self.model.build(&detached(theta_s))?,
                    importance(self.guide.build(&detached(phi_s))?, n)?,
                );
                let guide = self.guide.build(phi)?;
                let m = sim_cps(sampler).bind(move |z: SimResult<S>| {
                    Ok(density_estimator(guide.clone(), z.trace).map(|r| Ok(-r.log_weight.log()?)))
                });
                Ok(expect(m))
            }
            ObjectiveKind::Pwake { n } => {
                let model = self.model.build(theta)?;
                let sampler = normalize(model.clone(), importance(self.guide.build(&detached(phi_s))?, n)?);
                let m = sim_cps(sampler).bind(move |z: SimResult<S>| {
                    let lw = z.log_weight;
                    Ok(density_estimator(model.clone(), z.trace).map(move |r| r.log_weight.div(lw)?.log()))
                });
                Ok(expect(m))
            }
        }
    }
}

/// An objective whose wake-phase sampler is pinned at fixed parameters,
/// so that the loss is an ordinary function of the remaining parameters.
/// Finite differences of this loss are what wake gradients estimate.
pub struct FixedSampler<'a, M, G> {
    pub objective: &'a Objective<M, G>,
    pub sampler: Vec<f64>,
}

impl<M: Family, G: Family> Loss for FixedSampler<'_, M, G> {
    fn param_names(&self) -> Vec<String> {
        self.objective.param_names()
    }

    fn estimator<S: Scalar>(&self, params: &[S]) -> Result<LossEst<S>> {
        let sampler: Vec<S> = self.sampler.iter().map(|&x| S::constant(x)).collect();
        self.objective.estimator_with_sampler(params, &sampler)
    }
}

/// Guide family whose auxiliary choices are integrated out: `joint`
/// samples everything, only `kept` names are exposed, and the rest are
/// weighed by `n` draws from `proposal`.
#[derive(Clone, Debug)]
pub struct MarginalFamily<G, P> {
    pub joint: G,
    pub proposal: P,
    pub kept: Vec<String>,
    pub n: usize,
}

impl<G: Family, P: Family> Family for MarginalFamily<G, P> {
    fn param_names(&self) -> Vec<String> {
        let mut names = prefixed("joint", self.joint.param_names());
        names.extend(prefixed("aux", self.proposal.param_names()));
        names
    }

    fn build<S: Scalar>(&self, params: &[S]) -> Result<GenProgram<S>> {
        let nj = self.joint.param_names().len();
        let (a, b) = params.split_at(nj);
        let proposal = self.proposal.build(b)?;
        let n = self.n;
        importance(proposal.clone(), n)?;
        Ok(marginal(self.kept.clone(), self.joint.build(a)?, move |_| importance(proposal.clone(), n)))
    }
}

/// Sampling importance resampling over `target`, proposing from
/// `proposal` with `n` particles.
#[derive(Clone, Debug)]
pub struct NormalizeFamily<M, P> {
    pub target: M,
    pub proposal: P,
    pub n: usize,
}

impl<M: Family, P: Family> Family for NormalizeFamily<M, P> {
    fn param_names(&self) -> Vec<String> {
        let mut names = prefixed("target", self.target.param_names());
        names.extend(prefixed("proposal", self.proposal.param_names()));
        names
    }

    fn build<S: Scalar>(&self, params: &[S]) -> Result<GenProgram<S>> {
        let nt = self.target.param_names().len();
        let (a, b) = params.split_at(nt);
        Ok(normalize(self.target.build(a)?, importance(self.proposal.build(b)?, self.n)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adev::{forward_grad, Ctx};
    use crate::zoo::{self, conj_log_evidence};

    fn conj() -> Objective<crate::zoo::ZooFamily, crate::zoo::AnyFamily> {
        elbo(zoo::model("conj").unwrap(), zoo::guide("conj_normal", 1).unwrap())
    }

    /// ELBO of N(m, s) against the conjugate model, written out by hand.
    fn conj_elbo(m: f64, s: f64) -> f64 {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let prior = -0.5 * ln2pi - 0.5 * (m * m + s * s);
        let lik = -0.5 * ln2pi - 0.5 * ((1.0 - m) * (1.0 - m) + s * s);
        let entropy = 0.5 * ln2pi + 0.5 + s.ln();
        prior + lik + entropy
    }

    #[test]
    fn elbo_matches_closed_form() {
        let obj = conj();
        let (m, s) = (0.3, 0.9);
        let est = obj.estimator::<f64>(&[m, s]).unwrap();
        let n = 200_000;
        let root = Ctx::new(1);
        let mean: f64 = (0..n).map(|i| est.sample(&mut root.split(i)).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - conj_elbo(m, s)).abs() < 0.01, "{mean} vs {}", conj_elbo(m, s));
    }

    #[test]
    fn elbo_at_posterior_is_evidence() {
        let (m, s) = zoo::conj_posterior();
        let est = conj().estimator::<f64>(&[m, s]).unwrap();
        for i in 0..20 {
            let v = est.sample(&mut Ctx::new(i)).unwrap();
            assert!((v - conj_log_evidence()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_particle_iwelbo_is_elbo() {
        let m = zoo::model("conj").unwrap();
        let g = zoo::guide("conj_normal", 1).unwrap();
        let a = elbo(m.clone(), g.clone());
        let b = iwelbo(m, g, 1);
        for seed in 0..20 {
            let x = forward_grad(&a, &[0.2, 1.3], &Ctx::new(seed)).unwrap();
            let y = forward_grad(&b, &[0.2, 1.3], &Ctx::new(seed)).unwrap();
            assert_eq!(x.0.to_bits(), y.0.to_bits());
            assert_eq!(x.1, y.1);
        }
    }

    #[test]
    fn parameter_names_are_prefixed() {
        let names = conj().param_names();
        assert_eq!(names, vec!["q.m", "q.s"]);
        let obj = pwake(zoo::model("conj_learn").unwrap(), zoo::guide("conj_normal", 1).unwrap(), 4);
        assert_eq!(obj.param_names(), vec!["p.mu0", "q.m", "q.s"]);
        assert_eq!(obj.direction(), Direction::Maximize);
        assert_eq!(ObjectiveKind::Qwake { n: 2 }.direction(), Direction::Minimize);
    }

    #[test]
    fn wrong_parameter_count_is_an_error() {
        assert!(conj().estimator::<f64>(&[0.0]).is_err());
    }
}
