//! Experiment configuration and the command implementations behind the
//! `progvi` binary.
//!
//! CSV formats:
//! - `train`: `step,objective,objective_se,<param>...,wall_ms`
//! - `enumerate` / `density`: `trace_json,density,log_density,tangent`
//! - `bench`: `strategy,param,mean,variance,ns_per_sample`

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adev::{Ctx, EstimatorConfig, Loss};
use crate::compile::{density, simulate};
use crate::dist::Strategy;
use crate::error::{Error, Result};
use crate::gen::enumerate_discrete;
use crate::objectives::{Family, FixedSampler, Objective, ObjectiveKind};
use crate::optim::{train, OptimizerSpec, StepRecord, TrainSettings};
use crate::reverse::{grad_mean, Mode};
use crate::scalar::Dual;
use crate::stats::{mean_se, variance};
use crate::trace::Trace;
use crate::zoo::{self, AnyFamily, ZooFamily};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSpec {
    /// Gradient samples.
    pub samples: usize,
    /// Common-random-number samples per finite difference.
    pub fd_samples: usize,
    pub h: f64,
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        GradcheckSpec { samples: 10_000, fd_samples: 100_000, h: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: String,
    /// Defaults to the model's standard guide.
    pub guide: Option<String>,
    /// Particle count for marginal and SIR guides.
    pub guide_particles: usize,
    pub objective: ObjectiveKind,
    /// Choice name to strategy, applied to both model and guide.
    pub strategies: BTreeMap<String, Strategy>,
    pub optimizer: OptimizerSpec,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub mode: Mode,
    pub workers: usize,
    pub reinforce_baseline: f64,
    /// Initial parameters in objective order; zoo defaults otherwise.
    pub params: Option<Vec<f64>>,
    pub gradcheck: GradcheckSpec,
    pub out: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: "conj".into(),
            guide: None,
            guide_particles: 10,
            objective: ObjectiveKind::Elbo,
            strategies: BTreeMap::new(),
            optimizer: OptimizerSpec::default(),
            steps: 200,
            batch: 32,
            seed: 0,
            mode: Mode::Reverse,
            workers: 1,
            reinforce_baseline: 0.0,
            params: None,
            gradcheck: GradcheckSpec::default(),
            out: None,
        }
    }
}

/// Parse a JSON config; errors carry a JSON pointer to the bad field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let pointer = if path == "." { "/".to_string() } else { format!("/{}", path.replace('.', "/")) };
        Error::config(pointer, e.into_inner().to_string())
    })
}

pub type ZooObjective = Objective<ZooFamily, AnyFamily>;

/// A config with its ids resolved against the zoo.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub objective: ZooObjective,
    pub params: Vec<f64>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let mut model = zoo::model(&config.model)
            .ok_or_else(|| Error::config("/model", format!("unknown model '{}'", config.model)))?;
        let guide_id = match &config.guide {
            Some(g) => g.clone(),
            None => zoo::default_guide(&config.model)
                .ok_or_else(|| Error::config("/guide", format!("model '{}' has no default guide", config.model)))?
                .to_string(),
        };
        if config.guide_particles == 0 {
            return Err(Error::config("/guide_particles", "must be positive"));
        }
        if config.objective.particles() == 0 {
            return Err(Error::config("/objective/n", "must be positive"));
        }
        if config.batch == 0 {
            return Err(Error::config("/batch", "must be positive"));
        }
        if !(config.optimizer.lr.is_finite() && config.optimizer.lr > 0.0) {
            return Err(Error::config("/optimizer/lr", "must be a positive number"));
        }
        let mut guide = zoo::guide(&guide_id, config.guide_particles)
            .ok_or_else(|| Error::config("/guide", format!("unknown guide '{guide_id}'")))?;
        model.overrides.extend(config.strategies.clone());
        for o in guide.overrides_mut() {
            o.extend(config.strategies.clone());
        }
        let objective = Objective { kind: config.objective, model, guide };
        let defaults = [objective.model.default_params(), objective.guide.default_params()].concat();
        let params = match &config.params {
            Some(p) if p.len() != defaults.len() => {
                return Err(Error::config(
                    "/params",
                    format!(
                        "expected {} values ({}), got {}",
                        defaults.len(),
                        objective.param_names().join(", "),
                        p.len()
                    ),
                ))
            }
            Some(p) => p.clone(),
            None => defaults,
        };
        let exp = Experiment { config, objective, params };
        // Building once surfaces invalid strategy overrides as config errors.
        exp.objective.estimator::<f64>(&exp.params).map_err(|e| match e {
            Error::InvalidStrategy { .. } => Error::config("/strategies", e.to_string()),
            e => e,
        })?;
        Ok(exp)
    }

    pub fn root(&self) -> Ctx {
        let cfg = EstimatorConfig::default().reinforce_baseline_set(self.config.reinforce_baseline);
        Ctx::new(self.config.seed).with_config(cfg)
    }

    pub fn param_names(&self) -> Vec<String> {
        self.objective.param_names()
    }

    /// Train and write the per-step CSV into `csv`. Returns the summary.
    pub fn train(&self, csv: &mut String) -> Result<serde_json::Value> {
        let c = &self.config;
        let settings =
            TrainSettings { steps: c.steps, batch: c.batch, mode: c.mode, workers: c.workers, optimizer: c.optimizer };
        let names = self.param_names();
        csv.push_str(&train_header(&names));
        let mut last: Option<StepRecord> = None;
        let final_params =
            train(&self.objective, &self.params, self.objective.direction(), &settings, &self.root(), |r| {
                csv.push_str(&train_row(r));
                last = Some(r.clone());
                Ok(())
            })?;
        Ok(serde_json::json!({
            "model": c.model,
            "guide": c.guide.clone().unwrap_or_else(|| zoo::default_guide(&c.model).unwrap_or("").to_string()),
            "objective": c.objective,
            "steps": c.steps,
            "batch": c.batch,
            "seed": c.seed,
            "final_objective": last.as_ref().map(|r| r.objective),
            "final_params": names.iter().cloned().zip(final_params.iter().copied()).collect::<BTreeMap<_, _>>(),
        }))
    }

    /// Compare the mean ADEV gradient with central finite differences of
    /// the Monte Carlo objective under common random numbers.
    pub fn gradcheck(&self) -> Result<serde_json::Value> {
        let g = self.config.gradcheck;
        let root = self.root();
        let est =
            grad_mean(&self.objective, &self.params, g.samples, &root.split(0), self.config.mode, self.config.workers)?;
        let held = FixedSampler { objective: &self.objective, sampler: self.params.clone() };
        let (fd, fd_se) = finite_difference(&held, &self.params, g.fd_samples, g.h, &root.split(1))?;
        let z: Vec<f64> = (0..self.params.len())
            .map(|j| {
                let se = (est.std_err[j].powi(2) + fd_se[j].powi(2)).sqrt();
                if se > 0.0 {
                    (est.mean[j] - fd[j]) / se
                } else if est.mean[j] == fd[j] {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        Ok(serde_json::json!({
            "params": self.param_names(),
            "theta": self.params,
            "mean": est.mean,
            "std_err": est.std_err,
            "finite_diff": fd,
            "fd_std_err": fd_se,
            "z_score": z,
        }))
    }

    /// Gradient mean and variance per parameter for each strategy that is
    /// valid at `choice`.
    pub fn bench(&self, choice: &str, samples: usize) -> Result<String> {
        let mut csv = String::from("strategy,param,mean,variance,ns_per_sample\n");
        let names = self.param_names();
        for s in [Strategy::Reparam, Strategy::Reinforce, Strategy::Enum, Strategy::Mvd] {
            let mut cfg = self.config.clone();
            cfg.strategies.insert(choice.to_string(), s);
            let exp = match Experiment::new(cfg) {
                Ok(e) => e,
                Err(Error::Config { .. }) => continue,
                Err(e) => return Err(e),
            };
            let root = exp.root();
            let start = Instant::now();
            let mut draws = Vec::with_capacity(samples);
            for i in 0..samples {
                draws.push(
                    crate::reverse::grad_sample(&exp.objective, &exp.params, &root.split(i as u64), exp.config.mode)?.1,
                );
            }
            let ns = start.elapsed().as_nanos() as f64 / samples.max(1) as f64;
            for (j, name) in names.iter().enumerate() {
                let col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
                let (m, _) = mean_se(&col);
                writeln!(csv, "{},{},{},{},{:.0}", s, name, m, variance(&col), ns).unwrap();
            }
        }
        Ok(csv)
    }

    /// Guide parameters with tangent along `wrt`, model parameters as given.
    fn dual_params(&self, family_params: &[f64], offset: usize, wrt: Option<&str>) -> Result<Vec<Dual>> {
        let names = self.param_names();
        let dir = match wrt {
            None => None,
            Some(w) => Some(
                names
                    .iter()
                    .position(|n| n == w)
                    .ok_or_else(|| Error::config("/wrt", format!("unknown parameter '{w}'")))?,
            ),
        };
        Ok(family_params
            .iter()
            .enumerate()
            .map(|(j, &x)| Dual::new(x, if dir == Some(j + offset) { 1.0 } else { 0.0 }))
            .collect())
    }

    fn model_params(&self, wrt: Option<&str>) -> Result<Vec<Dual>> {
        let nm = self.objective.model.param_names().len();
        self.dual_params(&self.params[..nm], 0, wrt)
    }

    /// Density table of the model over its whole (finite) support.
    pub fn enumerate(&self, wrt: Option<&str>) -> Result<String> {
        let p = self.objective.model.build(&self.model_params(wrt)?)?;
        let table = enumerate_discrete(&p)?;
        let mut csv = String::from("trace_json,density,log_density,tangent\n");
        for o in table.outcomes {
            let d = density(&p, &o.trace)?;
            csv.push_str(&density_row(&o.trace, d.density()));
        }
        Ok(csv)
    }

    /// Model density at one trace given as JSON.
    pub fn density(&self, trace_json: &str, wrt: Option<&str>) -> Result<String> {
        let json: serde_json::Value =
            serde_json::from_str(trace_json).map_err(|e| Error::config("/trace", e.to_string()))?;
        let u: Trace<Dual> = Trace::from_json(&json).map_err(|e| Error::config("/trace", e.to_string()))?;
        let p = self.objective.model.build(&self.model_params(wrt)?)?;
        let d = density(&p, &u)?;
        Ok(format!("trace_json,density,log_density,tangent\n{}", density_row(&u, d.density())))
    }

    /// One plain simulation of the guide, as JSON.
    pub fn sample_guide(&self, seed: u64) -> Result<String> {
        let nm = self.objective.model.param_names().len();
        let g = self.objective.guide.build::<f64>(&self.params[nm..])?;
        Ok(simulate(&g, &mut Ctx::new(seed))?.trace.to_json_string())
    }
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn density_row(trace: &Trace<Dual>, d: Dual) -> String {
    format!("{},{},{},{}\n", csv_quote(&trace.to_json_string()), d.v, d.v.ln(), d.d)
}

pub fn train_header(names: &[String]) -> String {
    format!("step,objective,objective_se,{},wall_ms\n", names.join(","))
}

pub fn train_row(r: &StepRecord) -> String {
    let params: Vec<String> = r.params.iter().map(|p| p.to_string()).collect();
    format!("{},{},{},{},{:.3}\n", r.step, r.objective, r.objective_se, params.join(","), r.wall_ms)
}

/// Drop the trailing `wall_ms` column of a training CSV.
pub fn strip_timing(csv: &str) -> String {
    csv.lines().map(|l| l.rsplit_once(',').map_or(l, |(a, _)| a)).collect::<Vec<_>>().join("\n")
}

/// Central differences `(f(theta + h e_j) - f(theta - h e_j)) / 2h`
/// averaged over `samples` draws, each evaluated on `root.split(i)` at
/// both points. Returns means and standard errors.
pub fn finite_difference<L: Loss>(
    loss: &L,
    theta: &[f64],
    samples: usize,
    h: f64,
    root: &Ctx,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut means = Vec::new();
    let mut ses = Vec::new();
    for j in 0..theta.len() {
        let mut plus = theta.to_vec();
        let mut minus = theta.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let ep = loss.estimator::<f64>(&plus)?;
        let em = loss.estimator::<f64>(&minus)?;
        let mut diffs = Vec::with_capacity(samples);
        for i in 0..samples {
            let c = root.split(i as u64);
            let d = (ep.sample(&mut c.clone())? - em.sample(&mut c.clone())?) / (2.0 * h);
            diffs.push(d);
        }
        let (m, se) = mean_se(&diffs);
        means.push(m);
        ses.push(se);
    }
    Ok((means, ses))
}
