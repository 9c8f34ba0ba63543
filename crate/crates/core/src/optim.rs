//! Stochastic gradient optimizers and the training loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adev::{Ctx, Loss};
use crate::error::{Error, Result};
use crate::objectives::Direction;
use crate::reverse::{grad_mean, Mode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec { kind: OptimizerKind::Adam, lr: 0.05 }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec, dim: usize) -> Self {
        Optimizer { kind: spec.kind, lr: spec.lr, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    /// One update. `grad` is the gradient of the objective; the step goes
    /// uphill for [`Direction::Maximize`] and downhill otherwise.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], dir: Direction) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::domain(format!(
                "optimizer holds {} parameters, got {} and a gradient of {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::domain(format!("non-finite gradient {} for parameter {j}", grad[j])));
        }
        let sign = match dir {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        };
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p += sign * self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                let t = self.t as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for j in 0..params.len() {
                    self.m[j] = ADAM_BETA1 * self.m[j] + (1.0 - ADAM_BETA1) * grad[j];
                    self.v[j] = ADAM_BETA2 * self.v[j] + (1.0 - ADAM_BETA2) * grad[j] * grad[j];
                    let mhat = self.m[j] / c1;
                    let vhat = self.v[j] / c2;
                    params[j] += sign * self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch: usize,
    pub mode: Mode,
    pub workers: usize,
    pub optimizer: OptimizerSpec,
}

/// Objective estimate and parameters before the update of step `step`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub objective: f64,
    pub objective_se: f64,
    pub params: Vec<f64>,
    pub wall_ms: f64,
}

/// Run `steps` optimizer updates from `theta`. Step `s` draws its batch
/// from `root.split(s)`, sample `i` from `root.split(s).split(i)`.
pub fn train<L: Loss + Sync>(
    loss: &L,
    theta: &[f64],
    dir: Direction,
    settings: &TrainSettings,
    root: &Ctx,
    mut on_step: impl FnMut(&StepRecord) -> Result<()>,
) -> Result<Vec<f64>> {
    let mut params = theta.to_vec();
    let mut opt = Optimizer::new(settings.optimizer, params.len());
    let start = Instant::now();
    for step in 0..settings.steps {
        let est = grad_mean(loss, &params, settings.batch, &root.split(step as u64), settings.mode, settings.workers)?;
        if !est.value.is_finite() {
            return Err(Error::domain(format!("non-finite objective {} at step {step}", est.value)));
        }
        let record = StepRecord {
            step,
            objective: est.value,
            objective_se: est.value_se,
            params: params.clone(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        on_step(&record)?;
        opt.step(&mut params, &est.mean, dir)?;
    }
    Ok(params)
}
