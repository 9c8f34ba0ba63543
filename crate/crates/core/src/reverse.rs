//! Reverse mode: a per-thread append-only tape of scalar operations.
//!
//! The estimators are shared with forward mode; score-function terms reach
//! the tape as surrogate nodes (zero value, detached weight times the
//! log-density), so one backward sweep yields the full gradient estimate.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use rayon::prelude::*;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::adev::{forward_grad, Ctx, Loss};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats::mean_se;

const CONST: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
struct Node {
    a: u32,
    da: f64,
    b: u32,
    db: f64,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    slots: Vec<(String, u32)>,
    surrogates: Vec<(u32, f64)>,
}

thread_local! {
    static TAPE: RefCell<Option<Tape>> = const { RefCell::new(None) };
}

/// A scalar recorded on the current thread's tape.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    idx: u32,
    val: f64,
}

fn push(val: f64, a: u32, da: f64, b: u32, db: f64) -> Var {
    if a == CONST && b == CONST {
        return Var { idx: CONST, val };
    }
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        let tape = t.as_mut().expect("tape variable used outside a reverse-mode session");
        let idx = tape.nodes.len() as u32;
        tape.nodes.push(Node { a, da, b, db });
        Var { idx, val }
    })
}

fn unary(x: Var, val: f64, d: f64) -> Var {
    push(val, x.idx, d, CONST, 0.0)
}

impl Add for Var {
    type Output = Var;
    fn add(self, o: Var) -> Var {
        push(self.val + o.val, self.idx, 1.0, o.idx, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    fn sub(self, o: Var) -> Var {
        push(self.val - o.val, self.idx, 1.0, o.idx, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    fn mul(self, o: Var) -> Var {
        push(self.val * o.val, self.idx, o.val, o.idx, self.val)
    }
}

impl Div for Var {
    type Output = Var;
    fn div(self, o: Var) -> Var {
        let q = self.val / o.val;
        push(q, self.idx, 1.0 / o.val, o.idx, -q / o.val)
    }
}

impl Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        unary(self, -self.val, -1.0)
    }
}

impl Add<f64> for Var {
    type Output = Var;
    fn add(self, c: f64) -> Var {
        unary(self, self.val + c, 1.0)
    }
}

impl Sub<f64> for Var {
    type Output = Var;
    fn sub(self, c: f64) -> Var {
        unary(self, self.val - c, 1.0)
    }
}

impl Mul<f64> for Var {
    type Output = Var;
    fn mul(self, c: f64) -> Var {
        unary(self, self.val * c, c)
    }
}

impl Div<f64> for Var {
    type Output = Var;
    fn div(self, c: f64) -> Var {
        unary(self, self.val / c, 1.0 / c)
    }
}

impl Scalar for Var {
    fn constant(x: f64) -> Self {
        Var { idx: CONST, val: x }
    }
    fn value(self) -> f64 {
        self.val
    }
    fn detach(self) -> Self {
        Var::constant(self.val)
    }
    fn is_constant(self) -> bool {
        self.idx == CONST
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        unary(self, e, e)
    }
    fn ln(self) -> Self {
        unary(self, self.val.ln(), 1.0 / self.val)
    }
    fn sin(self) -> Self {
        unary(self, self.val.sin(), self.val.cos())
    }
    fn cos(self) -> Self {
        unary(self, self.val.cos(), -self.val.sin())
    }
    fn sqrt(self) -> Self {
        let r = self.val.sqrt();
        unary(self, r, 0.5 / r)
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Var::constant(1.0);
        }
        unary(self, self.val.powi(n), n as f64 * self.val.powi(n - 1))
    }
    fn ln_gamma(self) -> Self {
        unary(self, ln_gamma(self.val), digamma(self.val))
    }
    fn phantom(x: Self, weight: f64) -> Self {
        if x.is_constant() {
            return Var::constant(0.0);
        }
        let s = push(0.0, x.idx, weight, CONST, 0.0);
        TAPE.with(|t| {
            if let Some(tape) = t.borrow_mut().as_mut() {
                tape.surrogates.push((s.idx, weight));
            }
        });
        s
    }
}

/// Owns the thread's tape for the duration of one gradient sample.
struct Session;

impl Session {
    fn begin() -> Result<Session> {
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            if t.is_some() {
                return Err(Error::Tape("a reverse-mode session is already active on this thread".into()));
            }
            *t = Some(Tape::default());
            Ok(Session)
        })
    }

    fn leaf(&self, name: &str, val: f64) -> Var {
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            let tape = t.as_mut().expect("session is active");
            let idx = tape.nodes.len() as u32;
            tape.nodes.push(Node { a: CONST, da: 0.0, b: CONST, db: 0.0 });
            tape.slots.push((name.to_string(), idx));
            Var { idx, val }
        })
    }

    fn backward(&self, out: Var) -> (Vec<f64>, usize, usize) {
        TAPE.with(|t| {
            let t = t.borrow();
            let tape = t.as_ref().expect("session is active");
            let mut adj = vec![0.0; tape.nodes.len()];
            if out.idx != CONST {
                adj[out.idx as usize] = 1.0;
            }
            for i in (0..tape.nodes.len()).rev() {
                let g = adj[i];
                if g == 0.0 {
                    continue;
                }
                let n = tape.nodes[i];
                if n.a != CONST {
                    adj[n.a as usize] += n.da * g;
                }
                if n.b != CONST {
                    adj[n.b as usize] += n.db * g;
                }
            }
            let grad = tape.slots.iter().map(|(_, idx)| adj[*idx as usize]).collect();
            (grad, tape.nodes.len(), tape.surrogates.len())
        })
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        TAPE.with(|t| *t.borrow_mut() = None);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    pub value: f64,
    pub grad: Vec<f64>,
    pub tape_len: usize,
    pub surrogates: usize,
}

/// One reverse-mode sample of the loss and its full gradient.
pub fn reverse_grad<L: Loss>(loss: &L, theta: &[f64], ctx: &mut Ctx) -> Result<GradSample> {
    let names = loss.param_names();
    if names.len() != theta.len() {
        return Err(Error::domain(format!("expected {} parameters, got {}", names.len(), theta.len())));
    }
    let session = Session::begin()?;
    let vars: Vec<Var> = names.iter().zip(theta).map(|(n, &v)| session.leaf(n, v)).collect();
    let out = loss.estimator(&vars)?.sample(ctx)?;
    let (grad, tape_len, surrogates) = session.backward(out);
    if !out.val.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::domain(format!("non-finite gradient sample (value {})", out.val)));
    }
    Ok(GradSample { value: out.val, grad, tape_len, surrogates })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Forward,
    Reverse,
}

/// Gradient sample in either mode.
pub fn grad_sample<L: Loss>(loss: &L, theta: &[f64], ctx: &Ctx, mode: Mode) -> Result<(f64, Vec<f64>)> {
    match mode {
        Mode::Forward => forward_grad(loss, theta, ctx),
        Mode::Reverse => {
            let s = reverse_grad(loss, theta, &mut ctx.clone())?;
            Ok((s.value, s.grad))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradEstimate {
    pub value: f64,
    pub value_se: f64,
    pub mean: Vec<f64>,
    /// Standard errors; all zero and `se_valid == false` for one sample.
    pub std_err: Vec<f64>,
    pub se_valid: bool,
    pub samples: usize,
}

/// Average of `samples` gradient samples. Sample `i` always runs on
/// `root.split(i)` and results are reduced in index order, so the output
/// does not depend on `workers`.
pub fn grad_mean<L: Loss + Sync>(
    loss: &L,
    theta: &[f64],
    samples: usize,
    root: &Ctx,
    mode: Mode,
    workers: usize,
) -> Result<GradEstimate> {
    if samples == 0 {
        return Err(Error::domain("need at least one gradient sample"));
    }
    let run = || -> Result<Vec<(f64, Vec<f64>)>> {
        (0..samples).into_par_iter().map(|i| grad_sample(loss, theta, &root.split(i as u64), mode)).collect()
    };
    let draws = if workers <= 1 {
        (0..samples).map(|i| grad_sample(loss, theta, &root.split(i as u64), mode)).collect::<Result<Vec<_>>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Tape(e.to_string()))?
            .install(run)?
    };
    let values: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let (value, value_se) = mean_se(&values);
    let dim = theta.len();
    let mut mean = Vec::with_capacity(dim);
    let mut std_err = Vec::with_capacity(dim);
    for j in 0..dim {
        let col: Vec<f64> = draws.iter().map(|d| d.1[j]).collect();
        let (m, se) = mean_se(&col);
        mean.push(m);
        std_err.push(if samples > 1 { se } else { 0.0 });
    }
    Ok(GradEstimate {
        value,
        value_se: if samples > 1 { value_se } else { 0.0 },
        mean,
        std_err,
        se_valid: samples > 1,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adev::{exact, LossEst};

    struct Quadratic;

    impl Loss for Quadratic {
        fn param_names(&self) -> Vec<String> {
            vec!["a".into(), "b".into()]
        }
        fn estimator<S: Scalar>(&self, p: &[S]) -> Result<LossEst<S>> {
            Ok(exact(p[0] * p[0] + p[1] * 3.0))
        }
    }

    #[test]
    fn deterministic_loss_gradient() {
        let g = reverse_grad(&Quadratic, &[2.0, 5.0], &mut Ctx::new(0)).unwrap();
        assert_eq!(g.grad, vec![4.0, 3.0]);
        assert_eq!(g.value, 19.0);
        let est = grad_mean(&Quadratic, &[2.0, 5.0], 1, &Ctx::new(0), Mode::Reverse, 1).unwrap();
        assert!(!est.se_valid);
        assert_eq!(est.mean, vec![4.0, 3.0]);
    }

    #[test]
    fn matches_forward_mode() {
        let (v, g) = forward_grad(&Quadratic, &[2.0, 5.0], &Ctx::new(0)).unwrap();
        assert_eq!(v, 19.0);
        assert_eq!(g, vec![4.0, 3.0]);
    }

    #[test]
    fn nested_session_is_rejected() {
        let _outer = Session::begin().unwrap();
        assert!(Session::begin().is_err());
    }

    #[test]
    fn elementary_reverse_derivatives() {
        let s = Session::begin().unwrap();
        let x = s.leaf("x", 0.7);
        let y = (x.exp() * x.sin() + x.ln() / x.sqrt()).powi(2) - x.ln_gamma() + x.cos();
        let (g, _, _) = s.backward(y);
        drop(s);
        let f = |t: f64| (t.exp() * t.sin() + t.ln() / t.sqrt()).powi(2) - ln_gamma(t) + t.cos();
        let h = 1e-6;
        let fd = (f(0.7 + h) - f(0.7 - h)) / (2.0 * h);
        assert!((g[0] - fd).abs() < 1e-6);
    }
}
