//! Programmable variational inference.
//!
//! Models and variational families are written as [`gen::GenProgram`]s.
//! Objectives such as the ELBO are assembled from simulation and density
//! interpreters, and their gradients are estimated by running the same
//! generic code over forward-mode dual numbers or reverse-mode tape
//! variables, with a per-primitive gradient strategy (reparameterization,
//! score function, enumeration, measure-valued derivatives).

// `!(x > 0.0)` is how parameter checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// `LogWeight::div` is fallible, so the operator traits do not fit.
#![allow(clippy::should_implement_trait)]
#![allow(clippy::type_complexity)]

pub mod adev;
pub mod compile;
pub mod dist;
pub mod error;
pub mod experiment;
pub mod gen;
pub mod marginal;
pub mod objectives;
pub mod optim;
pub mod reverse;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod strategies;
pub mod trace;
pub mod value;
pub mod weight;
pub mod zoo;

pub use error::{Error, Result};
pub use scalar::{Dual, Scalar};
