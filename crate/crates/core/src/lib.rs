//! Simulation, closed-form oracles and ergodicity certificates for stochastic
//! differential equations whose coefficients are periodic in time.

// `!(x > 0.0)` is how NaN gets rejected alongside non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod closedform;
pub mod conditions;
pub mod error;
pub mod exec;
pub mod expr;
pub mod functionals;
pub mod model;
pub mod quadrature;
pub mod signal;
pub mod simulate;
pub mod stats;
pub mod time;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{catalog_model, Dynamics, PeriodicSDEModel};
pub use signal::Signal;
pub use time::wrap_time;
