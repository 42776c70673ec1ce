//! Discrete LoRA gradient descent, its gradient-flow limit, closed-form
//! trajectories for the trace-squared and spectral Frobenius problems, and
//! Monte Carlo checks of the rank-dependent approximation error.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod closed_form_trace;
pub mod error;
pub mod error_stats;
pub mod gradient_flow;
mod hyperbolic;
pub mod linalg;
pub mod lora_gd;
pub mod objectives;
pub mod spectral_lowrank;

pub use error::{Error, Result};
pub use linalg::{theta_norm, Matrix, RngState, ThetaPoint};
pub use objectives::{Objective, ObjectiveKind};
