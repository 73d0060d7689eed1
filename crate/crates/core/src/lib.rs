//! Simulator-backed pulse optimization for quantum Fisher information.
//!
//! The crate models a coupled two-qubit sensor driven by piecewise-constant
//! controls, estimates the quantum Fisher information of the drift frequency,
//! and optimizes the control grid by gradient ascent. Gradients come either
//! from the exact state (analytic) or from population measurements taken
//! after inserting local π/2 rotations into the pulse sequence, so the same
//! loop runs against the ideal model or a noisy simulated sensor.

// validations use `!(x >= 0.0)` style on purpose: the negation rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod encoding;
pub mod error;
pub mod metrology;
pub mod noise;
pub mod optimizer;
pub mod quantum;
pub mod sensor;

pub use error::{Error, Result};
