//! Control-engineering toolkit built around three stages:
//!
//! 1. **Model reduction**: fit first- or second-order dead-time models to
//!    high-order plants by minimizing a frequency-plane discrepancy with a
//!    real-coded genetic algorithm ([`reduce`]).
//! 2. **Controller tuning**: search integer and fractional-order PID gains
//!    that minimize a weighted time-domain cost on the full plant ([`tuning`],
//!    [`sim`], [`frac`]).
//! 3. **Rule extraction**: evolve closed-form tuning formulas from the fitted
//!    model parameters with multigene symbolic regression ([`gp`]), and
//!    evaluate fixed closed-form formulas ([`tuning`]).
//!
//! The [`bench`] module provides the four-class test-bench plant catalog the
//! pipeline is exercised on.

pub mod bench;
pub mod error;
pub mod frac;
pub mod ga;
pub mod gp;
pub mod poly;
pub mod reduce;
pub mod sim;
pub mod ss;
pub mod tf;
pub mod tuning;

pub use error::{Error, Result};

/// Cost assigned to candidates whose evaluation fails (divergent loops,
/// invalid parameters, numeric breakdown). Large enough to dominate any
/// genuine cost, finite so ranking still works.
pub const PENALTY_COST: f64 = 1e9;
