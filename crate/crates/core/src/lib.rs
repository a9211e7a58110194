//! Multi-period portfolio strategies under a terminal correlation
//! constraint.
//!
//! The market has one tradable stock, a stochastic income stream and a
//! non-tradable benchmark index, all driven by symmetric ±1 shocks on an
//! equally spaced grid. An investor with exponential utility maximizes
//! expected terminal utility subject to the terminal wealth being
//! negatively correlated with the index: `corr(W, B) <= -delta`.
//!
//! The crate computes three closed-form strategies:
//!
//! * `UnSGP` — the unconstrained optimum, a constant amount per step;
//! * `CSGP`  — the constrained subgame-perfect strategy found by backward
//!   induction, where each step's amount is capped by the left root of a
//!   quadratic in the conditional correlation;
//! * `CPC`   — the constrained precommitment strategy, the time-0 optimal
//!   deterministic plan, equal across steps.
//!
//! Every closed form is backed by an independent oracle ([`oracle`]):
//! exhaustive enumeration of the shock paths and constrained grid
//! searches. [`montecarlo`] estimates utility and percentile risk at
//! scale, and [`harness`] drives parameter sweeps and file emission for
//! the CLI.

// Validation deliberately writes `!(x > 0.0)` so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod model;
pub mod montecarlo;
mod numeric;
pub mod oracle;
pub mod strategies;

pub use error::{Error, Result};
