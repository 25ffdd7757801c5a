//! Diffusing-horizon model predictive control.
//!
//! Linear-cost MPC problems are reduced to block-banded LPs, solved with a
//! basis-exposing simplex, coarsened in time by aggregation, and simulated in
//! closed loop. A synthetic HVAC central-plant benchmark is included.

pub mod closed_loop;
pub mod coarsening;
pub mod eds;
pub mod error;
pub mod hvac;
pub mod linalg;
pub mod lp;
pub mod model;
pub mod output;
pub mod synth;

pub use error::{Error, Result};
