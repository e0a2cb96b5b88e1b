//! Pre-emptive traction control for an electric vehicle axle.
//!
//! A nonlinear model predictive controller limits motor torque so that
//! front-wheel slip stays at the friction peak, using a spatial friction
//! map to see reduced grip ahead of the wheels.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod model;
pub mod nmpc;
pub mod plant;
pub mod preview;
pub mod qp;

pub use error::{Error, Result};
