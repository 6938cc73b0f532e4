//! Homogenized flow and transport in thin random fissure networks.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cell;
pub mod error;
pub mod fissure_geometry;
pub mod fissure_transport;
pub mod limit_flow;
pub mod limit_transport;
pub mod linalg;
pub mod quad;
pub mod rng;
pub mod stochastic;
pub mod verify;

pub use error::{Error, Result};
