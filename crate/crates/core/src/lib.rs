//! Semi-discrete entropic optimal transport for p-power costs, with the
//! exact oracles and stability experiments built on top of it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod costs;
pub mod entropic;
pub mod error;
pub mod measures;
pub mod solver;
pub mod stability;
pub mod verify;

pub use error::{Error, Result};
