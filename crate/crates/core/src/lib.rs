//! Time-optimal, spill-free emergency stopping for manipulators carrying open
//! liquid containers.

// `!(x > 0.0)` also rejects NaN; the solvers index parallel arrays
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod experiments;
pub mod kinematics;
pub mod model;
pub mod ocp;
pub mod qp;
pub mod rac;
pub mod sim;
pub mod slosh;

pub use error::{Error, Result};
