//! Retarded linear delay systems as abstract Cauchy problems on the lifted
//! space `X x L^2([-1, 0], X)`: delay semigroups, their norm bounds, and
//! admissibility of bounded control operators.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod admissibility;
pub mod bounds;
pub mod cli;
pub mod config;
pub mod delay_state;
pub mod error;
pub mod numkernel;
pub mod output;
pub mod population;
pub mod semigroup;

pub use error::{Error, Result};
