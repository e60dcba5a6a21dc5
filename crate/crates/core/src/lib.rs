// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coefficient;
pub mod dense;
pub mod edge_basis;
pub mod error;
pub mod fem;
pub mod galerkin;
pub mod harness;
pub mod mesh;
pub mod sparse;
pub mod util;

pub use error::{Error, Result};
