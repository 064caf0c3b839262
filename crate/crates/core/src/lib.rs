//! Dyadic tilings, A1-type weight scales, trace and extension operators for
//! weighted Sobolev spaces on a bounded periodic window.

// NaN-rejecting `!(a >= b)` checks and index loops over small fixed
// dimensions are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod error;
pub mod extension;
pub mod functions;
pub mod norms;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod jet;
pub mod par;
pub mod quadrature;
pub mod svg;
pub mod tilings;
pub mod weights;

pub use error::{Error, Result};
