//! Numerical gluing of anti-self-dual SU(2) instantons on S⁴ along bubble
//! trees, with the quadrature, gauge and extraction machinery around it.

// `!(x > 0.0)` is used on purpose so that NaN is rejected along with x ≤ 0.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bubbletree;
pub mod diffmetric;
pub mod error;
pub mod gauge;
pub mod geometry;
pub mod instanton;
pub mod moments;
pub mod par;
pub mod splice;

pub use error::{Error, Result};
