//! Global observers for observed systems on two-frame groups.
//!
//! A system whose state lives on a two-frame group (rotation plus a block
//! of vectors) and whose outputs are linear in the group action is
//! immersed into a linear time-varying system. A Kalman observer on that
//! system converges globally, and the group estimate is recovered by a
//! weighted Procrustes problem.
// Comparisons like `!(v > 0.0)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod groups;
pub mod immersion;
pub mod observer;
pub mod parallel;
pub mod reconstruct;
pub mod riccati;
pub mod sampling;
pub mod scenarios;

pub use error::{Error, Result};
