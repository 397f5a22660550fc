//! Supervised 2D projection of embedding vectors, jointly trained with an
//! adaptive kernel-regression estimate of a per-instance scalar metric, plus
//! contour-grid estimation, classical baselines and evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod contour;
pub mod dataio;
pub mod error;
pub mod kernels;
pub mod losses;
pub mod model;
pub mod par;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};
