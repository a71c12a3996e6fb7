//! Score distillation from 2D diffusion teachers into a planar density field.
//!
//! A small pyramid-grid field is rendered by parallel-beam projection, the
//! projections are scored by 1D denoising teachers, and the resulting
//! gradients are pushed back to the field under a timestep and detail
//! curriculum.

// Validation writes `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod curriculum;
pub mod diffusion;
pub mod error;
pub mod evalx;
pub mod grid;
pub mod io;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod sds;
pub mod student;
pub mod teacher;

pub use error::{Error, Result};
