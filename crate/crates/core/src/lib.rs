//! Non-autoregressive denoising diffusion for stroke-sequence sketches.
//!
//! Sketches are diffused in velocity space, one independent Gaussian chain per
//! element, and denoised by a bidirectional GRU that sees the whole noisy
//! sequence at once. The numeric core is generic over [`Scalar`] (`f32` or
//! `f64`); the aliases below fix the precision used by the command line tool
//! and the HTTP service.

pub mod apps;
pub mod autodiff;
pub mod batch;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod nn;
pub mod render;
pub mod scalar;
pub mod schedule;
pub mod sketch;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Precision of the command line tool and the HTTP service.
pub type Real = f32;
pub type Model = model::DiffusionModel<Real>;
pub type ModelCheckpoint = train::Checkpoint<Real>;
pub type Model64 = model::DiffusionModel<f64>;
pub type Checkpoint64 = train::Checkpoint<f64>;
