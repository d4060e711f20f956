//! Minimal reverse-mode autodiff tensor engine.
//!
//! Supplies the numeric substrate for the rest of the workspace: tensors on a
//! define-by-run gradient tape, an Adam optimizer, named deterministic RNG
//! streams, and finite-difference gradient-check tooling.
//!
//! Precision is selected at build time: wide (f64) by default, narrow (f32)
//! with the `narrow` feature. Tests and gradient checks assume the wide build.

pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod param;
pub mod rng;
pub mod tape;

#[cfg(not(feature = "narrow"))]
pub type Real = f64;
#[cfg(feature = "narrow")]
pub type Real = f32;

pub use error::{CoreError, Result};
pub use optim::{Adam, AdamConfig};
pub use param::{fingerprint, Param, ParamGroup};
pub use rng::{RngState, RngStream};
pub use tape::{Tape, Tensor};
