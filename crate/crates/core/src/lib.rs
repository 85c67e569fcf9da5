//! Discounted potential mean field games on the circle.
//!
//! The crate computes discounted values `V_delta(m0)` of the control problem
//! over Fokker-Planck flows, the ergodic constant `lambda`, the normalized
//! values `V_delta + lambda / delta`, and discounted occupation measures of
//! optimal arcs, and checks the vanishing-discount limit on a panel of probe
//! measures.

pub mod config;
pub mod error;
pub mod measure;
pub mod model;
pub mod occupation;
pub mod mfg;
pub mod pde;
pub mod run;
pub mod vanishing;

pub use error::{Error, Result};

/// Tag embedded in every emitted artifact.
pub const ARTIFACT_VERSION: &str = concat!("mfg-weakkam/", env!("CARGO_PKG_VERSION"));
