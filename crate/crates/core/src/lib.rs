//! 2D-to-3D human pose lifting with optional geometric priors.
//!
//! The crate is organized around the data path of a lifting experiment:
//!
//! * [`tensor`] — dense f32/f64 tensors with reverse-mode autodiff,
//!   sized for the lifter's forward pass and training.
//! * [`geometry`] — pinhole cameras, random camera sampling, perspective
//!   projection, root-frame construction and segment lengths.
//! * [`dataset`] — motion clips (`.mclip`), a procedural motion generator,
//!   window extraction and on-the-fly training-sample synthesis.
//! * [`model`] — the Transformer lifter and its checkpoint format (`.plc`).
//! * [`training`] — losses, AdamW, cosine schedule, prior-masking schedule
//!   and the two-stage expert/versatile protocol.
//! * [`evaluation`] — per-task MPJPE ablation reports, trajectory export
//!   and CPU latency benchmarking.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
