//! Significant wave height regression from sparse sea-clutter spectral
//! points.
//!
//! The crate covers the full pipeline:
//!
//! - [`wavefield`] synthesizes dispersion-consistent sea-surface image
//!   sequences with exact ground-truth significant wave height;
//! - [`spectral`] turns sequences into sparse high-energy spectral point
//!   clouds via a 3D FFT;
//! - [`numcore`] is the dense-tensor substrate with reverse-mode automatic
//!   differentiation and the Adam optimizer;
//! - [`sptmodel`] implements the spectral point transformer and its ablation
//!   variants, with parameter and FLOP accounting;
//! - [`pipeline`] trains and evaluates models and runs the ablation grid;
//! - [`analysis`] scores how strongly learned features align with the
//!   physical dispersion relation;
//! - [`cli`] exposes everything as the `spt` executable.

pub mod analysis;
pub mod cli;
pub mod error;
pub(crate) mod io;
pub mod numcore;
pub mod pipeline;
pub mod spectral;
pub mod sptmodel;
pub mod wavefield;

pub use error::{Result, SptError};
