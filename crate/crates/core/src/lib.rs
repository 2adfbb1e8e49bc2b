//! Tri-factor contrastive learning on finite augmentation graphs.
//!
//! The crate works with explicit joint distributions over a small number of
//! augmented samples, so every objective can be evaluated in closed form and
//! compared with the spectral optimum of the normalized adjacency.

pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod losses;
pub mod spectra;
pub mod trainer;

pub use error::{Error, Result};
