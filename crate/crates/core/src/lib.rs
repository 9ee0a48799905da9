//! Graph learning on wave signals.
//!
//! Node features are propagated over the graph by a discrete wave equation
//! ([`encoder`]); each vertex's resulting time series is then read by a
//! trainable recurrent decoder ([`decoder`]). The [`spectral`] module holds
//! dense eigendecomposition oracles used to verify the encoder and the
//! expressivity properties of the model on small graphs.

pub mod error;
pub mod linalg;
pub mod par;

pub mod encoder;
pub mod graph;
pub mod operator;
pub mod spectral;
pub mod decoder;
pub mod train;
pub mod data;
pub mod analysis;
pub mod audio;

pub use error::{Error, Result};
pub use linalg::Mat;
