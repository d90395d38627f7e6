//! Text classification with bags of super word embeddings.
//!
//! Word vectors are quantized with k-means into a vocabulary of centroids
//! (one shared vocabulary or one per class), documents become histograms of
//! nearest-centroid counts, and kernel SVMs over those histograms classify
//! them.

pub mod artifact;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod features;
pub mod kernels;
pub mod matrix;
pub mod pipeline;
pub mod quantizer;
pub mod reproduce;
pub mod svm;
pub mod synthetic;

pub use error::{Error, Result};
