//! Deterministic simulator of personalized decentralized multi-task
//! learning over a dynamic communication graph.
//!
//! Clients train a shared encoder plus a private head. Each epoch they
//! estimate how much one task's encoder gradient helps or hurts every other
//! task (the transference matrix), spectral-cluster that evidence into
//! groups of mutually beneficial tasks, and gossip-average their encoders
//! over the resulting doubly-stochastic mixing matrix.
//!
//! Modules:
//! - [`linalg`]: dense matrices and the Cholesky factorization.
//! - [`nn`]: MLP forward/backward, cross-entropy, Adam.
//! - [`datagen`]: the synthetic Gaussian multi-attribute dataset.
//! - [`transference`]: exact and gradient-inner-product transference.
//! - [`topology`]: Laplacian spectral clustering into mixing matrices.
//! - [`trainer`]: the full training loop and its metrics.

pub mod datagen;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod seeds;
pub mod topology;
pub mod trainer;
pub mod transference;

pub use error::{Error, Result};
pub use linalg::DenseMatrix;
pub use nn::{Activation, AdamState, ClientModel, MlpNetwork};
pub use topology::{MixingMatrix, SimilarityMatrix, SpectralReport};
pub use trainer::{RunConfig, RunMetrics, TopologyMode};
pub use transference::TransferenceMatrix;
