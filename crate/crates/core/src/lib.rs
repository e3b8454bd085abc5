//! Deterministic simulator for privacy-preserving cross-cloud federated
//! learning.
//!
//! The crate is organised by subsystem:
//!
//! - [`model`]: logistic / one-hidden-layer MLP models, loss, backprop and
//!   mini-batch SGD.
//! - [`features`]: frozen, seeded random-Fourier feature extractor used as the
//!   shared context-feature front-end.
//! - [`paillier`]: Paillier cryptosystem, fixed-point codec and encrypted
//!   weighted aggregation.
//! - [`privacy`]: DP-FL (clipping + Gaussian noise), SMC-FL (additive secret
//!   sharing over a prime field) and a loss-threshold membership attack.
//! - [`federation`]: round state machine for the five aggregation strategies
//!   and cross-cloud migration with fine-tuning.
//! - [`data`]: synthetic generators, CSV ingestion and shard partitioning.
//! - [`harness`]: experiment configuration, sweeps and CSV metrics.

pub mod data;
pub mod error;
pub mod features;
pub mod federation;
pub mod harness;
pub mod model;
pub mod paillier;
pub mod privacy;
pub mod rng;

pub use error::{Error, Result};
