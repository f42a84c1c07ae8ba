//! Network-embedding based rating prediction.
//!
//! The pipeline: load a typed graph and its schema, generate meta-path
//! guided random walks, learn one skip-gram embedding per meta-path, fuse
//! the per-path embeddings with a learnable fusion function, and train an
//! extended matrix-factorization predictor that pairs the fused embeddings
//! with free latent factors. An evaluation harness covers train/test
//! splitting, MAE/RMSE, cold-start cohorts, meta-path ablations and
//! hyperparameter sweeps.

mod error;

pub mod embed;
pub mod eval;
pub mod fusion;
pub mod hash;
pub mod hin;
pub mod pipeline;
pub mod recommend;
pub mod rng;
pub mod synth;
pub mod walk;

pub use error::{Error, Result};
