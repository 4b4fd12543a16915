//! cskr: a consistency-model training and one-step sampling toolkit.
//!
//! The library trains a small denoiser under a consistency constraint on
//! desk-scale synthetic conditional tasks and restores samples in a single
//! network evaluation. Three generator versions are provided: restoration
//! from pure Gaussian noise at the trajectory endpoint, restoration from a
//! condition-only prior noised to a KL-derived level `k`, and restoration
//! from a scorer-selected optimal level `op`. A Fréchet distance between
//! Gaussians fitted to fixed feature projections serves as the quality score.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod nnet;
pub mod prior;
pub mod sampler;
pub mod schedule;
pub mod scorer;
pub mod seeds;
pub mod trainer;

pub use error::{Error, Result};
