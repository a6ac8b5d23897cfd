//! Desk-scale anomalous sound detection with mixture-retaining encoder pre-training.
//!
//! The crate covers the full pipeline: SNR-exact audio mixing and synthetic
//! corpora ([`audio`]), log-mel features ([`features`]), a small trainable
//! encoder with exact gradients ([`encoder`]), the training objectives
//! ([`losses`]) and loop ([`trainer`]), training-free KNN scoring
//! ([`scoring`]), DCASE-style metrics ([`metrics`]) and the controlled
//! robustness benchmark ([`bench`]).

pub mod audio;
pub mod bench;
pub mod corpus;
pub mod encoder;
pub mod features;
pub mod losses;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod scoring;
pub mod trainer;
