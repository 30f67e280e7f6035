//! Stress recognition from breathing signals: respiration variability
//! spectrograms, sliding-crop augmentation, clustering of self-reported
//! stress scores into classes, small convolutional and fully connected
//! networks trained from scratch, and leave-one-subject-out evaluation.

pub mod augment;
mod compensated;
pub mod error;
pub mod eval;
pub mod grid;
pub mod labeling;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod signal;
pub mod spectrogram;
pub mod synth;

pub use error::{Error, Result};
