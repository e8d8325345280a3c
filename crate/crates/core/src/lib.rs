//! Hierarchical temporal shuffle reconstruction for self-supervised sound
//! event detection, at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: tensors and a reverse-mode tape
//! - [`features`]: waveform normalization and log-mel extraction
//! - [`perturb`]: block/frame shuffles, block flips and noise injection
//! - [`model`]: convolutional encoder, relative-position transformer, heads
//! - [`training`]: losses, augmentations, mean teacher and stage schedule
//! - [`evaluation`]: post-processing, intersection matching and PSDS
//! - [`datagen`]: the synthetic ten-class dataset
//! - [`pipeline`]: on-disk run directories tying the stages together

pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod model;
pub mod numerics;
pub mod perturb;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
