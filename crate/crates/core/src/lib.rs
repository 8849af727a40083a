//! Dual-branch endoscopy image classifier.
//!
//! A self-contained CPU training/inference engine for an 8-class endoscopy
//! classifier that combines a shifted-window transformer branch (global view)
//! with a saliency-augmented VGG-style CNN branch (local view), joined by an
//! MLP head. Everything is built on a small reverse-mode autodiff tape with
//! 32-bit storage and 64-bit accumulation, seeded end to end so that runs
//! reproduce bit-exactly.

pub mod checkpoint;
pub mod cnn;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod resize;
pub mod rng;
pub mod saliency;
pub mod swin;
pub mod tensor;

pub use error::{CheckpointError, Error, Result};
pub use rng::Rng;
pub use tensor::{Tape, TensorId};
