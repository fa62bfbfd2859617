//! Line segment detection with transformers over learnable line entities.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors and a reverse-mode autodiff tape.
//! - [`nn`]: multi-head attention, post-norm encoder/decoder layers and 2-D
//!   sinusoidal positional encoding.
//! - [`model`]: the two-scale backbone, coarse and fine transformer stages,
//!   line entities, shared prediction heads and checkpoints.
//! - [`matching`]: endpoint distance, matching cost and an exact Hungarian
//!   solver.
//! - [`loss`]: focal-style classification, endpoint distance and the
//!   deep-supervised total loss.
//! - [`metrics`]: structural AP / F-score, heatmap AP / F-score and PR curves.
//! - [`data`]: synthetic line scenes, augmentation and dataset IO.
//! - [`train`]: optimiser, two-stage training loop, evaluation driver and CLI.
//!
//! Runnable walkthroughs for each capability live in `examples/`; run them
//! with `cargo run --release --example <name>`.

pub mod data;
pub mod error;
pub mod geometry;
pub mod loss;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{LineSegment, ScoredSegment};
pub use tensor::{Tape, Tensor, Var};
