//! Layout-aware masked pre-training at desk scale.
//!
//! Documents are segments of words with page boxes. They are serialised in
//! reading order into token sequences carrying local or global 1D positions
//! and word or segment 2D boxes, masked for language and position modelling,
//! and fed to a small transformer encoder built on [`layoutkit_tensor`].

mod error;
pub mod cli;
pub mod config;
pub mod doc;
pub mod eval;
pub mod masking;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod sweep;
pub mod synth;
pub mod tokens;
pub mod train;

pub use error::{Error, Result};
