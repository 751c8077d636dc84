//! Contrastive alignment of music (symbolic scores and audio features) with
//! text in one shared embedding space.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: metadata records, text composition, splits and synthetic data
//! - [`symbolic`]: ABC / MTF patch segmentation with input limits
//! - [`audiofeat`]: precomputed clip feature aggregation and `.cmf` files
//! - [`nn`]: dense math, reverse-mode autodiff, the patch transformer encoder,
//!   AdamW and the warm-up schedule
//! - [`align`]: the InfoNCE objective, stage plans and the multi-stage trainer
//! - [`eval`]: embedding stores, MRR, cosine statistics, linear probes and PCA
//! - [`cli`]: configuration and subcommand dispatch for the `clamp-kit` binary

pub mod align;
pub mod audiofeat;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod symbolic;

pub use error::{Error, Result};
