//! Inference-time attention head masking for encoder-decoder transformers.
//!
//! The crate bundles a small from-scratch transformer, its trainer, greedy
//! and beam decoding, ROUGE scoring, oracle and tagger-predicted saliency
//! labels, and the head-level analyses built on top of them: per-head
//! content-selection effects, multi-head synergy, attention focus tallies and
//! greedy head selection.

pub mod analysis;
pub mod checkpoint;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod model;
mod par;
pub mod pipeline;
pub mod rouge;
pub mod saliency;
pub mod selection;
pub mod tensor;
pub mod text;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
