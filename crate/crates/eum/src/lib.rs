//! File formats, experiment drivers and the `eum` command line built on
//! [`eum_core`].
//!
//! Embeddings are stored in a little-endian binary format ([`embeddings`])
//! or as CSV; trained models in a small checkpoint format ([`checkpoint`]).
//! Every command writes a [`manifest`] that reproduces its outputs exactly.

pub mod checkpoint;
pub mod cli;
pub mod embeddings;
pub mod error;
pub mod experiment;
pub mod manifest;
pub mod output;
pub mod scoring;

pub use error::{Error, Result};
