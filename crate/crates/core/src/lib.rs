//! Embedding unmasking toolkit core.
//!
//! A small fully connected network ([`model::EumParams`]) maps masked face
//! embeddings toward the unmasked embedding of the same identity. It is
//! trained with either the plain triplet loss or the self-restrained triplet
//! loss ([`loss`]), and its effect is measured with biometric verification
//! metrics ([`metrics`]).
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the command
//! line and threading live in the `eum` crate.

#![no_std]

extern crate alloc;

pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod record;
pub mod rng;
pub mod synth;
pub mod trainer;
pub mod vector;

pub use error::{Error, Result};
pub use loss::{Branch, DistanceTriple, LossKind, LossResult};
pub use matrix::Matrix;
pub use metrics::{ApplyTo, ScoreSet, VerificationReport};
pub use model::{EumParams, ForwardCache, ParamGrads};
pub use record::{EmbeddingRecord, Split};
pub use rng::CounterRng;
pub use synth::{PhenomenonReport, SynthSpec};
pub use trainer::{TrainConfig, TrainHistory, TripletBatch};
pub use vector::UnitVector;
