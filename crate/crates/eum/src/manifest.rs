//! Run manifests: everything needed to repeat a command byte-for-byte.
//!
//! Output locations are deliberately left out, so a rerun into another
//! directory produces an identical manifest.

use std::path::PathBuf;

use eum_core::{SynthSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::experiment::{Apply, Setting};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Run {
    GenData { spec: SynthSpec },
    Train { data: PathBuf, config: TrainConfig },
    Eval { data: PathBuf, model: Option<PathBuf>, setting: Setting, apply_to: Apply },
    Compare { data: PathBuf, triplet: TrainConfig, srt: TrainConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    #[serde(flatten)]
    pub run: Run,
}

impl Manifest {
    pub fn new(run: Run) -> Self {
        Self { tool: concat!("eum ", env!("CARGO_PKG_VERSION")).to_string(), run }
    }
}
