use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Dataset partition a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train = 0,
    Val = 1,
    EvalRef = 2,
    EvalProbe = 3,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::EvalRef, Split::EvalProbe];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::EvalRef => "eval_ref",
            Split::EvalProbe => "eval_probe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|sp| sp.name() == s)
    }
}

/// One identity-tagged face embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub identity: u32,
    pub sample: u32,
    pub masked: bool,
    pub split: Split,
    pub vector: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Stacks record vectors into a matrix, checking they all have dimension `dim`.
pub fn stack<'a, I>(dim: usize, records: I) -> Result<Matrix>
where
    I: IntoIterator<Item = &'a EmbeddingRecord>,
{
    let mut data = Vec::new();
    let mut n = 0;
    for r in records {
        if r.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: r.dim() });
        }
        data.extend_from_slice(&r.vector);
        n += 1;
    }
    Matrix::from_vec(n, dim, data)
}

/// Records of one split, in original order.
pub fn in_split(records: &[EmbeddingRecord], split: Split) -> Vec<&EmbeddingRecord> {
    records.iter().filter(|r| r.split == split).collect()
}
