//! Embedding datasets on disk.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! "EMB1" | u32 version = 1 | u32 d | u64 count
//! count × ( u32 identity | u32 sample | u8 masked | u8 split | f32 × d )
//! ```
//!
//! A CSV form with header `identity,sample,masked,split,e0,…,e{d-1}` is
//! offered for exchange with external pipelines.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use eum_core::{EmbeddingRecord, Split};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// Bytes per record for dimension `d`.
pub fn record_len(d: usize) -> usize {
    10 + 4 * d
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

impl Dataset {
    /// Checks the file invariants: one dimension, unique `(identity, sample, masked)`.
    pub fn new(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(eum_core::Error::InvalidDimension(0).into());
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.vector.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: r.vector.len() });
            }
            if !seen.insert((r.identity, r.sample, r.masked)) {
                return Err(Error::DuplicateRecord { identity: r.identity, sample: r.sample, masked: r.masked });
            }
        }
        Ok(Self { dim, records })
    }

    pub fn from_records(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let dim = records.first().ok_or(eum_core::Error::EmptySet)?.vector.len();
        Self::new(dim, records)
    }
}

pub fn encode(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + data.records.len() * record_len(data.dim));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(data.dim as u32).to_le_bytes());
    out.extend_from_slice(&(data.records.len() as u64).to_le_bytes());
    for r in &data.records {
        out.extend_from_slice(&r.identity.to_le_bytes());
        out.extend_from_slice(&r.sample.to_le_bytes());
        out.push(r.masked as u8);
        out.push(r.split as u8);
        for &x in &r.vector {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 4 {
        return Err(Error::CorruptRecord { offset: 0 });
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptRecord { offset: 0 });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let dim = u32_at(bytes, 8) as usize;
    if dim == 0 {
        return Err(Error::CorruptRecord { offset: 8 });
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let rec = record_len(dim);

    let mut records = Vec::with_capacity((count as usize).min(bytes.len() / rec));
    let mut at = HEADER_LEN;
    for _ in 0..count {
        let corrupt = Error::CorruptRecord { offset: at as u64 };
        let Some(chunk) = bytes.get(at..at + rec) else {
            return Err(corrupt);
        };
        let masked = match chunk[8] {
            0 => false,
            1 => true,
            _ => return Err(corrupt),
        };
        let split = Split::from_u8(chunk[9]).ok_or(Error::CorruptRecord { offset: at as u64 })?;
        let vector: Vec<f64> = chunk[10..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(corrupt);
        }
        records.push(EmbeddingRecord { identity: u32_at(chunk, 0), sample: u32_at(chunk, 4), masked, split, vector });
        at += rec;
    }
    if at != bytes.len() {
        return Err(Error::CorruptRecord { offset: at as u64 });
    }
    Dataset::new(dim, records)
}

pub fn write_embeddings(path: &Path, data: &Dataset) -> Result<()> {
    fs::write(path, encode(data)).at(path)
}

pub fn read_embeddings(path: &Path) -> Result<Dataset> {
    decode(&fs::read(path).at(path)?)
}

pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["identity", "sample", "masked", "split"].map(String::from).to_vec();
    header.extend((0..data.dim).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for r in &data.records {
        let mut row = vec![r.identity.to_string(), r.sample.to_string(), (r.masked as u8).to_string(), r.split.name().to_string()];
        // Shortest round-trip f32 text, so CSV → binary is lossless.
        row.extend(r.vector.iter().map(|&x| (x as f32).to_string()));
        w.write_record(&row)?;
    }
    w.flush().at(path)
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let mut rd = csv::Reader::from_path(path)?;
    let header = rd.headers()?.clone();
    let fixed = ["identity", "sample", "masked", "split"];
    if header.len() <= fixed.len() || header.iter().zip(fixed).any(|(h, f)| h != f) {
        return Err(Error::Usage(format!("{}: expected header identity,sample,masked,split,e0,...", path.display())));
    }
    let dim = header.len() - fixed.len();
    let bad = |line: u64, what: &str| Error::Usage(format!("{}:{line}: invalid {what}", path.display()));
    let mut records = Vec::new();
    for row in rd.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let identity = row[0].parse().map_err(|_| bad(line, "identity"))?;
        let sample = row[1].parse().map_err(|_| bad(line, "sample"))?;
        let masked = match &row[2] {
            "0" | "false" => false,
            "1" | "true" => true,
            _ => return Err(bad(line, "masked flag")),
        };
        let split = Split::parse(&row[3]).ok_or_else(|| bad(line, "split"))?;
        // Coordinates are f32 in both formats, so a CSV load equals the binary one.
        let vector = row
            .iter()
            .skip(fixed.len())
            .map(|v| v.trim().parse::<f32>().ok().filter(|x| x.is_finite()).map(f64::from))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| bad(line, "embedding value"))?;
        records.push(EmbeddingRecord { identity, sample, masked, split, vector });
    }
    Dataset::new(dim, records)
}

/// Reads a dataset by extension: `.csv` as CSV, anything else as binary.
pub fn load(path: &Path) -> Result<Dataset> {
    if is_csv(path) {
        read_csv(path)
    } else {
        read_embeddings(path)
    }
}

pub fn save(path: &Path, data: &Dataset) -> Result<()> {
    if is_csv(path) {
        write_csv(path, data)
    } else {
        write_embeddings(path, data)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Rounds every coordinate to `f32`, as a binary round-trip would.
pub fn quantize(data: &mut Dataset) {
    for r in &mut data.records {
        r.vector.iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
}
