//! EUM checkpoints.
//!
//! ```text
//! "EUM1" | u32 version = 1 | u32 d | f64 slope | f64 epsilon | f64 momentum
//! 4 × ( W[d×d] row-major out×in | b | gamma | beta | running_mean | running_var ), all f32
//! ```

use std::fs;
use std::path::Path;

use eum_core::model::{EumParams, Layer};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: [u8; 4] = *b"EUM1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 36;

pub fn encoded_len(d: usize) -> usize {
    HEADER_LEN + eum_core::model::NUM_LAYERS * 4 * (d * d + 5 * d)
}

pub fn encode(params: &EumParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(params.dim));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.dim as u32).to_le_bytes());
    for h in [params.leaky_slope, params.bn_epsilon, params.bn_momentum] {
        out.extend_from_slice(&h.to_le_bytes());
    }
    for l in &params.layers {
        for array in [&l.weight, &l.bias, &l.gamma, &l.beta, &l.running_mean, &l.running_var] {
            for &x in array.iter() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let chunk = self.bytes.get(self.at..self.at + N).ok_or(Error::CorruptRecord { offset: self.at as u64 })?;
        self.at += N;
        Ok(chunk.try_into().expect("length checked"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn f32_array(&mut self, n: usize) -> Result<Vec<f64>> {
        let start = self.at;
        let v = (0..n).map(|_| self.take::<4>().map(|b| f32::from_le_bytes(b) as f64)).collect::<Result<Vec<_>>>()?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::CorruptRecord { offset: start as u64 });
        }
        Ok(v)
    }
}

pub fn decode(bytes: &[u8]) -> Result<EumParams> {
    let mut c = Cursor { bytes, at: 0 };
    let found: [u8; 4] = c.take()?;
    if found != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found });
    }
    let version = u32::from_le_bytes(c.take()?);
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let d = u32::from_le_bytes(c.take()?) as usize;
    if d == 0 {
        return Err(Error::CorruptRecord { offset: 8 });
    }
    let (leaky_slope, bn_epsilon, bn_momentum) = (c.f64()?, c.f64()?, c.f64()?);
    if !(leaky_slope.is_finite() && bn_epsilon > 0.0 && (0.0..1.0).contains(&bn_momentum)) {
        return Err(Error::CorruptRecord { offset: 12 });
    }
    let mut layer = || -> Result<Layer> {
        Ok(Layer {
            weight: c.f32_array(d * d)?,
            bias: c.f32_array(d)?,
            gamma: c.f32_array(d)?,
            beta: c.f32_array(d)?,
            running_mean: c.f32_array(d)?,
            running_var: c.f32_array(d)?,
        })
    };
    let layers = [layer()?, layer()?, layer()?, layer()?];
    if c.at != bytes.len() {
        return Err(Error::CorruptRecord { offset: c.at as u64 });
    }
    Ok(EumParams { dim: d, leaky_slope, bn_epsilon, bn_momentum, layers })
}

pub fn write_checkpoint(path: &Path, params: &EumParams) -> Result<()> {
    fs::write(path, encode(params)).at(path)
}

pub fn read_checkpoint(path: &Path) -> Result<EumParams> {
    decode(&fs::read(path).at(path)?)
}

/// Rounds every array to `f32`, matching what a checkpoint round-trip stores.
pub fn quantize(params: &mut EumParams) {
    for l in &mut params.layers {
        for array in [&mut l.weight, &mut l.bias, &mut l.gamma, &mut l.beta, &mut l.running_mean, &mut l.running_var] {
            array.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }
}

pub fn ensure_dim(params: &EumParams, dim: usize) -> Result<()> {
    if params.dim != dim {
        return Err(Error::DimensionMismatch { expected: params.dim, found: dim });
    }
    Ok(())
}
