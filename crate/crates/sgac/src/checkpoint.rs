//! Model checkpoint files.
//!
//! Layout (little-endian): magic `SGCK`, version `u8`, the model
//! configuration (eight `u32` sizes, leaky slope `f64`, λ `f64`, bits-back
//! flag `u8`), training steps `u64`, tensor count `u32`, then per tensor
//! its rank `u8`, dimensions `u32` and values `f64`, and finally the model
//! hash `u64`, which is checked on load.

use std::path::Path;

use sgac_core::model::{ModelConfig, ModelParams};
use sgac_core::numcore::Tensor;

use crate::error::{read, write_atomic, Error, Result};

pub const MAGIC: [u8; 4] = *b"SGCK";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Optimizer steps taken since initialization.
    pub steps: u64,
}

impl Checkpoint {
    pub fn model_hash(&self) -> u64 {
        self.params.fingerprint()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.params.config;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        for v in [
            c.image_channels,
            c.hidden_channels,
            c.latent_channels,
            c.hyper_hidden_channels,
            c.hyperlatent_channels,
            c.kernel,
            c.hyper_kernel,
            c.density_width,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.leaky_slope.to_le_bytes());
        out.extend_from_slice(&c.lambda.to_le_bytes());
        out.push(c.bits_back as u8);
        out.extend_from_slice(&self.steps.to_le_bytes());
        let tensors = self.params.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.model_hash().to_le_bytes());
        out
    }

    /// Parses a checkpoint; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |d: &str| Error::format(path, format!("not a valid checkpoint: {d}"));
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated"))? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u8().ok_or_else(|| bad("truncated"))?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let parse = |r: &mut Cursor| -> Option<(ModelConfig, u64, Vec<Tensor>)> {
            let mut sizes = [0usize; 8];
            for s in &mut sizes {
                *s = r.u32()? as usize;
            }
            let config = ModelConfig {
                image_channels: sizes[0],
                hidden_channels: sizes[1],
                latent_channels: sizes[2],
                hyper_hidden_channels: sizes[3],
                hyperlatent_channels: sizes[4],
                kernel: sizes[5],
                hyper_kernel: sizes[6],
                density_width: sizes[7],
                leaky_slope: r.f64()?,
                lambda: r.f64()?,
                bits_back: r.u8()? != 0,
            };
            let steps = r.u64()?;
            let count = r.u32()? as usize;
            let mut tensors = Vec::new();
            for _ in 0..count {
                let rank = r.u8()? as usize;
                let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Option<_>>()?;
                let len = shape.iter().product::<usize>();
                if len > r.remaining() / 8 {
                    return None;
                }
                let data = (0..len).map(|_| r.f64()).collect::<Option<Vec<_>>>()?;
                tensors.push(Tensor::new(shape, data).ok()?);
            }
            Some((config, steps, tensors))
        };
        let (config, steps, tensors) = parse(&mut r).ok_or_else(|| bad("truncated"))?;
        let stored = r.u64().ok_or_else(|| bad("truncated"))?;
        if r.remaining() != 0 {
            return Err(bad("trailing bytes"));
        }
        let params = ModelParams::from_tensors(config, tensors).map_err(|e| bad(&e.to_string()))?;
        let ckpt = Self { params, steps };
        if ckpt.model_hash() != stored {
            return Err(bad("model hash does not match the stored weights"));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read(path)?, path)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N)?.try_into().ok()
    }

    fn u8(&mut self) -> Option<u8> {
        Some(self.take(1)?[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Option<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Option<f64> {
        self.array().map(f64::from_le_bytes)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(bits_back: bool) -> Checkpoint {
        let config = ModelConfig { bits_back, lambda: 0.05, ..ModelConfig::default() };
        Checkpoint { params: ModelParams::init(config, 11).unwrap(), steps: 42 }
    }

    #[test]
    fn bytes_round_trip() {
        for bb in [false, true] {
            let c = sample(bb);
            let back = Checkpoint::from_bytes(&c.to_bytes(), Path::new("x")).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.model_hash(), c.model_hash());
        }
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample(false).to_bytes();
        let p = Path::new("x");
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..10], p).is_err());
        let mut flipped = bytes.clone();
        flipped[200] ^= 1;
        assert!(Checkpoint::from_bytes(&flipped, p).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&magic, p).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra, p).is_err());
    }
}
