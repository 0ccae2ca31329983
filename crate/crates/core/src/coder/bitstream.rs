use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SGAC";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Standard = 0,
    BitsBack = 1,
}

/// Compressed file.
///
/// Layout (little-endian): magic, version `u8`, mode `u8`, width `u16`,
/// height `u16`, model hash `u64`, λ index `u8`, then in bits-back mode
/// the side-information length in bytes `u32` and the replayed refinement
/// step count `u32`, then payload length `u32` and the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub mode: Mode,
    /// True image size before padding.
    pub width: u16,
    pub height: u16,
    pub model_hash: u64,
    pub lambda_index: u8,
    /// Bits-back only: number of side-information bytes carried.
    pub side_info_len: u32,
    /// Bits-back only: steps of the replayed hyperlatent refinement.
    pub bbvi_steps: u32,
    pub payload: Vec<u8>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Corrupt(format!("bitstream truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }
}

impl Bitstream {
    pub fn header_len(mode: Mode) -> usize {
        4 + 1 + 1 + 2 + 2 + 8 + 1 + if mode == Mode::BitsBack { 8 } else { 0 } + 4
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::header_len(self.mode) + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.mode as u8);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.model_hash.to_le_bytes());
        out.push(self.lambda_index);
        if self.mode == Mode::BitsBack {
            out.extend_from_slice(&self.side_info_len.to_le_bytes());
            out.extend_from_slice(&self.bbvi_steps.to_le_bytes());
        }
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Corrupt("bad magic".into()));
        }
        let version = r.array::<1>()?[0];
        if version != VERSION {
            return Err(Error::Corrupt(format!("unsupported version {version}")));
        }
        let mode = match r.array::<1>()?[0] {
            0 => Mode::Standard,
            1 => Mode::BitsBack,
            m => return Err(Error::Corrupt(format!("unknown mode {m}"))),
        };
        let width = u16::from_le_bytes(r.array()?);
        let height = u16::from_le_bytes(r.array()?);
        let model_hash = u64::from_le_bytes(r.array()?);
        let lambda_index = r.array::<1>()?[0];
        let (side_info_len, bbvi_steps) = if mode == Mode::BitsBack {
            (u32::from_le_bytes(r.array()?), u32::from_le_bytes(r.array()?))
        } else {
            (0, 0)
        };
        let len = u32::from_le_bytes(r.array()?) as usize;
        let payload = r.take(len)?.to_vec();
        if r.pos != bytes.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if width == 0 || height == 0 {
            return Err(Error::Corrupt("zero image size".into()));
        }
        Ok(Self { mode, width, height, model_hash, lambda_index, side_info_len, bbvi_steps, payload })
    }

    /// Total file size in bits.
    pub fn total_bits(&self) -> usize {
        8 * (Self::header_len(self.mode) + self.payload.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn round_trip_and_rejections() {
        for mode in [Mode::Standard, Mode::BitsBack] {
            let b = Bitstream {
                mode,
                width: 30,
                height: 17,
                model_hash: 0x0123_4567_89ab_cdef,
                lambda_index: 2,
                side_info_len: if mode == Mode::BitsBack { 64 } else { 0 },
                bbvi_steps: if mode == Mode::BitsBack { 2000 } else { 0 },
                payload: vec![1, 2, 3, 250],
            };
            let bytes = b.to_bytes();
            assert_eq!(bytes.len(), Bitstream::header_len(mode) + 4);
            assert_eq!(&bytes[..4], b"SGAC");
            assert_eq!(Bitstream::from_bytes(&bytes).unwrap(), b);
            assert!(Bitstream::from_bytes(&bytes[..bytes.len() - 1]).is_err());
            let mut extra = bytes.clone();
            extra.push(0);
            assert!(Bitstream::from_bytes(&extra).is_err());
            let mut bad = bytes.clone();
            bad[0] = b'X';
            assert!(Bitstream::from_bytes(&bad).is_err());
        }
    }
}
