//! Byte-renormalized rANS with a 64-bit state.
//!
//! The state lives in `[L, 2⁸·L)` with `L = 2³¹`. Encoding pushes bytes onto
//! a stack and decoding pops them, so decode is the exact inverse of encode
//! in both directions.

use alloc::format;
use alloc::vec::Vec;

use super::quantize::{QuantizedModel, PRECISION_BITS};
use crate::error::{Error, Result};

pub const STATE_LOWER: u64 = 1 << 31;
/// Bytes used to flush the final state.
pub const STATE_BYTES: usize = 5;

/// Coder state plus its byte stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RansCodec {
    state: u64,
    stack: Vec<u8>,
    /// Zero bytes supplied because a padded decode ran past the stack.
    pads: usize,
}

impl Default for RansCodec {
    fn default() -> Self {
        Self::new()
    }
}

impl RansCodec {
    pub fn new() -> Self {
        Self { state: STATE_LOWER, stack: Vec::new(), pads: 0 }
    }

    /// Codec at the initial state over an existing byte stack (popped from
    /// the end).
    pub fn with_stack(stack: Vec<u8>) -> Self {
        Self { state: STATE_LOWER, stack, pads: 0 }
    }

    /// Parses `stack ++ state` as produced by [`Self::into_payload`]. An
    /// empty payload is the initial state.
    pub fn from_payload(bytes: &[u8]) -> Result<Self> {
        if bytes.is_empty() {
            return Ok(Self::new());
        }
        if bytes.len() < STATE_BYTES {
            return Err(Error::Corrupt(format!("payload of {} bytes is shorter than the state", bytes.len())));
        }
        let (stack, tail) = bytes.split_at(bytes.len() - STATE_BYTES);
        let mut le = [0u8; 8];
        le[..STATE_BYTES].copy_from_slice(tail);
        let state = u64::from_le_bytes(le);
        if !(STATE_LOWER..STATE_LOWER << 8).contains(&state) {
            return Err(Error::Corrupt(format!("state {state:#x} out of range")));
        }
        Ok(Self { state, stack: stack.to_vec(), pads: 0 })
    }

    /// `stack ++ state`, or nothing for a codec at its initial state.
    pub fn into_payload(self) -> Vec<u8> {
        let mut out = self.stack;
        if self.state == STATE_LOWER && out.is_empty() {
            return out;
        }
        out.extend_from_slice(&self.state.to_le_bytes()[..STATE_BYTES]);
        out
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn stack(&self) -> &[u8] {
        &self.stack
    }

    pub fn into_stack(self) -> Vec<u8> {
        self.stack
    }

    pub fn pads(&self) -> usize {
        self.pads
    }

    /// Total information held, in bits: the stack plus `log₂` of the state.
    pub fn content_bits(&self) -> f64 {
        8.0 * self.stack.len() as f64 + libm::log2(self.state as f64)
    }

    pub fn encode(&mut self, symbol: i32, model: &QuantizedModel) -> Result<()> {
        let (start, freq) = model.interval(symbol)?;
        let (start, freq) = (start as u64, freq as u64);
        let x_max = ((STATE_LOWER >> PRECISION_BITS) << 8) * freq;
        let mut x = self.state;
        while x >= x_max {
            self.stack.push(x as u8);
            x >>= 8;
        }
        self.state = ((x / freq) << PRECISION_BITS) + (x % freq) + start;
        Ok(())
    }

    fn advance(&mut self, model: &QuantizedModel) -> i32 {
        let slot = (self.state & ((1 << PRECISION_BITS) - 1)) as u32;
        let (symbol, start, freq) = model.lookup(slot);
        self.state = freq as u64 * (self.state >> PRECISION_BITS) + slot as u64 - start as u64;
        symbol
    }

    /// Pops one symbol; fails if the stack runs out.
    pub fn decode(&mut self, model: &QuantizedModel) -> Result<i32> {
        let symbol = self.advance(model);
        while self.state < STATE_LOWER {
            let b = self.stack.pop().ok_or_else(|| Error::Corrupt("truncated rANS stream".into()))?;
            self.state = (self.state << 8) | b as u64;
        }
        Ok(symbol)
    }

    /// Pops one symbol, reading zero bytes once the stack is exhausted.
    pub fn decode_padded(&mut self, model: &QuantizedModel) -> i32 {
        let symbol = self.advance(model);
        while self.state < STATE_LOWER {
            let b = self.pop_padded();
            self.state = (self.state << 8) | b as u64;
        }
        symbol
    }

    /// Pops one raw byte, or a counted zero if the stack is empty.
    pub fn pop_padded(&mut self) -> u8 {
        match self.stack.pop() {
            Some(b) => b,
            None => {
                self.pads += 1;
                0
            }
        }
    }

    pub fn push_byte(&mut self, b: u8) {
        self.stack.push(b);
    }

    /// Replaces the state; used to seed the state from side information.
    pub fn set_state(&mut self, state: u64) -> Result<()> {
        if !(STATE_LOWER..STATE_LOWER << 8).contains(&state) {
            return Err(Error::Protocol(format!("state {state:#x} out of range")));
        }
        self.state = state;
        Ok(())
    }
}

/// Codes `symbols[i]` under `models[i]` so that [`rans_decode`] returns
/// them in the same order.
pub fn rans_encode(symbols: &[i32], models: &[&QuantizedModel]) -> Result<Vec<u8>> {
    if symbols.len() != models.len() {
        return Err(Error::InvalidArgument(format!("{} symbols, {} models", symbols.len(), models.len())));
    }
    let mut codec = RansCodec::new();
    for (&s, m) in symbols.iter().zip(models).rev() {
        codec.encode(s, m)?;
    }
    Ok(codec.into_payload())
}

/// Inverse of [`rans_encode`]; the payload must be consumed exactly.
pub fn rans_decode(bytes: &[u8], models: &[&QuantizedModel]) -> Result<Vec<i32>> {
    let mut codec = RansCodec::from_payload(bytes)?;
    let out = models.iter().map(|m| codec.decode(m)).collect::<Result<Vec<_>>>()?;
    if codec.state != STATE_LOWER || !codec.stack.is_empty() {
        return Err(Error::Corrupt("trailing data after the last symbol".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_sequence_is_empty_payload() {
        let bytes = rans_encode(&[], &[]).unwrap();
        assert!(bytes.is_empty());
        assert_eq!(rans_decode(&bytes, &[]).unwrap(), Vec::<i32>::new());
    }

    #[test]
    fn out_of_support_is_rejected() {
        let q = QuantizedModel::gaussian(0.0, 1.0).unwrap();
        assert!(matches!(rans_encode(&[17], &[&q]), Err(Error::OutOfSupport { .. })));
    }

    #[test]
    fn truncated_stream_is_an_error() {
        let q = QuantizedModel::gaussian(0.0, 3.0).unwrap();
        let syms: Vec<i32> = (0..200).map(|i| (i % 7) - 3).collect();
        let models = vec![&q; syms.len()];
        let bytes = rans_encode(&syms, &models).unwrap();
        assert!(rans_decode(&bytes[3..], &models).is_err());
        assert!(rans_decode(&bytes[..bytes.len() - 1], &models).is_err());
    }

    #[test]
    fn decode_then_encode_restores_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let side: Vec<u8> = (0..300).map(|_| rng.random()).collect();
        let models: Vec<QuantizedModel> =
            (0..120).map(|i| QuantizedModel::gaussian(i as f64 * 0.1 - 3.0, 0.5 + (i % 5) as f64).unwrap()).collect();
        let mut codec = RansCodec::with_stack(side.clone());
        let syms: Vec<i32> = models.iter().map(|m| codec.decode(m).unwrap()).collect();
        for (s, m) in syms.iter().zip(&models).rev() {
            codec.encode(*s, m).unwrap();
        }
        assert_eq!(codec.state(), STATE_LOWER);
        assert_eq!(codec.stack(), side.as_slice());
    }

    proptest! {
        #[test]
        fn round_trip(seed in any::<u64>(), n in 0usize..400) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let models: Vec<QuantizedModel> = (0..n)
                .map(|_| QuantizedModel::gaussian(rng.random_range(-50.0..50.0), libm::exp(rng.random_range(-3.0..4.0))).unwrap())
                .collect();
            let syms: Vec<i32> = models
                .iter()
                .map(|m| {
                    let (lo, hi) = m.support();
                    rng.random_range(lo..=hi)
                })
                .collect();
            let refs: Vec<&QuantizedModel> = models.iter().collect();
            let bytes = rans_encode(&syms, &refs).unwrap();
            prop_assert_eq!(rans_decode(&bytes, &refs).unwrap(), syms);
        }
    }
}
