//! Polar transform, bit-reversal permutation and code definitions.
//!
//! Positions are one-based (`1..=N`) in every public set type, matching the
//! usual synthetic-channel numbering `W_N^(i)`. Serialized formats switch to
//! zero-based indices and say so where they do.

use std::ops::{BitXor, Deref};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A vector of binary symbols stored one per byte (`0` or `1`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitVector(Vec<u8>);

impl BitVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return invalid("bit vector must be non-empty");
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return invalid(format!("bit vector contains non-binary symbol {b}"));
        }
        Ok(Self(bits))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }
}

impl Deref for BitVector {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.0
    }
}

impl BitXor for &BitVector {
    type Output = BitVector;

    fn bitxor(self, rhs: &BitVector) -> BitVector {
        assert_eq!(self.len(), rhs.len(), "xor of unequal lengths");
        BitVector(self.iter().zip(rhs.iter()).map(|(a, b)| a ^ b).collect())
    }
}

/// Returns `log2(len)` if `len` is a power of two.
pub fn log2_exact(len: usize) -> Result<u32> {
    if len == 0 || !len.is_power_of_two() {
        return invalid(format!("length {len} is not a power of two"));
    }
    Ok(len.trailing_zeros())
}

#[inline]
pub(crate) fn bit_reverse(i: usize, n: u32) -> usize {
    if n == 0 {
        0
    } else {
        i.reverse_bits() >> (usize::BITS - n)
    }
}

/// Bit-reversal permutation on `1..=2^n`, one-based.
pub fn bit_reversal_permutation(n: u32) -> Result<Vec<usize>> {
    if n == 0 {
        return invalid("bit reversal needs n >= 1");
    }
    if n >= usize::BITS {
        return invalid(format!("n = {n} is too large"));
    }
    Ok((0..1usize << n).map(|i| bit_reverse(i, n) + 1).collect())
}

/// In-place `x = u · F^{⊗n}` over GF(2) (no permutation).
pub(crate) fn butterfly_in_place(bits: &mut [u8]) {
    let len = bits.len();
    let mut half = 1;
    while half < len {
        for block in bits.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter()) {
                *a ^= *b;
            }
        }
        half *= 2;
    }
}

/// Computes `x = u · G_N` with `G_N = F^{⊗n} B_N`. The map is an involution.
pub fn polar_transform(u: &[u8]) -> Result<BitVector> {
    let mut scratch = u.to_vec();
    let mut out = vec![0u8; u.len()];
    encode_into(u, &mut scratch, &mut out)?;
    Ok(BitVector(out))
}

/// Allocation-free [`polar_transform`]; `scratch` and `out` must have the
/// length of `u`.
pub fn encode_into(u: &[u8], scratch: &mut [u8], out: &mut [u8]) -> Result<()> {
    let n = log2_exact(u.len())?;
    if scratch.len() != u.len() || out.len() != u.len() {
        return invalid("encode buffers must match the input length");
    }
    scratch.copy_from_slice(u);
    butterfly_in_place(scratch);
    for (i, &b) in scratch.iter().enumerate() {
        out[bit_reverse(i, n)] = b;
    }
    Ok(())
}

/// Block length, frozen/information partition and the threshold that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeConfig {
    n: u32,
    frozen: Vec<usize>,
    info: Vec<usize>,
    threshold: f64,
    #[serde(skip)]
    frozen_mask: Vec<bool>,
}

impl CodeConfig {
    /// Builds a code of length `2^n` from its one-based information set.
    pub fn from_info_set(n: u32, info: &[usize], threshold: f64) -> Result<Self> {
        if n == 0 || n > 24 {
            return invalid(format!("n = {n} outside 1..=24"));
        }
        if !(threshold > 0.0 && threshold <= 1.0) {
            return invalid(format!("threshold {threshold} outside (0, 1]"));
        }
        let len = 1usize << n;
        let mut frozen_mask = vec![true; len];
        let mut prev = 0;
        for &i in info {
            if i <= prev || i > len {
                return invalid(format!(
                    "information set must be strictly ascending within 1..={len} (saw {i})"
                ));
            }
            frozen_mask[i - 1] = false;
            prev = i;
        }
        let frozen = (1..=len).filter(|&i| frozen_mask[i - 1]).collect();
        Ok(Self { n, frozen, info: info.to_vec(), threshold, frozen_mask })
    }

    /// A code with every position carrying information.
    pub fn all_information(n: u32) -> Result<Self> {
        let len = 1usize << n.min(24);
        let info: Vec<usize> = (1..=len).collect();
        Self::from_info_set(n, &info, 1.0)
    }

    /// Rebuilds the lookup mask after deserialization.
    pub fn validated(self) -> Result<Self> {
        Self::from_info_set(self.n, &self.info, self.threshold)
    }

    pub fn block_len(&self) -> usize {
        1 << self.n
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    /// Number of information bits `K`.
    pub fn k(&self) -> usize {
        self.info.len()
    }

    pub fn frozen_set(&self) -> &[usize] {
        &self.frozen
    }

    pub fn info_set(&self) -> &[usize] {
        &self.info
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Zero-based frozen lookup.
    #[inline]
    pub fn is_frozen0(&self, i: usize) -> bool {
        self.frozen_mask[i]
    }

    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.block_len() as f64
    }
}

/// Places `payload` on the information positions (ascending) and zeros on
/// the frozen ones.
pub fn assemble_u(config: &CodeConfig, payload: &[u8]) -> Result<BitVector> {
    if payload.len() != config.k() {
        return invalid(format!(
            "payload length {} does not match K = {}",
            payload.len(),
            config.k()
        ));
    }
    let mut u = vec![0u8; config.block_len()];
    for (&i, &b) in config.info_set().iter().zip(payload) {
        if b > 1 {
            return invalid("payload contains a non-binary symbol");
        }
        u[i - 1] = b;
    }
    Ok(BitVector(u))
}

/// Reads the information positions of `u` back out.
pub fn extract_payload(config: &CodeConfig, u: &[u8]) -> Vec<u8> {
    config.info_set().iter().map(|&i| u[i - 1]).collect()
}
