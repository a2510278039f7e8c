//! Binary-input memoryless symmetric channels: BEC, BSC and BPSK-AWGN.
//!
//! Convention: bit 0 maps to +1, positive LLR favours bit 0, LLRs are in
//! natural-log units.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Magnitude standing in for an infinite LLR (unerased BEC symbols).
pub const LLR_SATURATION: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChannelModel {
    Bec { erasure_prob: f64 },
    Bsc { crossover_prob: f64 },
    Biawgn { noise_std: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Bit(u8),
    Erasure,
    Real(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LlrSymbol {
    Finite(f64),
    Erased,
}

impl LlrSymbol {
    /// Decoder-domain value: erasures become exactly 0, finite values are
    /// clamped to the saturation magnitude.
    #[inline]
    pub fn to_decoder_llr(self) -> f64 {
        match self {
            LlrSymbol::Finite(l) => l.clamp(-LLR_SATURATION, LLR_SATURATION),
            LlrSymbol::Erased => 0.0,
        }
    }
}

impl ChannelModel {
    pub fn bec(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return invalid(format!("BEC erasure probability {p} outside [0, 1]"));
        }
        Ok(Self::Bec { erasure_prob: p })
    }

    pub fn bsc(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 0.5) {
            return invalid(format!("BSC crossover probability {p} outside (0, 0.5)"));
        }
        Ok(Self::Bsc { crossover_prob: p })
    }

    pub fn biawgn(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return invalid(format!("noise standard deviation {sigma} must be positive"));
        }
        Ok(Self::Biawgn { noise_std: sigma })
    }

    /// Re-checks parameter ranges, e.g. after deserialization.
    pub fn validate(self) -> Result<Self> {
        match self {
            Self::Bec { erasure_prob } => Self::bec(erasure_prob),
            Self::Bsc { crossover_prob } => Self::bsc(crossover_prob),
            Self::Biawgn { noise_std } => Self::biawgn(noise_std),
        }
    }

    pub fn is_noiseless(&self) -> bool {
        matches!(self, Self::Bec { erasure_prob } if *erasure_prob == 0.0)
    }

    /// Sends one symbol.
    #[inline]
    pub fn transmit_bit<R: Rng + ?Sized>(&self, bit: u8, rng: &mut R) -> Observation {
        match *self {
            Self::Bec { erasure_prob } => {
                if erasure_prob > 0.0 && rng.random::<f64>() < erasure_prob {
                    Observation::Erasure
                } else {
                    Observation::Bit(bit)
                }
            }
            Self::Bsc { crossover_prob } => {
                let flip = rng.random::<f64>() < crossover_prob;
                Observation::Bit(bit ^ u8::from(flip))
            }
            Self::Biawgn { noise_std } => {
                let s = if bit == 0 { 1.0 } else { -1.0 };
                let z: f64 = rng.sample(StandardNormal);
                Observation::Real(s + noise_std * z)
            }
        }
    }

    /// Element-wise channel action on a codeword.
    pub fn transmit<R: Rng + ?Sized>(&self, x: &[u8], rng: &mut R) -> Vec<Observation> {
        x.iter().map(|&b| self.transmit_bit(b, rng)).collect()
    }

    pub fn llr(&self, obs: Observation) -> Result<LlrSymbol> {
        match (*self, obs) {
            (Self::Bec { .. }, Observation::Erasure) => Ok(LlrSymbol::Erased),
            (Self::Bec { .. }, Observation::Bit(b)) => Ok(LlrSymbol::Finite(signed(b, LLR_SATURATION))),
            (Self::Bsc { crossover_prob: p }, Observation::Bit(b)) => {
                Ok(LlrSymbol::Finite(signed(b, ((1.0 - p) / p).ln())))
            }
            (Self::Biawgn { noise_std }, Observation::Real(y)) => {
                Ok(LlrSymbol::Finite(2.0 * y / (noise_std * noise_std)))
            }
            (ch, o) => invalid(format!("observation {o:?} cannot come from channel {ch}")),
        }
    }

    /// Transmit and convert straight to decoder-domain LLRs.
    pub fn sample_llrs<R: Rng + ?Sized>(&self, x: &[u8], rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(x.len(), out.len());
        match *self {
            Self::Bec { erasure_prob } => {
                for (o, &b) in out.iter_mut().zip(x) {
                    let erased = erasure_prob > 0.0 && rng.random::<f64>() < erasure_prob;
                    *o = if erased { 0.0 } else { signed(b, LLR_SATURATION) };
                }
            }
            Self::Bsc { crossover_prob } => {
                let mag = ((1.0 - crossover_prob) / crossover_prob).ln();
                for (o, &b) in out.iter_mut().zip(x) {
                    let flip = rng.random::<f64>() < crossover_prob;
                    *o = signed(b ^ u8::from(flip), mag);
                }
            }
            Self::Biawgn { noise_std } => {
                let scale = 2.0 / (noise_std * noise_std);
                for (o, &b) in out.iter_mut().zip(x) {
                    let s = if b == 0 { 1.0 } else { -1.0 };
                    let z: f64 = rng.sample(StandardNormal);
                    *o = scale * (s + noise_std * z);
                }
            }
        }
    }

    /// Capacity in bits per channel use.
    pub fn capacity(&self) -> f64 {
        match *self {
            Self::Bec { erasure_prob } => 1.0 - erasure_prob,
            Self::Bsc { crossover_prob } => 1.0 - binary_entropy(crossover_prob),
            Self::Biawgn { noise_std } => biawgn_capacity(noise_std),
        }
    }

    /// Short label usable in file names.
    pub fn slug(&self) -> String {
        self.to_string().replace(':', "_")
    }
}

#[inline]
fn signed(bit: u8, mag: f64) -> f64 {
    if bit == 0 {
        mag
    } else {
        -mag
    }
}

pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// `1 - E[log2(1 + e^{-L})]` with `L = 2Y/σ²`, `Y ~ N(1, σ²)`, by composite
/// Simpson over ±14σ.
fn biawgn_capacity(sigma: f64) -> f64 {
    const STEPS: usize = 40_000;
    let lo = 1.0 - 14.0 * sigma;
    let hi = 1.0 + 14.0 * sigma;
    let h = (hi - lo) / STEPS as f64;
    let s2 = sigma * sigma;
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let integrand = |y: f64| {
        let density = norm * (-(y - 1.0) * (y - 1.0) / (2.0 * s2)).exp();
        density * softplus(-2.0 * y / s2) / std::f64::consts::LN_2
    };
    let mut acc = integrand(lo) + integrand(hi);
    for k in 1..STEPS {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * integrand(lo + k as f64 * h);
    }
    1.0 - acc * h / 3.0
}

/// `ln(1 + e^t)` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl fmt::Display for ChannelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bec { erasure_prob } => write!(f, "bec:{erasure_prob}"),
            Self::Bsc { crossover_prob } => write!(f, "bsc:{crossover_prob}"),
            Self::Biawgn { noise_std } => write!(f, "biawgn:{noise_std}"),
        }
    }
}

/// Parses `bec:<p>`, `bsc:<p>` or `biawgn:<sigma>`.
impl FromStr for ChannelModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("channel `{s}` lacks `:`")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad channel parameter in `{s}`")))?;
        match kind.trim().to_ascii_lowercase().as_str() {
            "bec" => Self::bec(value),
            "bsc" => Self::bsc(value),
            "biawgn" => Self::biawgn(value),
            other => invalid(format!("unknown channel kind `{other}`")),
        }
    }
}
