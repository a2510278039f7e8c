//! Negative-binomial model of the error count and everything derived from
//! it: SC success probability, delay, BLER under a delay cap, entropy and
//! a Huffman dictionary for `|T|`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};

pub const DEFAULT_TAIL_MASS: f64 = 1e-9;

/// Moment-matched model for `|T|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fallback", rename_all = "kebab-case")]
pub enum NbModel {
    /// `P(X = x) = Γ(r+x) / (Γ(r) x!) p^r (1-p)^x`
    #[serde(rename = "none")]
    NegativeBinomial { r: f64, p: f64 },
    /// Underdispersed input (`Var ≤ E`): the `r → ∞` limit.
    Poisson { lambda: f64 },
    DegenerateZero,
}

/// Fits `r = E² / (Var − E)` and `p = E / Var`.
pub fn fit_nb(mean: f64, variance: f64) -> Result<NbModel> {
    if !(mean >= 0.0 && variance >= 0.0) || !mean.is_finite() || !variance.is_finite() {
        return invalid(format!("moments must be finite and non-negative (mean {mean}, variance {variance})"));
    }
    Ok(if mean == 0.0 {
        NbModel::DegenerateZero
    } else if variance > mean {
        NbModel::NegativeBinomial { r: mean * mean / (variance - mean), p: mean / variance }
    } else {
        NbModel::Poisson { lambda: mean }
    })
}

impl NbModel {
    pub fn r_fit(&self) -> Option<f64> {
        match *self {
            NbModel::NegativeBinomial { r, .. } => Some(r),
            _ => None,
        }
    }

    pub fn p_fit(&self) -> Option<f64> {
        match *self {
            NbModel::NegativeBinomial { p, .. } => Some(p),
            _ => None,
        }
    }

    pub fn fallback_name(&self) -> &'static str {
        match self {
            NbModel::NegativeBinomial { .. } => "none",
            NbModel::Poisson { .. } => "poisson",
            NbModel::DegenerateZero => "degenerate-zero",
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            NbModel::NegativeBinomial { r, p } => r * (1.0 - p) / p,
            NbModel::Poisson { lambda } => lambda,
            NbModel::DegenerateZero => 0.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            NbModel::NegativeBinomial { r, p } => r * (1.0 - p) / (p * p),
            NbModel::Poisson { lambda } => lambda,
            NbModel::DegenerateZero => 0.0,
        }
    }

    pub fn pmf(&self, x: u64) -> f64 {
        let xf = x as f64;
        match *self {
            NbModel::NegativeBinomial { r, p } => {
                if x == 0 {
                    return p.powf(r);
                }
                (ln_gamma(r + xf) - ln_gamma(r) - ln_gamma(xf + 1.0) + r * p.ln() + xf * (1.0 - p).ln()).exp()
            }
            NbModel::Poisson { lambda } => (-lambda + xf * lambda.ln() - ln_gamma(xf + 1.0)).exp(),
            NbModel::DegenerateZero => {
                if x == 0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Support `0..=x_max` where the cumulative mass first reaches
    /// `1 - tail_mass`, renormalized; the cut mass is kept in
    /// [`DiscretePmf::tail_mass`].
    pub fn truncated_pmf(&self, tail_mass: f64) -> Result<DiscretePmf> {
        if !(0.0..1.0).contains(&tail_mass) {
            return invalid(format!("tail mass {tail_mass} outside [0, 1)"));
        }
        const MAX_SUPPORT: u64 = 50_000_000;
        let mut probs = Vec::new();
        let mut cum = 0.0;
        let mut x = 0;
        while cum < 1.0 - tail_mass {
            if x >= MAX_SUPPORT {
                return Err(crate::error::Error::ResourceLimit("pmf support too large to truncate".into()));
            }
            let q = self.pmf(x);
            probs.push(q);
            cum += q;
            x += 1;
        }
        let tail = (1.0 - cum).max(0.0);
        probs.iter_mut().for_each(|q| *q /= cum);
        Ok(DiscretePmf { probs, tail_mass: tail })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// `P(|T| = 0)`, the per-round SC success probability.
    pub success_prob: f64,
    /// `1 / success_prob`; infinite when success is impossible.
    pub avg_delay: f64,
    pub infinite_delay: bool,
}

pub fn predict_success_and_delay(model: &NbModel) -> Prediction {
    let success_prob = model.pmf(0);
    Prediction { success_prob, avg_delay: 1.0 / success_prob, infinite_delay: success_prob == 0.0 }
}

/// Probability that a block is still unresolved after `d_max` rounds,
/// `(1 - P(|T| = 0))^{d_max}`.
pub fn predict_bler(model: &NbModel, d_max: u64) -> Result<f64> {
    if d_max == 0 {
        return invalid("maximum delay must be at least 1");
    }
    let fail = 1.0 - model.pmf(0);
    Ok(fail.powf(d_max as f64))
}

pub fn nb_entropy(model: &NbModel, tail_mass: f64) -> Result<f64> {
    Ok(model.truncated_pmf(tail_mass)?.entropy_bits())
}

/// A pmf on `0..len`, normalized. `tail_mass` records probability cut off
/// beyond the support before normalization (zero for empirical pmfs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePmf {
    probs: Vec<f64>,
    tail_mass: f64,
}

impl DiscretePmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return invalid("pmf must have at least one symbol");
        }
        if probs.iter().any(|&q| !(q >= 0.0) || !q.is_finite()) {
            return invalid("pmf entries must be finite and non-negative");
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("pmf sums to {total}, not 1"));
        }
        Ok(Self { probs, tail_mass: 0.0 })
    }

    /// Normalizes non-negative weights (e.g. histogram counts).
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return invalid("weights must have positive total");
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, x: usize) -> f64 {
        self.probs.get(x).copied().unwrap_or(0.0)
    }

    pub fn entropy_bits(&self) -> f64 {
        -self.probs.iter().filter(|&&q| q > 0.0).map(|&q| q * q.log2()).sum::<f64>()
    }

    pub fn total_variation(&self, other: &DiscretePmf) -> f64 {
        let len = self.len().max(other.len());
        0.5 * (0..len).map(|x| (self.get(x) - other.get(x)).abs()).sum::<f64>()
    }
}

/// Code lengths of a binary Huffman code over `0..len` plus an optional
/// escape symbol for counts beyond the support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HuffmanCode {
    pub lengths: Vec<u32>,
    /// Codeword length of the escape symbol, present when the source pmf
    /// had a truncated tail.
    pub escape_len: Option<u32>,
    /// Fixed-width count appended after the escape codeword.
    pub escape_payload_bits: u32,
}

/// Escape payload width for counts up to `max_count`: `⌈log2(max_count + 1)⌉`.
pub fn escape_payload_bits(max_count: u64) -> u32 {
    let mut bits = 0;
    while (1u128 << bits) < max_count as u128 + 1 {
        bits += 1;
    }
    bits
}

#[derive(PartialEq)]
struct Weight(f64);

impl Eq for Weight {}

impl PartialOrd for Weight {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Weight {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Builds a Huffman code for `pmf`. When `pmf` carries a truncated tail an
/// escape symbol with that weight is added; counts that fall on it are sent
/// as the escape codeword followed by a `⌈log2(max_count + 1)⌉`-bit count.
pub fn build_huffman(pmf: &DiscretePmf, max_count: u64) -> HuffmanCode {
    let mut weights: Vec<f64> = pmf.probs.clone();
    let has_escape = pmf.tail_mass > 0.0;
    if has_escape {
        weights.push(pmf.tail_mass);
    }
    let symbols = weights.len();
    let mut lengths = vec![0u32; symbols];
    if symbols == 1 {
        lengths[0] = 1;
    } else {
        // node ids: 0..symbols are leaves, internal nodes follow
        let mut parent: Vec<usize> = vec![usize::MAX; symbols];
        let mut heap: BinaryHeap<Reverse<(Weight, usize)>> =
            weights.iter().enumerate().map(|(i, &w)| Reverse((Weight(w), i))).collect();
        while heap.len() > 1 {
            let Reverse((Weight(wa), a)) = heap.pop().expect("two nodes");
            let Reverse((Weight(wb), b)) = heap.pop().expect("two nodes");
            let id = parent.len();
            parent.push(usize::MAX);
            parent[a] = id;
            parent[b] = id;
            heap.push(Reverse((Weight(wa + wb), id)));
        }
        for (leaf, len) in lengths.iter_mut().enumerate() {
            let mut node = leaf;
            while parent[node] != usize::MAX {
                node = parent[node];
                *len += 1;
            }
        }
    }
    let escape_len = if has_escape { lengths.pop() } else { None };
    HuffmanCode { lengths, escape_len, escape_payload_bits: escape_payload_bits(max_count) }
}

impl HuffmanCode {
    /// Bits spent on count `x`.
    pub fn cost(&self, x: usize) -> Option<u32> {
        match self.lengths.get(x) {
            Some(&l) => Some(l),
            None => self.escape_len.map(|e| e + self.escape_payload_bits),
        }
    }

    /// Canonical codewords for the in-support symbols and the escape (last).
    pub fn codewords(&self) -> Vec<String> {
        let mut all: Vec<(u32, usize)> = self.lengths.iter().copied().zip(0..).collect();
        if let Some(e) = self.escape_len {
            all.push((e, self.lengths.len()));
        }
        let mut order = all.clone();
        order.sort();
        let mut words = vec![String::new(); all.len()];
        let mut code: u64 = 0;
        let mut prev_len = 0;
        for (k, &(len, sym)) in order.iter().enumerate() {
            if k > 0 {
                code = (code + 1) << (len - prev_len);
            } else {
                code <<= len;
            }
            prev_len = len;
            words[sym] = format!("{code:0width$b}", width = len as usize);
        }
        words
    }
}

/// `Σ_x reference(x) · cost(x)`.
pub fn avg_code_length(code: &HuffmanCode, reference: &DiscretePmf) -> Result<f64> {
    let mut total = 0.0;
    for (x, &q) in reference.probs().iter().enumerate() {
        if q == 0.0 {
            continue;
        }
        match code.cost(x) {
            Some(c) => total += q * c as f64,
            None => return invalid(format!("count {x} lies outside the dictionary and there is no escape symbol")),
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn fit_examples() {
        assert_eq!(fit_nb(2.0, 4.0).unwrap(), NbModel::NegativeBinomial { r: 2.0, p: 0.5 });
        assert_eq!(fit_nb(0.5, 0.375).unwrap(), NbModel::Poisson { lambda: 0.5 });
        assert_eq!(fit_nb(0.0, 0.0).unwrap(), NbModel::DegenerateZero);
        assert!(fit_nb(-1.0, 2.0).is_err());
        assert!(fit_nb(1.0, -2.0).is_err());
        assert!(fit_nb(f64::NAN, 2.0).is_err());
    }

    #[test]
    fn pmf_examples() {
        let m = NbModel::NegativeBinomial { r: 2.0, p: 0.5 };
        assert_abs_diff_eq!(m.pmf(0), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(m.pmf(1), 0.25, epsilon = 1e-13);
        let geo = NbModel::NegativeBinomial { r: 1.0, p: 0.5 };
        for x in 0..=20 {
            assert_abs_diff_eq!(geo.pmf(x), 0.5f64.powi(x as i32 + 1), epsilon = 1e-12);
        }
        assert_eq!(NbModel::DegenerateZero.pmf(0), 1.0);
        assert_eq!(NbModel::DegenerateZero.pmf(3), 0.0);
        let pois = NbModel::Poisson { lambda: 0.5 };
        assert_abs_diff_eq!(pois.pmf(2), (-0.5f64).exp() * 0.125, epsilon = 1e-14);
    }

    #[test]
    fn predictions() {
        let m = NbModel::NegativeBinomial { r: 2.0, p: 0.5 };
        let pr = predict_success_and_delay(&m);
        assert_abs_diff_eq!(pr.success_prob, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(pr.avg_delay, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(predict_bler(&m, 1).unwrap(), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(predict_bler(&m, 2).unwrap(), 0.5625, epsilon = 1e-15);
        assert!(predict_bler(&m, 10_000).unwrap() < 1e-300);
        assert!(predict_bler(&m, 0).is_err());
        let d = predict_success_and_delay(&NbModel::DegenerateZero);
        assert_eq!((d.success_prob, d.avg_delay, d.infinite_delay), (1.0, 1.0, false));
    }

    #[test]
    fn entropy_examples() {
        let geo = NbModel::NegativeBinomial { r: 1.0, p: 0.5 };
        assert_abs_diff_eq!(nb_entropy(&geo, DEFAULT_TAIL_MASS).unwrap(), 2.0, epsilon = 1e-6);
        assert_eq!(nb_entropy(&NbModel::DegenerateZero, DEFAULT_TAIL_MASS).unwrap(), 0.0);
    }

    #[test]
    fn huffman_dyadic_example() {
        let pmf = DiscretePmf::new(vec![0.5, 0.25, 0.25]).unwrap();
        let code = build_huffman(&pmf, 100);
        assert_eq!(code.escape_len, None);
        assert_abs_diff_eq!(avg_code_length(&code, &pmf).unwrap(), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn huffman_single_symbol_uses_one_bit() {
        let pmf = DiscretePmf::new(vec![1.0]).unwrap();
        let code = build_huffman(&pmf, 10);
        assert_eq!(code.lengths, vec![1]);
    }

    #[test]
    fn escape_symbol_covers_tail() {
        let model = NbModel::NegativeBinomial { r: 1.5, p: 0.3 };
        let pmf = model.truncated_pmf(1e-6).unwrap();
        assert!(pmf.tail_mass() > 0.0);
        let code = build_huffman(&pmf, 1023);
        assert!(code.escape_len.is_some());
        assert_eq!(code.escape_payload_bits, 10);
        let far = pmf.len() + 5;
        assert_eq!(code.cost(far), Some(code.escape_len.unwrap() + 10));
        let no_escape = build_huffman(&DiscretePmf::new(vec![0.5, 0.5]).unwrap(), 10);
        let wide = DiscretePmf::new(vec![0.4, 0.4, 0.2]).unwrap();
        assert!(avg_code_length(&no_escape, &wide).is_err());
    }

    #[test]
    fn escape_width() {
        assert_eq!(escape_payload_bits(0), 0);
        assert_eq!(escape_payload_bits(1), 1);
        assert_eq!(escape_payload_bits(476), 9);
        assert_eq!(escape_payload_bits(511), 9);
        assert_eq!(escape_payload_bits(512), 10);
    }

    #[test]
    fn codewords_are_prefix_free() {
        let model = NbModel::NegativeBinomial { r: 3.2, p: 0.4 };
        let code = build_huffman(&model.truncated_pmf(1e-9).unwrap(), 500);
        let words = code.codewords();
        for (i, a) in words.iter().enumerate() {
            for (j, b) in words.iter().enumerate() {
                if i != j {
                    assert!(!b.starts_with(a.as_str()), "{a} prefixes {b}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn moments_are_recovered(mean in 0.01f64..50.0, excess in 0.001f64..200.0) {
            let variance = mean + excess;
            let m = fit_nb(mean, variance).unwrap();
            prop_assert!(m.r_fit().unwrap() > 0.0);
            prop_assert!((m.mean() - mean).abs() <= 1e-9 * mean.max(1.0));
            prop_assert!((m.variance() - variance).abs() <= 1e-9 * variance.max(1.0));
        }

        #[test]
        fn truncated_pmf_covers_requested_mass(r in 0.2f64..20.0, p in 0.05f64..0.95, tail in 1e-12f64..1e-3) {
            let m = NbModel::NegativeBinomial { r, p };
            let pmf = m.truncated_pmf(tail).unwrap();
            let raw: f64 = (0..pmf.len() as u64).map(|x| m.pmf(x)).sum();
            prop_assert!(raw >= 1.0 - 2.0 * tail);
            prop_assert!((pmf.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn bler_at_one_round_is_failure_probability(mean in 0.01f64..30.0, excess in 0.0f64..100.0) {
            let m = fit_nb(mean, mean + excess).unwrap();
            let s = predict_success_and_delay(&m).success_prob;
            prop_assert_eq!(predict_bler(&m, 1).unwrap(), 1.0 - s);
        }

        #[test]
        fn huffman_within_entropy_bounds(weights in proptest::collection::vec(0.001f64..1.0, 2..40)) {
            let pmf = DiscretePmf::from_weights(&weights).unwrap();
            let code = build_huffman(&pmf, 1000);
            let kraft: f64 = code.lengths.iter().map(|&l| 0.5f64.powi(l as i32)).sum();
            prop_assert!((kraft - 1.0).abs() < 1e-12);
            let h = pmf.entropy_bits();
            let l = avg_code_length(&code, &pmf).unwrap();
            prop_assert!(h <= l + 1e-12 && l < h + 1.0);
        }
    }
}
