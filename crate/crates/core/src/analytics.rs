//! Statistics of the genie-aided error count `|T|`.
//!
//! On BEC(p) the erasure indicators `E_i` of the synthetic channels have a
//! covariance matrix that follows a level-by-level recursion, which gives
//! `E|T|` and `Var|T|` in closed form. An exhaustive `2^N` enumeration of
//! channel erasure patterns is kept alongside as an independent oracle for
//! small `N`. Other channels are handled by Monte Carlo.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelModel;
use crate::construction::bhattacharyya_levels;
use crate::error::{invalid, Error, Result};
use crate::montecarlo::ga_trials;
use crate::polar::{log2_exact, CodeConfig};
use crate::sc::CheckRule;

/// Largest `N` for which the full covariance matrix is materialized.
pub const FULL_MATRIX_CAP: usize = 1 << 12;
/// Largest `N` for exhaustive enumeration.
pub const BRUTE_FORCE_CAP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsSource {
    ExactRecursion,
    BruteForce,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorCountStats {
    pub mean: f64,
    pub variance: f64,
    pub source: StatsSource,
    /// Set when the information set is empty.
    pub degenerate: bool,
}

impl ErrorCountStats {
    pub fn dispersion(&self) -> f64 {
        self.variance / self.mean
    }
}

/// Symmetric `N × N` covariance of the BEC erasure indicators, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    erasure_prob: f64,
    dim: usize,
    entries: Vec<f64>,
}

impl CovarianceMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn erasure_prob(&self) -> f64 {
        self.erasure_prob
    }

    /// One-based access.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i - 1) * self.dim + (j - 1)]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// One level of the covariance recursion: child `(i, j)` from parent
/// `(⌈i/2⌉, ⌈j/2⌉)` as `2 a_i a_j c ± c²`, where `a = 1 - Z` for the
/// OR-combined (odd) child and `a = Z` for the AND-combined (even) child,
/// and `+c²` applies when `i` and `j` have the same parity. The diagonal
/// is the Bernoulli variance `Z(1 - Z)`.
#[inline]
fn child_entry(i0: usize, j0: usize, parent: &[f64], dim: usize, z: &[f64]) -> f64 {
    let (k, l) = (i0 / 2, j0 / 2);
    let c = parent[k * dim + l];
    let a_i = if i0 % 2 == 0 { 1.0 - z[k] } else { z[k] };
    let a_j = if j0 % 2 == 0 { 1.0 - z[l] } else { z[l] };
    let square = if i0 % 2 == j0 % 2 { c * c } else { -c * c };
    2.0 * a_i * a_j * c + square
}

fn diagonal(z: f64) -> f64 {
    z * (1.0 - z)
}

fn next_level(parent: &[f64], dim: usize, z_parent: &[f64], z_child: &[f64]) -> Vec<f64> {
    let child_dim = 2 * dim;
    let mut out = vec![0.0; child_dim * child_dim];
    for i0 in 0..child_dim {
        for j0 in i0..child_dim {
            let v = if i0 == j0 {
                diagonal(z_child[i0])
            } else {
                child_entry(i0, j0, parent, dim, z_parent)
            };
            out[i0 * child_dim + j0] = v;
            out[j0 * child_dim + i0] = v;
        }
    }
    out
}

fn check_prob(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return invalid(format!("erasure probability {p} outside [0, 1]"));
    }
    Ok(())
}

/// Covariance of the erasure indicators of the `N` synthetic channels of
/// BEC(p), starting from `C_1 = p(1 - p)`.
pub fn covariance_matrix(p: f64, block_len: usize) -> Result<CovarianceMatrix> {
    check_prob(p)?;
    let n = log2_exact(block_len)?;
    if block_len > FULL_MATRIX_CAP {
        return Err(Error::ResourceLimit(format!(
            "full covariance matrix limited to N <= {FULL_MATRIX_CAP}, requested {block_len}"
        )));
    }
    let z = bhattacharyya_levels(p, n);
    Ok(covariance_from_levels(p, &z, n as usize))
}

fn covariance_from_levels(p: f64, z: &[Vec<f64>], level: usize) -> CovarianceMatrix {
    let mut entries = vec![diagonal(p)];
    for k in 0..level {
        entries = next_level(&entries, 1 << k, &z[k], &z[k + 1]);
    }
    CovarianceMatrix { erasure_prob: p, dim: 1 << level, entries }
}

fn stats_from_sums(z_sum: f64, cov_sum: f64) -> ErrorCountStats {
    let mean = 0.5 * z_sum;
    ErrorCountStats { mean, variance: 0.5 * mean + 0.25 * cov_sum, source: StatsSource::ExactRecursion, degenerate: false }
}

fn degenerate(source: StatsSource) -> ErrorCountStats {
    ErrorCountStats { mean: 0.0, variance: 0.0, source, degenerate: true }
}

/// `E|T| = ½ Σ_{i∈I} Z_i` and `Var|T| = ½ E|T| + ¼ Σ_{i,j∈I} C(i, j)`.
pub fn exact_t_stats(p: f64, config: &CodeConfig, cov: &CovarianceMatrix) -> Result<ErrorCountStats> {
    check_prob(p)?;
    if cov.dim() != config.block_len() || cov.erasure_prob() != p {
        return invalid("covariance matrix does not match the channel and block length");
    }
    let info = config.info_set();
    if info.is_empty() {
        return Ok(degenerate(StatsSource::ExactRecursion));
    }
    let z = bhattacharyya_levels(p, config.n()).pop().expect("levels");
    let z_sum: f64 = info.iter().map(|&i| z[i - 1]).sum();
    let cov_sum: f64 = info.iter().map(|&i| info.iter().map(|&j| cov.get(i, j)).sum::<f64>()).sum();
    Ok(stats_from_sums(z_sum, cov_sum))
}

/// Same as [`exact_t_stats`] but only materializes the parent level and
/// streams the last one, so it reaches `N = 2 · FULL_MATRIX_CAP`.
pub fn exact_t_stats_streaming(p: f64, config: &CodeConfig) -> Result<ErrorCountStats> {
    check_prob(p)?;
    let len = config.block_len();
    if len / 2 > FULL_MATRIX_CAP {
        return Err(Error::ResourceLimit(format!(
            "streaming statistics limited to N <= {}, requested {len}",
            2 * FULL_MATRIX_CAP
        )));
    }
    let info = config.info_set();
    if info.is_empty() {
        return Ok(degenerate(StatsSource::ExactRecursion));
    }
    let n = config.n() as usize;
    let z = bhattacharyya_levels(p, n as u32);
    let parent = covariance_from_levels(p, &z, n - 1);
    let (z_parent, z_child) = (&z[n - 1], &z[n]);
    let mut cov_sum = 0.0;
    for (a, &i) in info.iter().enumerate() {
        cov_sum += diagonal(z_child[i - 1]);
        for &j in &info[a + 1..] {
            cov_sum += 2.0 * child_entry(i - 1, j - 1, &parent.entries, parent.dim, z_parent);
        }
    }
    let z_sum: f64 = info.iter().map(|&i| z_child[i - 1]).sum();
    Ok(stats_from_sums(z_sum, cov_sum))
}

/// Exact statistics, materializing the matrix only when it fits the cap.
pub fn bec_t_stats(p: f64, config: &CodeConfig) -> Result<ErrorCountStats> {
    if config.block_len() <= FULL_MATRIX_CAP / 2 {
        let cov = covariance_matrix(p, config.block_len())?;
        exact_t_stats(p, config, &cov)
    } else {
        exact_t_stats_streaming(p, config)
    }
}

/// Output of the exhaustive oracle.
#[derive(Debug, Clone)]
pub struct BruteForceStats {
    pub stats: ErrorCountStats,
    /// `pmf[k] = P(|T| = k)`.
    pub pmf: Vec<f64>,
    pub covariance: CovarianceMatrix,
}

/// Erasure indicators of the synthetic channels for one channel erasure
/// pattern (bit `t` of `mask` set = physical symbol `t` erased). The two
/// halves act as independent copies of the half-length transform; the odd
/// child is erased if either copy is, the even child only if both are.
fn synthetic_erasures(mask: u32, len: usize) -> u32 {
    if len == 1 {
        return mask & 1;
    }
    let h = len / 2;
    let a = synthetic_erasures(mask & ((1 << h) - 1), h);
    let b = synthetic_erasures(mask >> h, h);
    let mut out = 0u32;
    for k in 0..h {
        let (ea, eb) = ((a >> k) & 1, (b >> k) & 1);
        out |= (ea | eb) << (2 * k);
        out |= (ea & eb) << (2 * k + 1);
    }
    out
}

/// Enumerates all `2^N` erasure patterns; each erased information bit is
/// wrong with probability ½ independently.
pub fn brute_force_erasure_stats(p: f64, config: &CodeConfig) -> Result<BruteForceStats> {
    check_prob(p)?;
    let len = config.block_len();
    if len > BRUTE_FORCE_CAP {
        return Err(Error::ResourceLimit(format!("enumeration limited to N <= {BRUTE_FORCE_CAP}, requested {len}")));
    }
    let info_mask: u32 = config.info_set().iter().fold(0, |m, &i| m | (1 << (i - 1)));
    let k = config.k();
    // binomial(s, 1/2) pmfs
    let mut binom = vec![vec![1.0]];
    for s in 1..=k {
        let prev: &Vec<f64> = &binom[s - 1];
        let mut row = vec![0.0; s + 1];
        for (t, &v) in prev.iter().enumerate() {
            row[t] += 0.5 * v;
            row[t + 1] += 0.5 * v;
        }
        binom.push(row);
    }
    let mut pmf = vec![0.0; k + 1];
    let mut first = vec![0.0; len];
    let mut second = vec![0.0; len * len];
    for mask in 0u32..(1u32 << len) {
        let erased = mask.count_ones() as i32;
        let w = p.powi(erased) * (1.0 - p).powi(len as i32 - erased);
        if w == 0.0 {
            continue;
        }
        let e = synthetic_erasures(mask, len);
        let s = (e & info_mask).count_ones() as usize;
        for (t, &b) in binom[s].iter().enumerate() {
            pmf[t] += w * b;
        }
        for i in 0..len {
            if (e >> i) & 1 == 1 {
                first[i] += w;
                for j in 0..len {
                    if (e >> j) & 1 == 1 {
                        second[i * len + j] += w;
                    }
                }
            }
        }
    }
    let mut entries = vec![0.0; len * len];
    for i in 0..len {
        for j in 0..len {
            entries[i * len + j] = second[i * len + j] - first[i] * first[j];
        }
    }
    let covariance = CovarianceMatrix { erasure_prob: p, dim: len, entries };
    let stats = if k == 0 {
        degenerate(StatsSource::BruteForce)
    } else {
        let mean: f64 = pmf.iter().enumerate().map(|(t, &q)| t as f64 * q).sum();
        let second: f64 = pmf.iter().enumerate().map(|(t, &q)| (t * t) as f64 * q).sum();
        ErrorCountStats { mean, variance: second - mean * mean, source: StatsSource::BruteForce, degenerate: false }
    };
    Ok(BruteForceStats { stats, pmf, covariance })
}

/// Sample statistics of `|T|` from genie-aided SC trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McStats {
    pub stats: ErrorCountStats,
    /// `histogram[k]` = number of trials with `|T| = k`.
    pub histogram: Vec<u64>,
    pub trials: u64,
}

impl McStats {
    pub fn from_histogram(histogram: Vec<u64>) -> Result<Self> {
        let trials: u64 = histogram.iter().sum();
        if trials == 0 {
            return Err(Error::InsufficientData("empty histogram".into()));
        }
        let n = trials as f64;
        let mean = histogram.iter().enumerate().map(|(k, &c)| k as f64 * c as f64).sum::<f64>() / n;
        let ss: f64 = histogram.iter().enumerate().map(|(k, &c)| c as f64 * (k as f64 - mean).powi(2)).sum();
        let variance = if trials > 1 { ss / (n - 1.0) } else { 0.0 };
        let stats = ErrorCountStats { mean, variance, source: StatsSource::MonteCarlo, degenerate: false };
        Ok(Self { stats, histogram, trials })
    }

    /// Empirical `P(|T| = k)`.
    pub fn pmf(&self) -> Vec<f64> {
        self.histogram.iter().map(|&c| c as f64 / self.trials as f64).collect()
    }

    /// Fraction of trials with at least one error, i.e. the SC block error
    /// rate.
    pub fn block_error_rate(&self) -> f64 {
        1.0 - self.histogram.first().copied().unwrap_or(0) as f64 / self.trials as f64
    }

    pub fn standard_error(&self) -> f64 {
        (self.stats.variance / self.trials as f64).sqrt()
    }
}

fn add_count(hist: &mut Vec<u64>, k: usize) {
    if hist.len() <= k {
        hist.resize(k + 1, 0);
    }
    hist[k] += 1;
}

fn merge_hist(mut a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    if a.len() < b.len() {
        a.resize(b.len(), 0);
    }
    a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
    a
}

pub fn mc_t_stats(channel: &ChannelModel, config: &CodeConfig, trials: u64, seed: u64) -> Result<McStats> {
    mc_t_stats_with(channel, config, trials, seed, CheckRule::default())
}

pub fn mc_t_stats_with(
    channel: &ChannelModel,
    config: &CodeConfig,
    trials: u64,
    seed: u64,
    rule: CheckRule,
) -> Result<McStats> {
    let hist = ga_trials(channel, config, trials, seed, rule, Vec::new, |h, v| add_count(h, v.errors.len()), merge_hist)?;
    McStats::from_histogram(hist)
}

/// Genie-aided error positions of many trials with every position treated
/// as information. Because the channels are symmetric, the error events do
/// not depend on the transmitted bits, so `|T|` for any information set
/// can be read off these samples by restriction.
#[derive(Debug, Clone)]
pub struct ErrorSamples {
    block_len: usize,
    trials: u64,
    errors: Vec<Vec<u32>>,
}

impl ErrorSamples {
    pub fn collect(channel: &ChannelModel, block_len: usize, trials: u64, seed: u64, rule: CheckRule) -> Result<Self> {
        let config = CodeConfig::all_information(log2_exact(block_len)?)?;
        let mut tagged = ga_trials(
            channel,
            &config,
            trials,
            seed,
            rule,
            Vec::new,
            |acc: &mut Vec<(u64, Vec<u32>)>, v| acc.push((v.trial, v.errors.iter().map(|&i| i as u32).collect())),
            |mut a, mut b| {
                a.append(&mut b);
                a
            },
        )?;
        tagged.sort_unstable_by_key(|(t, _)| *t);
        Ok(Self { block_len, trials, errors: tagged.into_iter().map(|(_, e)| e).collect() })
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    /// Per-position error frequencies.
    pub fn error_rates(&self) -> Vec<f64> {
        let mut counts = vec![0u64; self.block_len];
        for e in &self.errors {
            for &i in e {
                counts[i as usize - 1] += 1;
            }
        }
        counts.into_iter().map(|c| c as f64 / self.trials as f64).collect()
    }

    /// `|T|` statistics for `config`.
    pub fn restrict(&self, config: &CodeConfig) -> Result<McStats> {
        if config.block_len() != self.block_len {
            return invalid("configuration length does not match the samples");
        }
        let mut hist = Vec::new();
        for e in &self.errors {
            let k = e.iter().filter(|&&i| !config.is_frozen0(i as usize - 1)).count();
            add_count(&mut hist, k);
        }
        McStats::from_histogram(hist)
    }
}
