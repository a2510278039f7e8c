//! End-to-end experiment recipes shared by the command-line tool and the
//! acceptance suite.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytics::ErrorSamples;
use crate::channel::ChannelModel;
use crate::construction::{
    bec_reliability_profile, cached_reliability_profile, mc_reliability_profile_with, optimal_threshold,
    select_frozen_set, ReliabilityProfile, DEFAULT_CONSTRUCTION_TRIALS,
};
use crate::error::{invalid, Result};
use crate::feedback::{run_feedback_sessions, SessionOptions, SessionStats};
use crate::nb::{avg_code_length, build_huffman, fit_nb, nb_entropy, DiscretePmf, NbModel, DEFAULT_TAIL_MASS};
use crate::sc::CheckRule;

/// How reliability profiles are obtained for non-BEC channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionSetup {
    pub trials: u64,
    pub seed: u64,
    pub rule: CheckRule,
}

impl Default for ConstructionSetup {
    fn default() -> Self {
        Self { trials: DEFAULT_CONSTRUCTION_TRIALS, seed: 1, rule: CheckRule::default() }
    }
}

pub fn build_profile(
    channel: &ChannelModel,
    block_len: usize,
    setup: &ConstructionSetup,
    cache_dir: Option<&Path>,
) -> Result<ReliabilityProfile> {
    match (channel, cache_dir) {
        (_, Some(dir)) => cached_reliability_profile(dir, channel, block_len, setup.trials, setup.seed, setup.rule),
        (ChannelModel::Bec { erasure_prob }, None) => bec_reliability_profile(*erasure_prob, block_len),
        (_, None) => mc_reliability_profile_with(channel, block_len, setup.trials, setup.seed, setup.rule),
    }
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return invalid("at least one threshold scale is required");
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
        return invalid(format!("threshold scale {a} must be positive"));
    }
    Ok(())
}

/// `ε*/α`, capped at 1.
pub fn scaled_threshold(block_len: usize, alpha: f64) -> Result<f64> {
    Ok((optimal_threshold(block_len)? / alpha).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlerRow {
    pub alpha: f64,
    pub threshold: f64,
    pub k: usize,
    pub empirical_bler: f64,
    pub predicted_bler: f64,
    pub mean: f64,
    pub variance: f64,
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub fallback: String,
}

/// SC block error rate against the negative-binomial prediction `1 − p^r`
/// for each threshold scale. All rows share one set of genie-aided samples.
pub fn bler_sweep(
    profile: &ReliabilityProfile,
    channel: &ChannelModel,
    alphas: &[f64],
    trials: u64,
    seed: u64,
    rule: CheckRule,
) -> Result<Vec<BlerRow>> {
    check_alphas(alphas)?;
    let samples = ErrorSamples::collect(channel, profile.block_len, trials, seed, rule)?;
    alphas
        .iter()
        .map(|&alpha| {
            let threshold = scaled_threshold(profile.block_len, alpha)?;
            let config = select_frozen_set(profile, threshold)?;
            let mc = samples.restrict(&config)?;
            let model = fit_nb(mc.stats.mean, mc.stats.variance)?;
            Ok(BlerRow {
                alpha,
                threshold,
                k: config.k(),
                empirical_bler: mc.block_error_rate(),
                predicted_bler: 1.0 - model.pmf(0),
                mean: mc.stats.mean,
                variance: mc.stats.variance,
                r: model.r_fit(),
                p: model.p_fit(),
                fallback: model.fallback_name().to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateDelayRow {
    pub alpha: f64,
    pub threshold: f64,
    pub k: usize,
    pub code_rate: f64,
    pub stats: SessionStats,
}

/// Long-run rate and delay of the feedback protocol for each threshold
/// scale, with unbounded delay.
pub fn rate_delay_table(
    profile: &ReliabilityProfile,
    channel: &ChannelModel,
    alphas: &[f64],
    rounds_each: u64,
    sessions: u64,
    seed: u64,
    options: SessionOptions,
) -> Result<Vec<RateDelayRow>> {
    check_alphas(alphas)?;
    alphas
        .iter()
        .enumerate()
        .map(|(j, &alpha)| {
            let threshold = scaled_threshold(profile.block_len, alpha)?;
            let config = select_frozen_set(profile, threshold)?;
            let stats = run_feedback_sessions(
                &config,
                channel,
                rounds_each,
                sessions,
                None,
                crate::rng::derive_seed(seed, crate::rng::stream::SESSION, j as u64),
                options,
            )?;
            Ok(RateDelayRow { alpha, threshold, k: config.k(), code_rate: config.rate(), stats })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRow {
    pub alpha: f64,
    pub threshold: f64,
    pub k: usize,
    /// Entropy of the empirical `|T|` distribution.
    pub entropy: f64,
    /// Entropy of the fitted negative-binomial model.
    pub entropy_nb: f64,
    /// Average length of the model-built Huffman code on the empirical
    /// distribution.
    pub avg_len: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Entropy of `|T|` and the cost of describing it with a Huffman code
/// built from the fitted model.
pub fn compress_error_counts(hist: &[u64], k: usize) -> Result<(NbModel, f64, f64, f64)> {
    let mc = crate::analytics::McStats::from_histogram(hist.to_vec())?;
    let empirical = DiscretePmf::from_weights(&hist.iter().map(|&c| c as f64).collect::<Vec<_>>())?;
    let model = fit_nb(mc.stats.mean, mc.stats.variance)?;
    let code = build_huffman(&model.truncated_pmf(DEFAULT_TAIL_MASS)?, k as u64);
    Ok((model, empirical.entropy_bits(), nb_entropy(&model, DEFAULT_TAIL_MASS)?, avg_code_length(&code, &empirical)?))
}

pub fn compression_table(
    profile: &ReliabilityProfile,
    channel: &ChannelModel,
    alphas: &[f64],
    trials: u64,
    seed: u64,
    rule: CheckRule,
) -> Result<Vec<CompressionRow>> {
    check_alphas(alphas)?;
    let samples = ErrorSamples::collect(channel, profile.block_len, trials, seed, rule)?;
    alphas
        .iter()
        .map(|&alpha| {
            let threshold = scaled_threshold(profile.block_len, alpha)?;
            let config = select_frozen_set(profile, threshold)?;
            let mc = samples.restrict(&config)?;
            let (_, entropy, entropy_nb, avg_len) = compress_error_counts(&mc.histogram, config.k())?;
            Ok(CompressionRow {
                alpha,
                threshold,
                k: config.k(),
                entropy,
                entropy_nb,
                avg_len,
                mean: mc.stats.mean,
                variance: mc.stats.variance,
            })
        })
        .collect()
}

/// Reference values and tolerances for `repro`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproBands {
    pub rate_delay: RateDelayBands,
    pub compression: CompressionBands,
    pub bler: BlerBands,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateDelayBands {
    pub channel: ChannelModel,
    pub n: u32,
    pub alphas: Vec<f64>,
    pub rate: Vec<f64>,
    pub rate_tol: f64,
    pub delay: Vec<f64>,
    pub delay_rel_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionBands {
    pub channel: ChannelModel,
    pub n: u32,
    pub alphas: Vec<f64>,
    pub entropy: Vec<f64>,
    pub entropy_nb: Vec<f64>,
    pub avg_len: Vec<f64>,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlerBands {
    pub channels: Vec<ChannelModel>,
    pub n: u32,
    pub alphas: Vec<f64>,
    /// Allowed `|predicted − empirical|`.
    pub tol: f64,
    /// Rows are checked only when the empirical rate lies in this window.
    pub window: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCheck {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub pass: bool,
}

impl BandCheck {
    pub fn new(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), value, lo, hi, pass: value >= lo && value <= hi }
    }

    pub fn around(name: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        Self::new(name, value, target - tol, target + tol)
    }
}

pub fn check_rate_delay(bands: &RateDelayBands, rows: &[RateDelayRow]) -> Vec<BandCheck> {
    let mut out = Vec::new();
    for (j, row) in rows.iter().enumerate() {
        let a = row.alpha;
        out.push(BandCheck::around(format!("rate alpha={a}"), row.stats.avg_rate, bands.rate[j], bands.rate_tol));
        let d = bands.delay[j];
        out.push(BandCheck::new(
            format!("delay alpha={a}"),
            row.stats.avg_delay,
            d * (1.0 - bands.delay_rel_tol),
            d * (1.0 + bands.delay_rel_tol),
        ));
    }
    if let Some(best) = rows.iter().max_by(|x, y| x.stats.avg_rate.total_cmp(&y.stats.avg_rate)) {
        out.push(BandCheck::new("rate peaks at alpha=1", best.alpha, 1.0, 1.0));
    }
    out
}

pub fn check_compression(bands: &CompressionBands, rows: &[CompressionRow]) -> Vec<BandCheck> {
    let mut out = Vec::new();
    for (j, row) in rows.iter().enumerate() {
        let a = row.alpha;
        out.push(BandCheck::around(format!("H alpha={a}"), row.entropy, bands.entropy[j], bands.tol));
        out.push(BandCheck::around(format!("H_nb alpha={a}"), row.entropy_nb, bands.entropy_nb[j], bands.tol));
        out.push(BandCheck::around(format!("avg_len alpha={a}"), row.avg_len, bands.avg_len[j], bands.tol));
        out.push(BandCheck::new(format!("H <= avg_len < H+1 alpha={a}"), row.avg_len - row.entropy, 0.0, 1.0 - 1e-12));
    }
    out
}

pub fn check_bler(bands: &BlerBands, channel: &ChannelModel, rows: &[BlerRow]) -> Vec<BandCheck> {
    rows.iter()
        .filter(|r| r.empirical_bler >= bands.window.0 && r.empirical_bler <= bands.window.1)
        .map(|r| {
            BandCheck::new(
                format!("bler {channel} alpha={}", r.alpha),
                (r.predicted_bler - r.empirical_bler).abs(),
                0.0,
                bands.tol,
            )
        })
        .collect()
}
