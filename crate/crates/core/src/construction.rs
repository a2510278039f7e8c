//! Reliability profiles and threshold-based frozen-set selection.
//!
//! On the BEC the per-position error probability of genie-aided SC is
//! `Z_i / 2` exactly. Other channels are estimated by counting genie-aided
//! first-decision errors over random trials.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelModel;
use crate::error::{invalid, Error, Result};
use crate::montecarlo::ga_trials;
use crate::polar::{log2_exact, CodeConfig};
use crate::sc::CheckRule;

/// Default number of construction trials for Monte Carlo profiles.
pub const DEFAULT_CONSTRUCTION_TRIALS: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProfileSource {
    ExactBec,
    MonteCarlo { trials: u64, seed: u64, rule: CheckRule },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityProfile {
    pub block_len: usize,
    /// `pe[i-1]` estimates `P(Û_i ≠ U_i | U_1^{i-1}, Y)`.
    pub pe: Vec<f64>,
    pub source: ProfileSource,
    pub channel: ChannelModel,
}

impl ReliabilityProfile {
    pub fn new(channel: ChannelModel, pe: Vec<f64>, source: ProfileSource) -> Result<Self> {
        log2_exact(pe.len())?;
        if let Some(bad) = pe.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return invalid(format!("error probability {bad} outside [0, 1]"));
        }
        Ok(Self { block_len: pe.len(), pe, source, channel })
    }

    pub fn n(&self) -> u32 {
        self.block_len.trailing_zeros()
    }
}

/// Bhattacharyya parameters of the `N` synthetic channels of BEC(p), in
/// `W_N^(i)` order.
pub fn bec_bhattacharyya_profile(p: f64, block_len: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&p) {
        return invalid(format!("erasure probability {p} outside [0, 1]"));
    }
    let n = log2_exact(block_len)?;
    Ok(bhattacharyya_levels(p, n).pop().expect("at least one level"))
}

/// All levels `Z_1, Z_2, Z_4, …, Z_{2^n}` of the BEC recursion.
pub(crate) fn bhattacharyya_levels(p: f64, n: u32) -> Vec<Vec<f64>> {
    let mut levels = vec![vec![p]];
    for _ in 0..n {
        let prev = levels.last().expect("non-empty");
        let mut next = Vec::with_capacity(prev.len() * 2);
        for &z in prev {
            next.push(2.0 * z - z * z);
            next.push(z * z);
        }
        levels.push(next);
    }
    levels
}

/// Exact genie-aided SC error profile of BEC(p): `pe_i = Z_i / 2`.
pub fn bec_reliability_profile(p: f64, block_len: usize) -> Result<ReliabilityProfile> {
    let z = bec_bhattacharyya_profile(p, block_len)?;
    ReliabilityProfile::new(ChannelModel::bec(p)?, z.into_iter().map(|z| z / 2.0).collect(), ProfileSource::ExactBec)
}

/// Genie-aided Monte Carlo estimate: `pe_i` is the fraction of trials in
/// which the first decision at position `i` was wrong.
pub fn mc_reliability_profile(
    channel: &ChannelModel,
    block_len: usize,
    trials: u64,
    seed: u64,
) -> Result<ReliabilityProfile> {
    mc_reliability_profile_with(channel, block_len, trials, seed, CheckRule::default())
}

pub fn mc_reliability_profile_with(
    channel: &ChannelModel,
    block_len: usize,
    trials: u64,
    seed: u64,
    rule: CheckRule,
) -> Result<ReliabilityProfile> {
    let n = log2_exact(block_len)?;
    let config = CodeConfig::all_information(n)?;
    let counts = ga_trials(
        channel,
        &config,
        trials,
        seed,
        rule,
        || vec![0u64; block_len],
        |acc, view| {
            for &i in view.errors {
                acc[i - 1] += 1;
            }
        },
        |mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        },
    )?;
    let pe = counts.into_iter().map(|c| c as f64 / trials as f64).collect();
    ReliabilityProfile::new(*channel, pe, ProfileSource::MonteCarlo { trials, seed, rule })
}

/// Exact profile on the BEC, Monte Carlo otherwise.
pub fn reliability_profile(channel: &ChannelModel, block_len: usize, trials: u64, seed: u64) -> Result<ReliabilityProfile> {
    match *channel {
        ChannelModel::Bec { erasure_prob } => bec_reliability_profile(erasure_prob, block_len),
        _ => mc_reliability_profile(channel, block_len, trials, seed),
    }
}

/// `1 / log2(N)`.
pub fn optimal_threshold(block_len: usize) -> Result<f64> {
    if block_len < 2 {
        return invalid("optimal threshold needs N >= 2");
    }
    let n = log2_exact(block_len)?;
    Ok(1.0 / n as f64)
}

/// Freezes every position whose error probability strictly exceeds
/// `threshold`.
pub fn select_frozen_set(profile: &ReliabilityProfile, threshold: f64) -> Result<CodeConfig> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return invalid(format!("threshold {threshold} outside (0, 1]"));
    }
    let info: Vec<usize> = (1..=profile.block_len).filter(|&i| profile.pe[i - 1] <= threshold).collect();
    CodeConfig::from_info_set(profile.n(), &info, threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSidecar {
    pub channel: ChannelModel,
    pub block_len: usize,
    pub source: ProfileSource,
}

/// Cache file stem for a profile key.
pub fn profile_cache_stem(channel: &ChannelModel, block_len: usize, source: &ProfileSource) -> String {
    match source {
        ProfileSource::ExactBec => format!("profile_{}_N{block_len}_exact", channel.slug()),
        ProfileSource::MonteCarlo { trials, seed, rule } => {
            let suffix = match rule {
                CheckRule::Exact => "",
                CheckRule::MinSum => "_minsum",
            };
            format!("profile_{}_N{block_len}_t{trials}_s{seed}{suffix}", channel.slug())
        }
    }
}

/// Writes `<dir>/<stem>.csv` (`index,pe`, zero-based) and `<stem>.json`.
pub fn write_profile(dir: &Path, profile: &ReliabilityProfile) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let stem = profile_cache_stem(&profile.channel, profile.block_len, &profile.source);
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut out = std::io::BufWriter::new(fs::File::create(&csv_path)?);
    writeln!(out, "index,pe")?;
    for (i, pe) in profile.pe.iter().enumerate() {
        writeln!(out, "{i},{pe:e}")?;
    }
    out.flush()?;
    let sidecar = ProfileSidecar { channel: profile.channel, block_len: profile.block_len, source: profile.source };
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(csv_path)
}

/// Reads a profile written by [`write_profile`].
pub fn read_profile(csv_path: &Path) -> Result<ReliabilityProfile> {
    let sidecar: ProfileSidecar = serde_json::from_str(&fs::read_to_string(csv_path.with_extension("json"))?)?;
    let text = fs::read_to_string(csv_path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("index,pe") {
        return invalid(format!("{} lacks the `index,pe` header", csv_path.display()));
    }
    let mut pe = vec![f64::NAN; sidecar.block_len];
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (i, v) = line
            .split_once(',')
            .ok_or_else(|| Error::InvalidArgument(format!("malformed profile row `{line}`")))?;
        let i: usize = i.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad index in `{line}`")))?;
        let v: f64 = v.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad value in `{line}`")))?;
        *pe.get_mut(i).ok_or_else(|| Error::InvalidArgument(format!("index {i} out of range")))? = v;
    }
    if pe.iter().any(|v| v.is_nan()) {
        return invalid(format!("{} is missing rows", csv_path.display()));
    }
    ReliabilityProfile::new(sidecar.channel.validate()?, pe, sidecar.source)
}

/// [`reliability_profile`] backed by an on-disk cache keyed by
/// `(channel, N, trials, seed)` (and the check rule when it is not the
/// default).
pub fn cached_reliability_profile(
    dir: &Path,
    channel: &ChannelModel,
    block_len: usize,
    trials: u64,
    seed: u64,
    rule: CheckRule,
) -> Result<ReliabilityProfile> {
    let source = match channel {
        ChannelModel::Bec { .. } => ProfileSource::ExactBec,
        _ => ProfileSource::MonteCarlo { trials, seed, rule },
    };
    let path = dir.join(format!("{}.csv", profile_cache_stem(channel, block_len, &source)));
    if path.exists() {
        if let Ok(profile) = read_profile(&path) {
            if profile.channel == *channel && profile.source == source {
                return Ok(profile);
            }
        }
    }
    let profile = match channel {
        ChannelModel::Bec { erasure_prob } => bec_reliability_profile(*erasure_prob, block_len)?,
        _ => mc_reliability_profile_with(channel, block_len, trials, seed, rule)?,
    };
    write_profile(dir, &profile)?;
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn bec_profile_small_cases() {
        assert_eq!(bec_bhattacharyya_profile(0.5, 2).unwrap(), vec![0.75, 0.25]);
        // (0.75 -> 0.9375, 0.5625), (0.25 -> 0.4375, 0.0625)
        assert_eq!(bec_bhattacharyya_profile(0.5, 4).unwrap(), vec![0.9375, 0.5625, 0.4375, 0.0625]);
        assert!(bec_bhattacharyya_profile(1.5, 4).is_err());
        assert!(bec_bhattacharyya_profile(0.5, 6).is_err());
    }

    #[test]
    fn bec_sum_is_conserved() {
        for p in [0.0, 0.11, 0.3, 0.5, 0.7, 1.0] {
            for n in 0..=14 {
                let z = bec_bhattacharyya_profile(p, 1 << n).unwrap();
                let sum: f64 = z.iter().sum();
                assert_abs_diff_eq!(sum, (1 << n) as f64 * p, epsilon = 1e-12 * (1 << n) as f64);
            }
        }
    }

    #[test]
    fn optimal_threshold_values() {
        assert_abs_diff_eq!(optimal_threshold(1024).unwrap(), 0.1, epsilon = 1e-15);
        assert_eq!(optimal_threshold(2).unwrap(), 1.0);
        assert_abs_diff_eq!(optimal_threshold(2048).unwrap(), 1.0 / 11.0, epsilon = 1e-15);
        assert!(optimal_threshold(1).is_err());
        assert!(optimal_threshold(1000).is_err());
    }

    fn two_point(a: f64, b: f64) -> ReliabilityProfile {
        ReliabilityProfile::new(ChannelModel::bsc(0.11).unwrap(), vec![a, b], ProfileSource::ExactBec).unwrap()
    }

    #[test]
    fn selection_examples() {
        let prof = two_point(0.1958, 0.11);
        let cfg = select_frozen_set(&prof, 0.15).unwrap();
        assert_eq!(cfg.frozen_set(), &[1]);
        assert_eq!(cfg.info_set(), &[2]);
        let cfg = select_frozen_set(&prof, 0.05).unwrap();
        assert_eq!(cfg.frozen_set(), &[1, 2]);
        assert!(cfg.info_set().is_empty());
        let tie = two_point(0.2, 0.1);
        assert_eq!(select_frozen_set(&tie, 0.1).unwrap().info_set(), &[2]);
        assert!(select_frozen_set(&prof, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn frozen_sets_shrink_as_threshold_grows(
            pe in proptest::collection::vec(0.0f64..=1.0, 32),
            a in 0.001f64..1.0,
            b in 0.001f64..1.0,
        ) {
            let prof = ReliabilityProfile::new(ChannelModel::bec(0.5).unwrap(), pe, ProfileSource::ExactBec).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let f_lo = select_frozen_set(&prof, lo).unwrap();
            let f_hi = select_frozen_set(&prof, hi).unwrap();
            prop_assert!(f_hi.frozen_set().iter().all(|i| f_lo.frozen_set().contains(i)));
        }
    }

    #[test]
    fn noiseless_mc_profile_is_zero() {
        let prof = mc_reliability_profile(&ChannelModel::bec(0.0).unwrap(), 64, 200, 1).unwrap();
        assert!(prof.pe.iter().all(|&v| v == 0.0));
    }

    fn within_3_sigma(est: f64, truth: f64, trials: u64) -> bool {
        let sigma = (truth * (1.0 - truth) / trials as f64).sqrt();
        (est - truth).abs() <= 3.0 * sigma
    }

    #[test]
    fn mc_profile_n2_bec_and_bsc() {
        let trials = 1_000_000;
        let bec = mc_reliability_profile(&ChannelModel::bec(0.5).unwrap(), 2, trials, 7).unwrap();
        assert!(within_3_sigma(bec.pe[0], 0.375, trials), "{:?}", bec.pe);
        assert!(within_3_sigma(bec.pe[1], 0.125, trials), "{:?}", bec.pe);
        // W_2^(1) is BSC(2p(1-p)); W_2^(2) with fair tie-breaking errs w.p. p
        let p = 0.11;
        let bsc = mc_reliability_profile(&ChannelModel::bsc(p).unwrap(), 2, trials, 8).unwrap();
        assert!(within_3_sigma(bsc.pe[0], 2.0 * p * (1.0 - p), trials), "{:?}", bsc.pe);
        assert!(within_3_sigma(bsc.pe[1], p * p + p * (1.0 - p), trials), "{:?}", bsc.pe);
    }

    #[test]
    fn mc_profile_converges_to_exact_bec() {
        let trials = 20_000;
        let exact = bec_reliability_profile(0.5, 64).unwrap();
        let mc = mc_reliability_profile(&ChannelModel::bec(0.5).unwrap(), 64, trials, 3).unwrap();
        let outliers = exact.pe.iter().zip(&mc.pe).filter(|(&t, &e)| !within_3_sigma(e, t, trials)).count();
        // 64 independent 3-sigma checks; allow one stray
        assert!(outliers <= 1, "{outliers} positions outside 3 sigma");
    }

    #[test]
    fn mc_profile_is_reproducible() {
        let ch = ChannelModel::biawgn(0.9).unwrap();
        let a = mc_reliability_profile(&ch, 32, 1000, 5).unwrap();
        let b = mc_reliability_profile(&ch, 32, 1000, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn profile_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ch = ChannelModel::bsc(0.11).unwrap();
        let first = cached_reliability_profile(dir.path(), &ch, 16, 500, 9, CheckRule::default()).unwrap();
        let stem = profile_cache_stem(&ch, 16, &first.source);
        let csv = dir.path().join(format!("{stem}.csv"));
        assert!(csv.exists() && csv.with_extension("json").exists());
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("index,pe\n0,"));
        let again = read_profile(&csv).unwrap();
        assert_eq!(first, again);
        assert_eq!(cached_reliability_profile(dir.path(), &ch, 16, 500, 9, CheckRule::default()).unwrap(), first);
    }
}
