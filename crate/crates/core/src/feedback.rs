//! Chained polar feedback protocol.
//!
//! Each round the transmitter sees the channel output through a noiseless
//! feedback link, runs genie-aided SC to get the block's error set `T`, and
//! ships the indices of `T` inside later payloads. The receiver decodes a
//! block outright when plain SC succeeds and otherwise waits until every
//! index of its `T` has arrived, then replays SC with those decisions
//! flipped. One success therefore unwinds the chain of pending blocks in
//! reverse order.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::channel::ChannelModel;
use crate::error::{invalid, Error, Result};
use crate::polar::{assemble_u, encode_into, extract_payload, CodeConfig};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::sc::{CheckRule, DecoderWorkspace, ErrorIndexSet, TieCoins};

/// Serializes one-based indices zero-based, `n` bits each, MSB first.
pub fn encode_error_set(t: &ErrorIndexSet, n: u32) -> Result<Vec<u8>> {
    let mut bits = Vec::with_capacity(t.len() * n as usize);
    for &i in t.as_slice() {
        push_index(&mut bits, i, n)?;
    }
    Ok(bits)
}

fn push_index(bits: &mut Vec<u8>, i: usize, n: u32) -> Result<()> {
    if i == 0 || (i - 1) >> n != 0 {
        return invalid(format!("index {i} does not fit in {n} bits"));
    }
    bits.extend((0..n).rev().map(|b| ((i - 1) >> b & 1) as u8));
    Ok(())
}

pub fn decode_error_set(bits: &[u8], n: u32) -> Result<ErrorIndexSet> {
    if n == 0 || bits.len() % n as usize != 0 {
        return invalid(format!("{} bits is not a whole number of {n}-bit indices", bits.len()));
    }
    let indices = bits.chunks(n as usize).map(read_index).collect();
    ErrorIndexSet::new(indices)
}

fn read_index(chunk: &[u8]) -> usize {
    chunk.iter().fold(0usize, |acc, &b| acc << 1 | b as usize) + 1
}

/// Width of the optional per-payload entry count: `⌈log2(K/n + 1)⌉`.
pub fn count_header_bits(k: usize, n: u32) -> u32 {
    let max_entries = (k / n.max(1) as usize) as u64;
    crate::nb::escape_payload_bits(max_entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionOptions {
    /// Spend a fixed-width count field in every payload instead of
    /// assuming the receiver learns the entry count for free.
    pub count_header: bool,
    pub rule: CheckRule,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self { count_header: false, rule: CheckRule::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    /// Error indices of earlier blocks carried in this payload.
    pub t_prev_size: usize,
    pub new_info_bits: usize,
    /// Plain SC recovered the block (genie CRC).
    pub success: bool,
    /// `|T|` of this block.
    pub t_size: usize,
    pub resolved_at: Option<u64>,
    pub dropped: bool,
}

impl RoundRecord {
    pub fn delay(&self) -> Option<u64> {
        self.resolved_at.map(|r| r - self.round + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub block_len: usize,
    pub d_max: Option<u64>,
    pub rounds: u64,
    pub successes: u64,
    pub resolved_blocks: u64,
    pub dropped_blocks: u64,
    pub pending_blocks: u64,
    pub resolved_info_bits: u64,
    /// Information-bit mismatches in resolved blocks.
    pub residual_bit_errors: u64,
    /// Blocks whose replay failed or whose recovered bits were wrong.
    pub corrupted_blocks: u64,
    /// Rounds where SC success disagreed with `T = ∅`.
    pub success_mismatches: u64,
    /// Entries that did not fit in the next payload.
    pub deferred_entries: u64,
    pub delay_histogram: BTreeMap<u64, u64>,
    pub avg_rate: f64,
    pub avg_delay: f64,
    pub success_rate: f64,
    pub bler_at_dmax: f64,
}

impl SessionStats {
    fn empty(block_len: usize, d_max: Option<u64>) -> Self {
        Self {
            block_len,
            d_max,
            rounds: 0,
            successes: 0,
            resolved_blocks: 0,
            dropped_blocks: 0,
            pending_blocks: 0,
            resolved_info_bits: 0,
            residual_bit_errors: 0,
            corrupted_blocks: 0,
            success_mismatches: 0,
            deferred_entries: 0,
            delay_histogram: BTreeMap::new(),
            avg_rate: 0.0,
            avg_delay: f64::NAN,
            success_rate: f64::NAN,
            bler_at_dmax: 0.0,
        }
    }

    fn refresh(&mut self) {
        let r = self.rounds as f64;
        self.avg_rate = self.resolved_info_bits as f64 / (self.block_len as f64 * r);
        let delay_sum: f64 = self.delay_histogram.iter().map(|(&d, &c)| d as f64 * c as f64).sum();
        self.avg_delay = delay_sum / self.resolved_blocks as f64;
        self.success_rate = self.successes as f64 / r;
        let decided = self.resolved_blocks + self.dropped_blocks;
        self.bler_at_dmax = if decided == 0 { 0.0 } else { self.dropped_blocks as f64 / decided as f64 };
    }

    /// Pools two sessions run with the same code and delay cap.
    pub fn merge(mut self, other: &SessionStats) -> Result<Self> {
        if self.block_len != other.block_len || self.d_max != other.d_max {
            return invalid("cannot merge sessions with different block length or delay cap");
        }
        self.rounds += other.rounds;
        self.successes += other.successes;
        self.resolved_blocks += other.resolved_blocks;
        self.dropped_blocks += other.dropped_blocks;
        self.pending_blocks += other.pending_blocks;
        self.resolved_info_bits += other.resolved_info_bits;
        self.residual_bit_errors += other.residual_bit_errors;
        self.corrupted_blocks += other.corrupted_blocks;
        self.success_mismatches += other.success_mismatches;
        self.deferred_entries += other.deferred_entries;
        for (&d, &c) in &other.delay_histogram {
            *self.delay_histogram.entry(d).or_default() += c;
        }
        self.refresh();
        Ok(self)
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    pub records: Vec<RoundRecord>,
    pub stats: SessionStats,
}

struct Pending {
    llrs: Vec<f64>,
    coins: TieCoins,
    true_u: Vec<u8>,
    /// Blocks whose entries ride in this payload, in order.
    carried: Vec<u64>,
    header_count: Option<usize>,
    expected: usize,
    known: Vec<usize>,
}

struct Receiver<'a> {
    config: &'a CodeConfig,
    n: u32,
    header_bits: usize,
    ws: DecoderWorkspace,
    u_hat: Vec<u8>,
    pending: BTreeMap<u64, Pending>,
}

impl Receiver<'_> {
    /// Reads a recovered payload and hands each carried index to its block.
    fn deliver(&mut self, block: &Pending) -> bool {
        let payload = extract_payload(self.config, &self.u_hat);
        let count = block.carried.len();
        if let Some(c) = block.header_count {
            let bits = &payload[..self.header_bits];
            if bits.iter().fold(0usize, |a, &b| a << 1 | b as usize) != c || c != count {
                return false;
            }
        }
        let start = self.header_bits;
        let n = self.n as usize;
        for (k, &owner) in block.carried.iter().enumerate() {
            let idx = read_index(&payload[start + k * n..start + (k + 1) * n]);
            if let Some(p) = self.pending.get_mut(&owner) {
                p.known.push(idx);
            }
        }
        true
    }

    fn info_errors(&self, true_u: &[u8]) -> u64 {
        self.config.info_set().iter().filter(|&&i| self.u_hat[i - 1] != true_u[i - 1]).count() as u64
    }
}

/// Runs `rounds` chained blocks. `d_max = None` keeps pending blocks
/// forever; otherwise a block unresolved after `d_max` rounds is dropped
/// and counted as a block error.
pub fn run_feedback_session(
    config: &CodeConfig,
    channel: &ChannelModel,
    rounds: u64,
    d_max: Option<u64>,
    seed: u64,
    options: SessionOptions,
) -> Result<Session> {
    if rounds == 0 {
        return invalid("rounds must be at least 1");
    }
    if d_max == Some(0) {
        return invalid("maximum delay must be at least 1");
    }
    let n = config.n();
    if n == 0 {
        return invalid("block length must be at least 2");
    }
    let len = config.block_len();
    let k = config.k();
    let header_bits = if options.count_header { count_header_bits(k, n) as usize } else { 0 };
    let capacity = k.saturating_sub(header_bits) / n as usize;

    let mut rx = Receiver {
        config,
        n,
        header_bits,
        ws: DecoderWorkspace::new(len, options.rule)?,
        u_hat: vec![0u8; len],
        pending: BTreeMap::new(),
    };
    let mut tx_ws = DecoderWorkspace::new(len, options.rule)?;
    let mut queue: VecDeque<(u64, usize)> = VecDeque::new();
    let mut records: Vec<RoundRecord> = Vec::with_capacity(rounds as usize);
    let mut stats = SessionStats::empty(len, d_max);
    let mut scratch = vec![0u8; len];
    let mut x = vec![0u8; len];
    let mut errors = Vec::new();

    for round in 1..=rounds {
        let carried: Vec<(u64, usize)> = queue.drain(..capacity.min(queue.len())).collect();
        stats.deferred_entries += queue.len() as u64;
        let mut payload = Vec::with_capacity(k);
        if options.count_header {
            let c = carried.len();
            payload.extend((0..header_bits).rev().map(|b| (c >> b & 1) as u8));
        }
        for &(_, idx) in &carried {
            push_index(&mut payload, idx, n)?;
        }
        let new_bits = k - payload.len();
        let mut rng = stream_rng(seed, stream::PAYLOAD, round);
        payload.extend((0..new_bits).map(|_| rng.random::<bool>() as u8));
        let u = assemble_u(config, &payload)?.into_inner();
        encode_into(&u, &mut scratch, &mut x)?;
        let mut llrs = vec![0.0; len];
        channel.sample_llrs(&x, &mut stream_rng(seed, stream::CHANNEL, round), &mut llrs);
        let coins = TieCoins::Seeded(derive_seed(seed, stream::TIE, round));

        tx_ws.decode_genie(config, &llrs, &u, coins, &mut errors)?;
        for &i in &errors {
            queue.push_back((round, i));
        }

        rx.ws.decode(config, &llrs, coins, &mut rx.u_hat)?;
        let success = rx.u_hat == u;
        stats.successes += success as u64;
        stats.success_mismatches += (success != errors.is_empty()) as u64;
        records.push(RoundRecord {
            round,
            t_prev_size: carried.len(),
            new_info_bits: new_bits,
            success,
            t_size: errors.len(),
            resolved_at: None,
            dropped: false,
        });
        let block = Pending {
            llrs,
            coins,
            true_u: u,
            carried: carried.iter().map(|&(b, _)| b).collect(),
            header_count: options.count_header.then_some(carried.len()),
            expected: if success { 0 } else { errors.len() },
            known: Vec::new(),
        };

        let mut resolved_now: Vec<u64> = Vec::new();
        if success {
            if rx.deliver(&block) {
                resolved_now.push(round);
            } else {
                stats.corrupted_blocks += 1;
            }
        } else {
            rx.pending.insert(round, block);
        }
        // Keep replaying until no pending block gains its full error set.
        loop {
            let ready: Vec<u64> =
                rx.pending.iter().rev().filter(|(_, p)| p.known.len() == p.expected).map(|(&b, _)| b).collect();
            if ready.is_empty() {
                break;
            }
            for b in ready {
                let Some(mut p) = rx.pending.remove(&b) else { continue };
                p.known.sort_unstable();
                let replay = ErrorIndexSet::new(std::mem::take(&mut p.known))
                    .and_then(|fix| rx.ws.decode_with_corrections(config, &p.llrs, &fix, p.coins, &mut rx.u_hat));
                if replay.is_err() {
                    stats.corrupted_blocks += 1;
                    continue;
                }
                let wrong = rx.info_errors(&p.true_u);
                stats.residual_bit_errors += wrong;
                if wrong > 0 {
                    stats.corrupted_blocks += 1;
                }
                if rx.deliver(&p) {
                    resolved_now.push(b);
                } else {
                    stats.corrupted_blocks += 1;
                }
            }
        }
        for b in resolved_now {
            let rec = &mut records[b as usize - 1];
            rec.resolved_at = Some(round);
            stats.resolved_blocks += 1;
            stats.resolved_info_bits += rec.new_info_bits as u64;
            *stats.delay_histogram.entry(round - b + 1).or_default() += 1;
        }
        if let Some(cap) = d_max {
            while let Some((&b, _)) = rx.pending.first_key_value() {
                if round - b + 1 < cap {
                    break;
                }
                rx.pending.remove(&b);
                records[b as usize - 1].dropped = true;
                stats.dropped_blocks += 1;
                queue.retain(|&(owner, _)| owner != b);
            }
        }
    }
    stats.rounds = rounds;
    stats.pending_blocks = rx.pending.len() as u64;
    stats.refresh();
    Ok(Session { records, stats })
}

/// Independent sessions with seeds derived from `seed`, pooled.
pub fn run_feedback_sessions(
    config: &CodeConfig,
    channel: &ChannelModel,
    rounds_each: u64,
    sessions: u64,
    d_max: Option<u64>,
    seed: u64,
    options: SessionOptions,
) -> Result<SessionStats> {
    if sessions == 0 {
        return invalid("sessions must be at least 1");
    }
    let all: Vec<SessionStats> = (0..sessions)
        .into_par_iter()
        .map(|s| {
            run_feedback_session(config, channel, rounds_each, d_max, derive_seed(seed, stream::SESSION, s), options)
                .map(|session| session.stats)
        })
        .collect::<Result<_>>()?;
    let mut iter = all.into_iter();
    let first = iter.next().expect("at least one session");
    iter.try_fold(first, |acc, s| acc.merge(&s))
}

/// Block error rate under a delay cap compared with `(1 − p̂)^{D_max}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlerConsistency {
    pub d_max: u64,
    pub p_hat: f64,
    pub predicted: f64,
    /// Over every block whose fate is decided.
    pub empirical_all: f64,
    /// Over blocks `1, 1 + D_max, 1 + 2 D_max, …` only. Their outcomes
    /// depend on disjoint windows of rounds, so they are independent and
    /// the binomial standard deviation applies.
    pub empirical: f64,
    pub blocks: u64,
    pub sigma: f64,
    pub z: f64,
}

pub fn bler_consistency(records: &[RoundRecord], d_max: u64) -> Result<BlerConsistency> {
    if d_max == 0 {
        return invalid("maximum delay must be at least 1");
    }
    let decided = |r: &&RoundRecord| r.dropped || r.resolved_at.is_some();
    let all: Vec<&RoundRecord> = records.iter().filter(decided).collect();
    let spaced: Vec<&RoundRecord> = records.iter().step_by(d_max as usize).filter(decided).collect();
    if spaced.is_empty() {
        return Err(Error::InsufficientData("no decided blocks".into()));
    }
    let rate = |v: &[&RoundRecord]| v.iter().filter(|r| r.dropped).count() as f64 / v.len() as f64;
    let p_hat = records.iter().filter(|r| r.success).count() as f64 / records.len() as f64;
    let predicted = (1.0 - p_hat).powi(d_max as i32);
    let blocks = spaced.len() as u64;
    let empirical = rate(&spaced);
    let sigma = (predicted * (1.0 - predicted) / blocks as f64).sqrt();
    Ok(BlerConsistency {
        d_max,
        p_hat,
        predicted,
        empirical_all: rate(&all),
        empirical,
        blocks,
        sigma,
        z: if sigma > 0.0 {
            (empirical - predicted) / sigma
        } else if empirical == predicted {
            0.0
        } else {
            f64::INFINITY
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayFit {
    pub blocks: u64,
    pub p_hat: f64,
    pub mean_delay: f64,
    pub geometric_mean: f64,
    pub chi_square: f64,
    pub dof: u64,
    pub p_value: f64,
}

pub const MIN_DELAY_SAMPLES: u64 = 1000;

/// Chi-square test of the resolved delays against geometric(p̂), where p̂ is
/// the per-round success rate. Bins with expected count below 5 are pooled
/// into the tail.
pub fn delay_distribution_check(records: &[RoundRecord]) -> Result<DelayFit> {
    let delays: Vec<u64> = records.iter().filter_map(RoundRecord::delay).collect();
    let blocks = delays.len() as u64;
    if blocks < MIN_DELAY_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{blocks} resolved blocks, need at least {MIN_DELAY_SAMPLES}"
        )));
    }
    let p_hat = records.iter().filter(|r| r.success).count() as f64 / records.len() as f64;
    let total = blocks as f64;
    let mean_delay = delays.iter().sum::<u64>() as f64 / total;
    let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
    for &d in &delays {
        *hist.entry(d).or_default() += 1;
    }

    // bins 1..=last, with `last` collecting the tail
    let mut last = 1u64;
    while total * p_hat * (1.0 - p_hat).powi(last as i32) >= 5.0 {
        last += 1;
    }
    let mut chi_square = 0.0;
    for d in 1..=last {
        let expected = if d < last {
            total * p_hat * (1.0 - p_hat).powi(d as i32 - 1)
        } else {
            total * (1.0 - p_hat).powi(d as i32 - 1)
        };
        let observed: u64 = if d < last { hist.get(&d).copied().unwrap_or(0) } else { hist.range(d..).map(|(_, &c)| c).sum() };
        if expected > 0.0 {
            chi_square += (observed as f64 - expected).powi(2) / expected;
        } else if observed > 0 {
            chi_square = f64::INFINITY;
        }
    }
    // one degree lost to normalization, one to estimating p̂
    let dof = last.saturating_sub(2);
    let p_value = if dof == 0 {
        if chi_square.is_finite() {
            1.0
        } else {
            0.0
        }
    } else {
        let dist = ChiSquared::new(dof as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        1.0 - dist.cdf(chi_square)
    };
    Ok(DelayFit { blocks, p_hat, mean_delay, geometric_mean: 1.0 / p_hat, chi_square, dof, p_value })
}
