//! Trial-parallel genie-aided SC simulation.
//!
//! Trial `t` draws its payload, channel noise and tie coins from streams
//! derived from `(seed, t)`, and accumulators merge associatively, so the
//! result is independent of the number of worker threads.

use rand::Rng;
use rayon::prelude::*;

use crate::channel::ChannelModel;
use crate::error::{invalid, Result};
use crate::polar::{encode_into, CodeConfig};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::sc::{CheckRule, DecoderWorkspace, TieCoins};

const CHUNK: u64 = 256;

/// Fills information positions of `u` with random bits, zeros elsewhere.
pub(crate) fn random_u<R: Rng + ?Sized>(config: &CodeConfig, rng: &mut R, u: &mut [u8]) {
    u.fill(0);
    let mut word = 0u64;
    let mut left = 0;
    for &i in config.info_set() {
        if left == 0 {
            word = rng.random();
            left = 64;
        }
        u[i - 1] = (word & 1) as u8;
        word >>= 1;
        left -= 1;
    }
}

/// Everything one trial produced, borrowed for the fold callback.
pub struct TrialView<'a> {
    pub trial: u64,
    pub u: &'a [u8],
    pub llrs: &'a [f64],
    pub coins: TieCoins,
    pub errors: &'a [usize],
}

/// Runs `trials` independent GA-SC trials of `config` over `channel` and
/// folds each trial's error set into an accumulator.
pub fn ga_trials<A, I, F, M>(
    channel: &ChannelModel,
    config: &CodeConfig,
    trials: u64,
    seed: u64,
    rule: CheckRule,
    init: I,
    fold: F,
    merge: M,
) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, &TrialView<'_>) + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    if trials == 0 {
        return invalid("trials must be at least 1");
    }
    let len = config.block_len();
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<A> {
            let mut acc = init();
            let mut ws = DecoderWorkspace::new(len, rule)?;
            let mut u = vec![0u8; len];
            let mut x = vec![0u8; len];
            let mut scratch = vec![0u8; len];
            let mut llrs = vec![0.0; len];
            let mut errors = Vec::new();
            for trial in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                random_u(config, &mut stream_rng(seed, stream::PAYLOAD, trial), &mut u);
                encode_into(&u, &mut scratch, &mut x)?;
                channel.sample_llrs(&x, &mut stream_rng(seed, stream::CHANNEL, trial), &mut llrs);
                let coins = TieCoins::Seeded(derive_seed(seed, stream::TIE, trial));
                ws.decode_genie(config, &llrs, &u, coins, &mut errors)?;
                fold(&mut acc, &TrialView { trial, u: &u, llrs: &llrs, coins, errors: &errors });
            }
            Ok(acc)
        })
        .try_reduce(&init, |a, b| Ok(merge(a, b)))
}
