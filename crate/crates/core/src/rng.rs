//! Counter-based seed derivation.
//!
//! Every random stream in the crate is derived from a master seed plus a
//! stream tag and a counter (trial or round number), so results do not
//! depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for [`derive_seed`].
pub mod stream {
    pub const CHANNEL: u64 = 0x6368_616e;
    pub const PAYLOAD: u64 = 0x7061_796c;
    pub const TIE: u64 = 0x7469_6573;
    pub const CONSTRUCTION: u64 = 0x636f_6e73;
    pub const EVALUATION: u64 = 0x6576_616c;
    pub const SESSION: u64 = 0x7365_7373;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed, a stream tag and a counter into a fresh 64-bit seed.
#[inline]
pub fn derive_seed(master: u64, tag: u64, counter: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(tag)).wrapping_add(counter))
}

pub fn stream_rng(master: u64, tag: u64, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, counter))
}
