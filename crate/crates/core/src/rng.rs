//! Counter-based random substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream selected by
//! `(seed, domain, index)`. Streams for different indices never overlap, so
//! adding bins or datasets leaves earlier streams untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. The top byte of the 64-bit stream id carries the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Domain {
    Bin = 1,
    Dataset = 2,
    Replication = 3,
    Misc = 4,
}

pub fn substream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 56) | (index & 0x00ff_ffff_ffff_ffff));
    rng
}

/// Derives an independent child seed, e.g. one per Monte-Carlo replication.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ 0x5851_f42d_4c95_7f2d).wrapping_add(index))
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
