//! Seeding discipline.
//!
//! Every random draw comes from a ChaCha8 generator keyed by a 64-bit seed
//! and addressed by a stream id. Streams never overlap, so the symbol, channel
//! and noise sequences can each be regenerated without touching the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named substreams. The high 32 bits of a stream id carry the purpose,
/// the low 32 bits an index (trial, epoch, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Stream {
    Symbols = 1,
    Channel = 2,
    Noise = 3,
    Distortion = 4,
    NetInit = 5,
    Shuffle = 6,
}

pub fn stream_rng(seed: u64, stream: Stream, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | index as u64);
    rng
}

/// SplitMix64 finalizer, used to derive independent child seeds.
pub fn derive_seed(parent: u64, tag: u64) -> u64 {
    let mut z = parent ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
