//! Named RNG substreams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] whose 32-byte
//! key is derived from the tuple `(seed, purpose, client, round, iteration)`:
//!
//! ```text
//! s = seed
//! for x in [purpose.tag(), client, round, iteration]:
//!     s = splitmix64(s ^ splitmix64(x))
//! key = splitmix64(s + 1) || splitmix64(s + 2) || splitmix64(s + 3) || splitmix64(s + 4)
//! ```
//!
//! Each `splitmix64` output is written little-endian. A port that implements
//! the same derivation and the ChaCha8 block function reproduces the raw
//! 32-bit word sequence bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a substream is used for. The tag values are part of the derivation
/// and must not be renumbered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    DataPositive,
    DataNegative,
    EvalSplit,
    Heterogeneity,
    LabelFlip,
    ModelInit,
    Bootstrap,
    LocalStep,
    BufferNeg,
    BufferPos,
    MonteCarlo,
}

impl Purpose {
    pub fn tag(self) -> u64 {
        match self {
            Purpose::DataPositive => 1,
            Purpose::DataNegative => 2,
            Purpose::EvalSplit => 3,
            Purpose::Heterogeneity => 4,
            Purpose::LabelFlip => 5,
            Purpose::ModelInit => 6,
            Purpose::Bootstrap => 7,
            Purpose::LocalStep => 8,
            Purpose::BufferNeg => 9,
            Purpose::BufferPos => 10,
            Purpose::MonteCarlo => 11,
        }
    }
}

#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_key(seed: u64, purpose: Purpose, client: u64, round: u64, iteration: u64) -> [u8; 32] {
    let mut s = seed;
    for x in [purpose.tag(), client, round, iteration] {
        s = splitmix64(s ^ splitmix64(x));
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(s.wrapping_add(i as u64 + 1)).to_le_bytes());
    }
    key
}

/// Open the substream for `(seed, purpose, client, round, iteration)`.
pub fn substream(seed: u64, purpose: Purpose, client: usize, round: usize, iteration: usize) -> StreamRng {
    ChaCha8Rng::from_seed(derive_key(
        seed,
        purpose,
        client as u64,
        round as u64,
        iteration as u64,
    ))
}
