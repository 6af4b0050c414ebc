//! Seed plumbing.
//!
//! One user seed fans out into named substreams (`data`, `dropout`, `mining`,
//! `kmeans`, ...) so each component is reproducible on its own. Dropout masks
//! use a stateless counter hash so a mask entry depends only on its key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a sequence of words into one 64-bit value.
#[inline]
pub fn hash_words(words: &[u64]) -> u64 {
    words.iter().fold(0x243F_6A88_85A3_08D3u64, |h, &w| splitmix64(h ^ w))
}

/// Uniform in `[0, 1)` from a hash.
#[inline]
pub fn unit_from_hash(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn name_word(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn substream_seed(seed: u64, name: &str) -> u64 {
    hash_words(&[seed, name_word(name)])
}

pub fn substream(seed: u64, name: &str) -> Rng {
    Rng::seed_from_u64(substream_seed(seed, name))
}

/// Substream further keyed by an index (e.g. a training step).
pub fn indexed_substream(seed: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(hash_words(&[seed, name_word(name), index]))
}
