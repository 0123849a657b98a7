//! Counter-based seed derivation.
//!
//! Every randomized operation takes an explicit `u64` seed. Derived streams
//! (episode `i` of a stream, the init seed of a sub-module, ...) are obtained
//! by mixing the parent seed with a tag and an index through SplitMix64, so a
//! child depends only on `(parent, tag, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Seed of the `index`-th element of a stream rooted at `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Seed of a named sub-stream (e.g. `"backbone"`, `"train/3"`).
pub fn derive_tagged(seed: u64, tag: &str, index: u64) -> u64 {
    derive_seed(splitmix64(seed ^ tag_hash(tag)), index)
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
