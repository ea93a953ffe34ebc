//! Named random streams derived from one root seed.
//!
//! Every stochastic component asks for its own stream by name, so changing
//! how many numbers one stage draws never perturbs another stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate. ChaCha output is stable across
/// platforms and crate versions, which the determinism contracts rely on.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives the seed of stream `name` from `root`.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    splitmix64(root ^ fnv1a64(name.as_bytes()))
}

/// Derives the seed of the `index`-th member of stream `name`.
pub fn derive_indexed_seed(root: u64, name: &str, index: u64) -> u64 {
    splitmix64(derive_seed(root, name).wrapping_add(splitmix64(index)))
}

pub fn stream(root: u64, name: &str) -> Rng {
    rng_from_seed(derive_seed(root, name))
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
