//! Named random sub-streams derived from a single experiment seed.
//!
//! Each pipeline stage (split, undersample, init, dropout, ...) draws from its
//! own stream so that changing one stage never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for the stream `name` under the experiment seed.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    splitmix64(seed ^ fnv1a(name.as_bytes()))
}

pub fn substream(seed: u64, name: &str) -> StageRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name))
}

/// Stream indexed by integers as well as a name, e.g. one per (epoch, sample).
pub fn indexed_substream(seed: u64, name: &str, indices: &[u64]) -> StageRng {
    let mut s = derive_seed(seed, name);
    for &i in indices {
        s = splitmix64(s ^ i.wrapping_mul(0x2545_f491_4f6c_dd1d));
    }
    ChaCha8Rng::seed_from_u64(s)
}
