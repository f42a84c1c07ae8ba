//! Deterministic seed derivation.
//!
//! Every randomized stage (walks, embedding init, negative sampling, SGD
//! sampling, splits) draws from its own stream derived from a root seed and
//! a label, so results do not depend on scheduling or on how many draws
//! other stages made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte slice; stable across platforms and releases.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a root seed with labelled parts into an independent stream seed.
pub fn derive_seed(root: u64, parts: &[&[u8]]) -> u64 {
    let mut s = splitmix(root);
    for part in parts {
        s = splitmix(s ^ stable_hash(part));
    }
    s
}

/// Counter-based stream for one (node, walk index) pair.
pub fn walk_stream(root: u64, node_id: &str, walk_index: usize) -> ChaCha8Rng {
    let seed = derive_seed(
        root,
        &[b"walk", node_id.as_bytes(), &walk_index.to_le_bytes()],
    );
    seeded_rng(seed)
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
