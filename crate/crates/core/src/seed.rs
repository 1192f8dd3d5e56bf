//! Labelled seed derivation: every random stream is a pure function of
//! the root seed and a label path, so components never share RNG state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix_bytes(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive a child seed from `root`, a label and a list of integer parts.
pub fn derive(root: u64, label: &str, parts: &[u64]) -> u64 {
    let mut h = mix_bytes(FNV_OFFSET ^ splitmix(root), label.as_bytes());
    for p in parts {
        h = mix_bytes(h, &p.to_le_bytes());
    }
    splitmix(h)
}

/// Same as [`derive`] with a string part (e.g. a sample id).
pub fn derive_str(root: u64, label: &str, part: &str) -> u64 {
    let h = mix_bytes(FNV_OFFSET ^ splitmix(root), label.as_bytes());
    splitmix(mix_bytes(mix_bytes(h, &[0xff]), part.as_bytes()))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
