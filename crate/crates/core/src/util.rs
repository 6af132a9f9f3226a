use std::collections::BTreeSet;

/// 64-bit FNV-1a. Used to derive per-episode seeds from stable identifiers.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub(crate) fn derive_seed(seed: u64, key: &str) -> u64 {
    seed ^ fnv1a(key.as_bytes()).rotate_left(17)
}

pub(crate) fn intersection_len(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> usize {
    a.intersection(b).count()
}
