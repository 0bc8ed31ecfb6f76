//! FNV-1a 64-bit hashing for deterministic seeding and output fingerprints.

pub const FNV_OFFSET: u64 = 0xcbf29ce484222325;
pub const FNV_PRIME: u64 = 0x100000001b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    fnv1a_continue(FNV_OFFSET, bytes)
}

pub fn fnv1a_continue(state: u64, bytes: &[u8]) -> u64 {
    let mut h = state;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Stable seed for a named substream of a global seed.
pub fn seed_for(global_seed: u64, name: &str) -> u64 {
    let h = fnv1a_continue(FNV_OFFSET, &global_seed.to_le_bytes());
    fnv1a_continue(h, name.as_bytes())
}

/// Fingerprint of an f64 buffer via exact bit patterns.
pub fn hash_f64s(values: &[f64]) -> u64 {
    let mut h = FNV_OFFSET;
    for v in values {
        h = fnv1a_continue(h, &v.to_bits().to_le_bytes());
    }
    h
}
