//! Deterministic seed derivation.
//!
//! Every run owns a single base seed; each randomized stage derives its own
//! seed as `mix(base ^ fnv1a(stage_name))`. The derivation is stable across
//! platforms and releases, so any stage can be reproduced in isolation.

/// FNV-1a over the stage name.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; scrambles the combined value so nearby base seeds
/// give unrelated streams.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed for a named stage from the run's base seed.
pub fn derive_seed(base: u64, stage: &str) -> u64 {
    mix(base ^ fnv1a(stage.as_bytes()))
}

/// Stable content hash used to tag datasets in chain logs and bundles.
pub fn hash_f64_u64(xs: &[f64], ts: &[u64]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let mut eat = |v: u64| {
        for &b in v.to_le_bytes().iter() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(xs.len() as u64);
    for &x in xs {
        eat(x.to_bits());
    }
    eat(ts.len() as u64);
    for &t in ts {
        eat(t);
    }
    h
}
