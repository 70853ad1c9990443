//! Seed derivation.
//!
//! Every consumer of randomness (fold shuffles, network init, dropout,
//! bootstrap tables, augmentation draws) gets its own stream keyed by the
//! master seed, a purpose tag and a tuple of integers. Streams never share
//! state, so the schedule of parallel workers cannot change any draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `(master, purpose, parts)` into a 64-bit seed.
pub fn derive_seed(master: u64, purpose: &str, parts: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for chunk in purpose.as_bytes().chunks(8) {
        let mut buf = [0u8; 8];
        buf[..chunk.len()].copy_from_slice(chunk);
        h = splitmix64(h ^ u64::from_le_bytes(buf));
    }
    // length terminator keeps "ab"+[..] distinct from "a"+[..]
    h = splitmix64(h ^ purpose.len() as u64);
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

/// Hashes an arbitrary string id into a part usable with [`derive_seed`].
pub fn id_part(id: &str) -> u64 {
    derive_seed(0, id, &[])
}

pub fn stream(master: u64, purpose: &str, parts: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, parts))
}
