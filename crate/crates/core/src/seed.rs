//! Seed fan-out.
//!
//! A single master seed is expanded into named, independent substreams by
//! hashing a label and a tuple of integer identifiers. Substreams do not
//! depend on the order in which they are requested, which keeps parallel
//! generation reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

fn fnv1a64_extend(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

// splitmix64 finalizer; FNV alone mixes the high bits poorly.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed for the substream `label` keyed by `ids`.
pub fn derive_seed(master: u64, label: &str, ids: &[u64]) -> u64 {
    let mut h = fnv1a64_extend(FNV_OFFSET, &master.to_le_bytes());
    h = fnv1a64_extend(h, label.as_bytes());
    for id in ids {
        h = fnv1a64_extend(h, &id.to_le_bytes());
    }
    mix(h)
}

pub fn substream(master: u64, label: &str, ids: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, ids))
}

/// Serializes a `u64` as a hex string; TOML integers are signed 64-bit.
pub mod hex_u64 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(s.trim_start_matches("0x"), 16).map_err(D::Error::custom)
    }
}
