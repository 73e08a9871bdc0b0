//! Deterministic stream derivation. Every random draw in the crate comes from
//! a ChaCha8 stream keyed by (seed, context label, ...), so reruns with the
//! same seed are bit-identical and independent stages never share a stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, used to fold string labels into stream keys. Stable across
/// platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn seed_bytes(a: u64, b: u64, c: u64, d: u64) -> [u8; 32] {
    let mut out = [0u8; 32];
    out[0..8].copy_from_slice(&a.to_le_bytes());
    out[8..16].copy_from_slice(&b.to_le_bytes());
    out[16..24].copy_from_slice(&c.to_le_bytes());
    out[24..32].copy_from_slice(&d.to_le_bytes());
    out
}

/// An independent stream for a named stage (e.g. "synth/labels").
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(seed_bytes(seed, fnv1a64(label.as_bytes()), 0, 0))
}

/// An independent stream for a named stage at a given epoch.
pub fn epoch_stream(seed: u64, label: &str, epoch: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(seed_bytes(seed, fnv1a64(label.as_bytes()), epoch, 1))
}

/// The per-instance stream used for ignore-set sampling: a pure function of
/// (seed, epoch, instance id), so batch composition and storage order do not
/// affect the draws an instance sees.
pub fn instance_stream(seed: u64, epoch: u64, instance_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(seed_bytes(
        seed,
        fnv1a64(b"instance"),
        epoch,
        fnv1a64(instance_id.as_bytes()),
    ))
}
