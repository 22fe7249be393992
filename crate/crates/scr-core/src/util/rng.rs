//! Deterministic RNG streams derived from a root seed.
//!
//! Every consumer of randomness draws from its own named stream so that
//! adding draws in one place never shifts the values seen by another. The
//! stream key is a hash of the root seed, a label, and an index, which makes
//! the derivation stable across platforms and releases.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// RNG for `(seed, label)`, independent of draw counts on other streams.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    substream(seed, label, 0)
}

/// Indexed variant of [`stream`] for per-item draws (one stream per scene,
/// per batch, per episode).
pub fn substream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([0xff]);
    h.update(label.as_bytes());
    h.update([0xfe]);
    h.update(index.to_le_bytes());
    let key: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_stable_and_independent() {
        let a: u64 = stream(7, "alpha").gen();
        let b: u64 = stream(7, "alpha").gen();
        assert_eq!(a, b);
        let c: u64 = stream(7, "beta").gen();
        assert_ne!(a, c);
        let d: u64 = substream(7, "alpha", 1).gen();
        assert_ne!(a, d);
    }
}
