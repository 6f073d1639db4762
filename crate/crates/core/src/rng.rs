//! Named, seed-derived random substreams.
//!
//! Every random quantity in a run is drawn from a ChaCha8 stream whose key is
//! `SHA-256(master_seed || name)`. Streams are independent of each other, so
//! resizing one synapse group never perturbs the draws of another, and no
//! stream position ever needs to be persisted: the name carries all of it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

/// Derive the stream called `name` from `master_seed`.
pub fn substream(master_seed: u64, name: &str) -> SimRng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Derive a 64-bit child seed, for APIs that take a plain seed.
pub fn derive_seed(master_seed: u64, name: &str) -> u64 {
    use rand::RngCore;
    substream(master_seed, name).next_u64()
}
