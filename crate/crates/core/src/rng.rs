//! Named random streams derived from the global seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

/// Independent stream for `(seed, purpose, ids)`. Distinct purposes or ids give
/// unrelated streams; the same triple always gives the same stream.
pub fn stream(seed: u64, purpose: &str, ids: &[u64]) -> Stream {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    for id in ids {
        h.update(id.to_le_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}
