//! Named random substreams derived from a single experiment seed.
//!
//! Each consumer (placement, permutation, noise, ...) gets an independent
//! ChaCha stream keyed by `sha256(seed || name)`, so adding a consumer never
//! perturbs the draws of another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const PLACEMENT: &str = "placement";
pub const PERMUTATION: &str = "permutation";
pub const NOISE: &str = "noise";

pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}
