//! Deterministic random streams derived from a single master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// 32 bytes of `SHA-256(master ‖ component ‖ index)`.
pub fn derive_seed(master: u64, component: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((component.len() as u64).to_le_bytes());
    h.update(component.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

/// An independent ChaCha stream for `(master, component, index)`.
pub fn stream(master: u64, component: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master, component, index))
}
