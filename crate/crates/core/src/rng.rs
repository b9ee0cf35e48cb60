//! Named deterministic random streams. There is no global random state: every
//! consumer asks for a stream by `(seed, label)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

/// Deterministic stream for `(seed, label)`. Distinct labels hash to
/// unrelated ChaCha keys.
pub fn seeded_stream(seed: u64, label: &str) -> Stream {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Child stream keyed by a draw from `parent` and a label.
pub fn substream(parent: &mut Stream, label: &str) -> Stream {
    seeded_stream(parent.next_u64(), label)
}
