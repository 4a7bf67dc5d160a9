//! Seeded random streams.
//!
//! Every experiment draws from ChaCha8 streams derived from one root seed.
//! Sub-streams are selected with ChaCha's 64-bit stream id so that, e.g., the
//! validation set does not shift when the training batch size changes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named sub-streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    HInit = 1,
    GenInit = 2,
    WarmStart = 3,
    Train = 4,
    Adversary = 5,
    Validation = 6,
    Test = 7,
    Audit = 8,
    Data = 9,
}

/// A fresh stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: Stream) -> Rng {
    substream(seed, stream as u64)
}

/// Stream with an arbitrary numeric id; used for per-worker or per-size splits.
pub fn substream(seed: u64, id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
