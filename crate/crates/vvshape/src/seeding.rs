//! Deterministic seed derivation for independent random substreams.
//!
//! Every source of randomness in the crate (constellation perturbation,
//! payload bits, channel noise, phase walks, sweep repetitions) draws from
//! its own ChaCha8 stream derived from one root seed, a stream kind, and an
//! index. Runs are therefore reproducible bit for bit, including under
//! parallel evaluation, and changing e.g. the number of batches never
//! shifts the noise another component sees.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Substream kinds. The kind occupies the top byte of the ChaCha stream id,
/// the index the low 56 bits.
pub mod stream {
    /// Parameter initialization (constellation perturbation, demapper weights).
    pub const INIT: u64 = 1;
    /// Payload bits.
    pub const BITS: u64 = 2;
    /// Additive channel noise.
    pub const NOISE: u64 = 3;
    /// Phase random walk.
    pub const PHASE: u64 = 4;
    /// Initial phase offset.
    pub const PHASE0: u64 = 5;
    /// Per-repetition seeds of an evaluation sweep.
    pub const SWEEP: u64 = 6;
    /// Per-batch channel seeds during training.
    pub const CHANNEL: u64 = 7;
    /// Post-training gauge measurement.
    pub const GAUGE: u64 = 8;
}

const INDEX_BITS: u32 = 56;

/// ChaCha8 generator for (`root`, `kind`, `index`).
pub fn rng(root: u64, kind: u64, index: u64) -> ChaCha8Rng {
    assert!(kind < 256, "stream kind out of range");
    assert!(index < 1 << INDEX_BITS, "stream index out of range");
    let mut r = ChaCha8Rng::seed_from_u64(root);
    r.set_stream((kind << INDEX_BITS) | index);
    r
}

/// Fresh u64 seed for (`root`, `kind`, `index`), for handing to components
/// that take a seed rather than a generator.
pub fn derive_seed(root: u64, kind: u64, index: u64) -> u64 {
    rng(root, kind, index).next_u64()
}
