//! Seed derivation for deterministic, independently replayable streams.
//!
//! Every random draw in the toolkit comes from a `ChaCha8Rng` seeded through
//! [`derive`], so disjoint work items (dataset indices, per-sample noise)
//! can be generated in any order, or in parallel, with identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-streams of the global experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Training dataset items.
    Data,
    /// Evaluation / scorer ground-truth items (parameterized by an eval seed).
    Eval,
    /// Prior network initialization and training order.
    Prior,
    /// Denoiser initialization.
    DenoiserInit,
    /// Training loop draws (indices, per-item noise).
    Train,
    /// Frozen noise used by the scorer and aligned evaluations.
    ScorerNoise,
    /// Feature projector entries.
    Projector,
    /// Generation noise for sampling commands.
    Sample,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Data => 0x01,
            Stream::Eval => 0x02,
            Stream::Prior => 0x03,
            Stream::DenoiserInit => 0x04,
            Stream::Train => 0x05,
            Stream::ScorerNoise => 0x06,
            Stream::Projector => 0x07,
            Stream::Sample => 0x08,
        }
    }
}

/// SplitMix64 finalizer; decorrelates nearby integers.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive the seed for `(stream, index)` under a root seed.
pub fn derive(root: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ splitmix64(stream.tag())) ^ splitmix64(index))
}

/// RNG for one work item of one stream.
pub fn rng(root: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, stream, index))
}
