//! Deterministic per-purpose random streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for. Distinct tags never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ModelInit = 1,
    Selection = 2,
    LocalTraining = 3,
    TrainData = 4,
    TestData = 5,
    Partition = 6,
}

// SplitMix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `(root, stream, round, client)`.
pub fn derive_seed(root: u64, stream: Stream, round: u64, client: u64) -> u64 {
    [stream as u64, round, client]
        .into_iter()
        .fold(mix(root), |acc, part| mix(acc ^ mix(part)))
}

pub fn stream_rng(root: u64, stream: Stream, round: u64, client: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream, round, client))
}
