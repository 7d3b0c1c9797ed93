//! Deterministic random streams derived from an experiment seed.
//!
//! Every consumer of randomness asks for a stream keyed by
//! `(seed, iteration, purpose)`, so a run can be resumed at any iteration
//! without replaying the generator state of earlier iterations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// What a stream is used for. Discriminants are part of the checkpoint
/// contract and must not be renumbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    InitialDesign = 1,
    GpFit = 2,
    Scenarios = 3,
    AcquisitionStarts = 4,
    RandomTrial = 5,
    Imputation = 6,
    Generic = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, index: u64, purpose: Purpose) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    rng.set_stream(splitmix64(index.wrapping_mul(16).wrapping_add(purpose as u64)));
    rng
}
