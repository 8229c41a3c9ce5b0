//! Seeded substream derivation.
//!
//! Every consumer of randomness gets its own stream keyed by
//! `(master seed, domain, round, unit)`. Streams are independent by
//! construction, so changing the evaluation cadence, the thread count, or
//! how often one consumer draws can never perturb another consumer.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Named randomness consumers. Each domain owns a disjoint seed space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    ModelInit = 0,
    Partition = 1,
    ClientSampling = 2,
    DispatchShuffle = 3,
    LocalTraining = 4,
    DataSynthesis = 5,
    TestSplit = 6,
}

/// Dedicated RNG stream for one `(domain, round, unit)` cell.
///
/// The four key fields are packed into disjoint bytes of the ChaCha seed,
/// so distinct cells can never collide.
pub fn substream(master_seed: u64, domain: Domain, round: u64, unit: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    seed[16..24].copy_from_slice(&round.to_le_bytes());
    seed[24..32].copy_from_slice(&unit.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Collapses a substream cell to a plain `u64` for APIs that take a seed.
pub fn derive_seed(master_seed: u64, domain: Domain, round: u64, unit: u64) -> u64 {
    substream(master_seed, domain, round, unit).next_u64()
}
