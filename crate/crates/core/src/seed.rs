//! Counter-based seed derivation.
//!
//! Every random object (a field, a row of the returns matrix, a member of a
//! solver ensemble) draws from its own ChaCha stream selected by
//! `(master_seed, domain, index)`. Results therefore never depend on the
//! order in which workers pick up jobs or on the number of threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Each occupies the top bits of the 64-bit stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Field = 1,
    Mrm = 2,
    Returns = 3,
    SolverEnsemble = 4,
    FreshEnsemble = 5,
    Lognormal = 6,
    Simulation = 7,
}

const DOMAIN_SHIFT: u32 = 48;

/// Returns the generator for item `index` of `domain` under `master`.
pub fn stream_rng(master: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    debug_assert!(index < (1 << DOMAIN_SHIFT));
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((domain as u64) << DOMAIN_SHIFT) | index);
    rng
}

/// Derives a child master seed (splitmix64 finalizer), used when one run
/// fans out into several independent sub-runs.
pub fn child_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
