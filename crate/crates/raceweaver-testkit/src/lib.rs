//! Test-only companions for the raceweaver crates: seeded random generators
//! for KIR modules and brute-force oracles (path enumeration) against which
//! the analytic implementations are checked.
//!
//! Nothing in here ships in a production build; both raceweaver crates pull
//! this in as a dev-dependency only.

pub mod domorc;
pub mod gen;
pub mod lockorc;
pub mod structorc;

pub use gen::{
    gen_cfg_function, gen_chain_case, gen_module, gen_type_table, ChainCase, GenOptions,
    EXT_ACQUIRE, EXT_RELEASE,
};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

// Re-exported so test crates can draw values and shuffle slices without
// depending on `rand` themselves.
pub use rand::seq::SliceRandom;
pub use rand::Rng;
pub use rand_chacha::ChaCha8Rng as TestRng;

/// Deterministic RNG for reproducible test corpora.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
