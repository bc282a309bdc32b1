//! Core analysis library for raceweaver: lock-rule inference and outlier-based
//! data-race detection over KIR, a small mid-level IR with explicit struct
//! layouts and lock-typed fields.
//!
//! The crate is `no_std` (with `alloc`): everything here is pure computation
//! over an in-memory [`ir::Module`]. Parsing text into a module and printing
//! it back live in [`parser`] and [`printer`]; the analysis pipeline proper is
//! assembled in [`analysis`]. File IO, JSON reports and the CLI live in the
//! companion `raceweaver` crate.
//!
//! All public containers are `BTreeMap`/`BTreeSet` and all iteration orders
//! are derived from them, so results are deterministic by construction.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod callgraph;
pub mod cfg;
pub mod context;
pub mod extensions;
pub mod fields;
pub mod heuristics;
pub mod ir;
pub mod locks;
pub mod parser;
pub mod printer;
pub mod rules;
pub mod structural;

/// Exact rational used for thresholds, fractions, distances and weights.
pub type Rat = num_rational::Ratio<i128>;

/// Shorthand for an exact rational from a numerator/denominator pair.
pub fn rat(num: i128, den: i128) -> Rat {
    Rat::new(num, den)
}
