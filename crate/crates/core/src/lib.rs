//! Memory banking engine for on-chip arrays in hierarchically nested
//! loop programs.
//!
//! Given the affine access patterns of a memory and the controller tree
//! that issues them, the engine:
//!
//! * unrolls the program, groups accesses that can be active in the same
//!   cycle and assigns per-lane iterator synchronization ([`program`]),
//! * decides conflict-polytope emptiness between accesses ([`polytope`]),
//! * evaluates and validates hyperplane geometries `(N, B, alpha, P)`
//!   ([`geometry`]),
//! * enumerates, verifies and ranks candidate schemes ([`search`]),
//! * strength-reduces the bank resolution arithmetic into shift/add/mux
//!   datapaths ([`rewrite`]),
//! * predicts LUT/FF/BRAM usage with gradient-boosted trees over
//!   polynomial features ([`costmodel`]),
//! * replays the unrolled program to catch any port conflict the analysis
//!   may have missed ([`sim`]).
//!
//! The JSON problem and scheme formats live in [`io`].

pub mod costmodel;
pub mod error;
pub mod geometry;
pub mod io;
pub mod math;
pub mod polytope;
pub mod program;
pub mod rewrite;
pub mod search;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{BankingStyle, HyperplaneGeometry, SchemeMetrics};
pub use io::{ProblemFile, SchemeEntry, SchemeFile};
pub use polytope::{AccessKind, AffineAccess, ConflictPolytope, IteratorDomain, SyncClass};
pub use program::{AccessGroup, Controller, UnrollStrategy};
pub use rewrite::ResolutionDag;
pub use search::{CandidateBudget, Solution};

/// Default cap on enumerated points for emptiness checks and metrics.
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 10_000_000;
