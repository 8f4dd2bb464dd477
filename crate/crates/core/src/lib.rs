//! Mining of generalized origin-destination-time flow patterns.
//!
//! Trips are aggregated into atomic `(origin, destination, slot)` supports;
//! the best-supported atomic triples become atomic patterns, and larger
//! triples (connected region sets on both sides, a contiguous slot range)
//! are grown level by level while enough of their atomic triples are atomic
//! patterns.

pub mod enumerate;
pub mod error;
pub mod ingest;
pub mod model;
pub mod optimize;
pub mod oracle;
pub mod output;
pub mod synth;
pub mod variants;

pub use enumerate::{
    count_atomic_patterns, difference, is_pattern, mine_all, minimal_generalizations, Counters,
    LevelPatterns, MiningRun, PatternSet, PhaseTimings,
};
pub use error::{OdtError, Result};
pub use ingest::{
    aggregate, read_trips, select_atomic_patterns, AtomicPatternSet, SupportTable, TripRecord,
};
pub use model::{
    CanonicalKey, Constraints, Dim, EvaluatedTriple, Extension, Fraction, MiningConfig, OdtTriple,
    RankConfig, RegionGraph, RegionId, SizeBounds, Slot, TimeRange, Violation,
};
pub use optimize::OptLevel;
pub use oracle::{oracle_mine, Oracle, OracleGuard, OracleResult};
pub use variants::{mine_bounded, mine_constrained, mine_topk, RankAlgo, RankHeap};
