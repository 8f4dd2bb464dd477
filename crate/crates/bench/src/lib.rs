//! Shared workloads for the benchmarks.

use odt_core::synth::{generate, GraphKind, SyntheticInstance, SyntheticSpec};
use odt_core::{Fraction, RegionGraph, SupportTable};

/// A seeded grid instance with a few planted hot boxes.
pub fn grid_workload(n_regions: usize, n_slots: usize, n_trips: usize, seed: u64) -> SyntheticInstance {
    let mut spec = SyntheticSpec::new(GraphKind::Grid, n_regions, n_slots, seed);
    spec.n_trips = n_trips;
    spec.hot_spots = 4;
    spec.hot_regions = 3;
    spec.hot_slots = 3;
    generate(&spec).expect("valid synthetic spec")
}

pub fn aggregated(inst: &SyntheticInstance) -> (SupportTable, RegionGraph) {
    (inst.support_table().expect("synthetic trips aggregate"), inst.graph.clone())
}

pub fn frac(s: &str) -> Fraction {
    s.parse().expect("valid fraction")
}
