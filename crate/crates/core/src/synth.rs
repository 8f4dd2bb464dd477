//! Seeded synthetic instances with planted hot spots.

use std::collections::VecDeque;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OdtError, Result};
use crate::ingest::{aggregate, SupportTable, TripRecord, MINUTES_PER_DAY};
use crate::model::{RegionGraph, RegionId, Slot, TimeRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    /// Row-major grid with `floor(sqrt(n))` rows; the last row may be short.
    Grid,
    Path,
    /// Random spanning tree plus extra edges, every degree at most `max_degree`.
    Random,
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphKind::Grid => "grid",
            GraphKind::Path => "path",
            GraphKind::Random => "random",
        })
    }
}

impl FromStr for GraphKind {
    type Err = OdtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "grid" => Ok(GraphKind::Grid),
            "path" => Ok(GraphKind::Path),
            "random" => Ok(GraphKind::Random),
            other => Err(OdtError::Config(format!("unknown graph kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: GraphKind,
    pub n_regions: usize,
    pub n_slots: usize,
    pub slot_minutes: u32,
    pub n_trips: usize,
    pub hot_spots: usize,
    /// Share of trips drawn inside the hot boxes, in `[0, 1]`.
    pub intensity: f64,
    /// Regions per side of each hot box.
    pub hot_regions: usize,
    /// Slots per hot box.
    pub hot_slots: usize,
    pub max_degree: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(kind: GraphKind, n_regions: usize, n_slots: usize, seed: u64) -> Self {
        SyntheticSpec {
            kind,
            n_regions,
            n_slots,
            slot_minutes: 30,
            n_trips: 20 * n_regions * n_slots,
            hot_spots: 1,
            intensity: 0.3,
            hot_regions: 2,
            hot_slots: 2,
            max_degree: 4,
            seed,
        }
    }

    pub fn period_minutes(&self) -> u32 {
        self.slot_minutes * self.n_slots as u32
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(OdtError::Config(m.into()));
        if self.n_regions < 2 {
            return bad("need at least 2 regions");
        }
        if self.n_slots == 0 || self.slot_minutes == 0 {
            return bad("need at least one slot of positive length");
        }
        if self.period_minutes() > MINUTES_PER_DAY {
            return bad("slots must fit in one day");
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return bad("intensity must be in [0, 1]");
        }
        if self.hot_spots > 0 && (self.hot_regions == 0 || self.hot_slots == 0) {
            return bad("hot boxes need at least one region per side and one slot");
        }
        if self.kind == GraphKind::Random && self.max_degree < 2 {
            return bad("random graphs need max degree at least 2");
        }
        Ok(())
    }
}

/// An origin block, a destination block and a slot range with elevated flow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HotSpot {
    pub origins: Vec<RegionId>,
    pub dests: Vec<RegionId>,
    pub slots: TimeRange,
}

#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub graph: RegionGraph,
    pub trips: Vec<TripRecord>,
    pub hot_spots: Vec<HotSpot>,
    pub slot_minutes: u32,
    pub n_slots: usize,
}

impl SyntheticInstance {
    pub fn period_minutes(&self) -> u32 {
        self.slot_minutes * self.n_slots as u32
    }

    pub fn support_table(&self) -> Result<SupportTable> {
        aggregate(&self.trips, self.slot_minutes, self.graph.n_regions(), self.period_minutes())
    }
}

pub fn grid_graph(n: usize) -> Result<RegionGraph> {
    let rows = ((n as f64).sqrt().floor() as usize).max(1);
    let cols = n.div_ceil(rows);
    let mut edges = Vec::new();
    for v in 0..n {
        if v % cols + 1 < cols && v + 1 < n {
            edges.push((v as RegionId, (v + 1) as RegionId));
        }
        if v + cols < n {
            edges.push((v as RegionId, (v + cols) as RegionId));
        }
    }
    RegionGraph::from_edges(n, edges)
}

pub fn path_graph(n: usize) -> Result<RegionGraph> {
    RegionGraph::from_edges(n, (1..n).map(|v| ((v - 1) as RegionId, v as RegionId)))
}

pub fn random_graph<R: Rng>(n: usize, max_degree: usize, rng: &mut R) -> Result<RegionGraph> {
    let mut deg = vec![0usize; n];
    let mut edges = Vec::new();
    for v in 1..n {
        let open: Vec<usize> = (0..v).filter(|&u| deg[u] < max_degree).collect();
        let u = *open.choose(rng).expect("a tree with max degree >= 2 always has an open vertex");
        edges.push((u as RegionId, v as RegionId));
        deg[u] += 1;
        deg[v] += 1;
    }
    for _ in 0..n {
        let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
        if u != v && deg[u] < max_degree && deg[v] < max_degree {
            let e = (u.min(v) as RegionId, u.max(v) as RegionId);
            if !edges.contains(&e) && !edges.contains(&(e.1, e.0)) {
                edges.push(e);
                deg[u] += 1;
                deg[v] += 1;
            }
        }
    }
    RegionGraph::from_edges(n, edges)
}

/// Up to `size` regions reachable from `start` without touching `avoid`,
/// in breadth-first order.
fn ball(g: &RegionGraph, start: RegionId, size: usize, avoid: &[RegionId]) -> Vec<RegionId> {
    let mut out = vec![start];
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if out.len() >= size {
                break;
            }
            if !out.contains(&v) && !avoid.contains(&v) {
                out.push(v);
                queue.push_back(v);
            }
        }
    }
    out.sort_unstable();
    out
}

fn plant<R: Rng>(g: &RegionGraph, spec: &SyntheticSpec, rng: &mut R) -> HotSpot {
    let n = g.n_regions();
    let o_start = rng.random_range(0..n) as RegionId;
    let origins = ball(g, o_start, spec.hot_regions.min(n - 1), &[]);
    let rest: Vec<RegionId> = (0..n as RegionId).filter(|r| !origins.contains(r)).collect();
    // Prefer a destination block that borders the origin block.
    let near: Vec<RegionId> = rest
        .iter()
        .copied()
        .filter(|&r| origins.iter().any(|&o| g.are_adjacent(o, r)))
        .collect();
    let d_start = *near.choose(rng).or_else(|| rest.choose(rng)).expect("n >= 2");
    let dests = ball(g, d_start, spec.hot_regions, &origins);
    let len = spec.hot_slots.min(spec.n_slots);
    let start = rng.random_range(0..=spec.n_slots - len) as Slot;
    HotSpot {
        origins,
        dests,
        slots: TimeRange::new(start, start + len as Slot - 1),
    }
}

/// Builds the graph, plants the hot boxes and draws the trips. The same
/// spec always yields the same instance.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticInstance> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_regions;
    let graph = match spec.kind {
        GraphKind::Grid => grid_graph(n)?,
        GraphKind::Path => path_graph(n)?,
        GraphKind::Random => random_graph(n, spec.max_degree, &mut rng)?,
    };
    let hot: Vec<HotSpot> = (0..spec.hot_spots).map(|_| plant(&graph, spec, &mut rng)).collect();
    let sm = spec.slot_minutes;
    let n_hot = if hot.is_empty() {
        0
    } else {
        (spec.n_trips as f64 * spec.intensity).round() as usize
    };
    let mut trips = Vec::with_capacity(spec.n_trips);
    for i in 0..spec.n_trips {
        let (o, d, slot) = if i < n_hot {
            let h = &hot[i % hot.len()];
            let o = *h.origins.choose(&mut rng).expect("non-empty block");
            let d = *h.dests.choose(&mut rng).expect("non-empty block");
            (o, d, rng.random_range(h.slots.start..=h.slots.end))
        } else {
            let o = rng.random_range(0..n) as RegionId;
            let mut d = rng.random_range(0..n - 1) as RegionId;
            if d >= o {
                d += 1;
            }
            (o, d, rng.random_range(0..spec.n_slots) as Slot)
        };
        let minute = slot as u32 * sm + rng.random_range(0..sm);
        let flow = rng.random_range(1..=3);
        let duration = rng.random_range(5.0..60.0_f64);
        trips.push(TripRecord {
            origin: o,
            destination: d,
            start_minute: minute,
            flow,
            duration: Some((duration * 10.0).round() / 10.0),
        });
    }
    Ok(SyntheticInstance {
        graph,
        trips,
        hot_spots: hot,
        slot_minutes: sm,
        n_slots: spec.n_slots,
    })
}

/// Self-contained small instance: graph plus aggregated supports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub n_regions: usize,
    pub n_slots: usize,
    pub edges: Vec<[RegionId; 2]>,
    /// `[origin, destination, slot, support]` rows.
    pub supports: Vec<[u64; 4]>,
}

impl InstanceFile {
    pub fn new(graph: &RegionGraph, table: &SupportTable) -> Self {
        InstanceFile {
            n_regions: graph.n_regions(),
            n_slots: table.n_slots(),
            edges: graph.edges().map(|(u, v)| [u, v]).collect(),
            supports: table
                .iter()
                .map(|((o, d, t), s)| [o as u64, d as u64, t as u64, s])
                .collect(),
        }
    }

    pub fn graph(&self) -> Result<RegionGraph> {
        RegionGraph::from_edges(self.n_regions, self.edges.iter().map(|&[u, v]| (u, v)))
    }

    pub fn table(&self) -> Result<SupportTable> {
        let mut t = SupportTable::new(self.n_regions, self.n_slots);
        for (i, &[o, d, s, v]) in self.supports.iter().enumerate() {
            if o == d || o as usize >= self.n_regions || d as usize >= self.n_regions || s as usize >= self.n_slots {
                return Err(OdtError::Config(format!("support row {i} is out of range: {o},{d},{s}")));
            }
            t.add(o as RegionId, d as RegionId, s as Slot, v);
        }
        Ok(t)
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        Ok(serde_json::to_writer(writer, self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        let g = grid_graph(9).unwrap();
        assert_eq!(g.edge_count(), 12);
        assert_eq!(g.neighbors(4), &[1, 3, 5, 7]);
        let g = grid_graph(10).unwrap();
        assert!(g.is_connected(&(0..10).collect::<Vec<_>>()));
        let g = grid_graph(100).unwrap();
        assert_eq!(g.edge_count(), 180);
    }

    #[test]
    fn random_graphs_are_connected_and_bounded() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(12, 3, &mut rng).unwrap();
            assert!(g.is_connected(&(0..12).collect::<Vec<_>>()));
            assert!((0..12).all(|r| g.neighbors(r).len() <= 3));
        }
    }

    #[test]
    fn same_seed_same_instance() {
        for kind in [GraphKind::Grid, GraphKind::Path, GraphKind::Random] {
            let spec = SyntheticSpec::new(kind, 9, 6, 7);
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a.trips, b.trips);
            assert_eq!(a.hot_spots, b.hot_spots);
            assert_eq!(a.graph.edges().collect::<Vec<_>>(), b.graph.edges().collect::<Vec<_>>());
        }
    }

    #[test]
    fn hot_boxes_are_valid_triples() {
        for seed in 0..30 {
            let mut spec = SyntheticSpec::new(GraphKind::Random, 10, 8, seed);
            spec.hot_spots = 2;
            spec.hot_regions = 3;
            let inst = generate(&spec).unwrap();
            for h in &inst.hot_spots {
                let t = crate::model::OdtTriple::new(h.origins.clone(), h.dests.clone(), h.slots);
                assert_eq!(t.validate(&inst.graph, 8), Ok(()));
            }
        }
    }

    #[test]
    fn instance_file_round_trip() {
        let inst = generate(&SyntheticSpec::new(GraphKind::Grid, 6, 4, 1)).unwrap();
        let table = inst.support_table().unwrap();
        let file = InstanceFile::new(&inst.graph, &table);
        let mut buf = Vec::new();
        file.write(&mut buf).unwrap();
        let back = InstanceFile::read(buf.as_slice()).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.table().unwrap(), table);
    }
}
