//! Domain types shared by every mining path.
//!
//! Region sets are kept sorted and deduplicated, timeslots are an inclusive
//! `[start, end]` range that never wraps past the end of the period. A
//! triple built with [`OdtTriple::new`] is normalized but not validated;
//! call [`OdtTriple::validate`] against a graph to check the structural
//! rules (non-empty, disjoint, connected, in range).

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{OdtError, Result};

/// Index of an atomic region, `0 <= id < n_regions`.
pub type RegionId = u32;

/// Index of an atomic timeslot, `0 <= slot < n_slots`.
pub type Slot = u16;

/// Undirected neighborhood graph over atomic regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionGraph {
    adj: Vec<Vec<RegionId>>,
}

impl RegionGraph {
    /// Builds a graph from an edge list, dropping duplicate and mirrored edges.
    ///
    /// Self-loops and ids outside `0..n_regions` are rejected; the error names
    /// the zero-based position of the offending edge.
    pub fn from_edges<I>(n_regions: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (RegionId, RegionId)>,
    {
        let mut adj = vec![Vec::new(); n_regions];
        for (i, (u, v)) in edges.into_iter().enumerate() {
            if u == v {
                return Err(OdtError::Graph(format!("edge {i}: self-loop on {u}")));
            }
            if u as usize >= n_regions || v as usize >= n_regions {
                return Err(OdtError::Graph(format!(
                    "edge {i}: ({u},{v}) outside 0..{n_regions}"
                )));
            }
            adj[u as usize].push(v);
            adj[v as usize].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Ok(RegionGraph { adj })
    }

    pub fn n_regions(&self) -> usize {
        self.adj.len()
    }

    /// Sorted neighbors of `r`.
    pub fn neighbors(&self, r: RegionId) -> &[RegionId] {
        &self.adj[r as usize]
    }

    pub fn are_adjacent(&self, u: RegionId, v: RegionId) -> bool {
        self.adj[u as usize].binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (RegionId, RegionId)> + '_ {
        self.adj.iter().enumerate().flat_map(|(u, list)| {
            list.iter()
                .filter(move |&&v| (u as RegionId) < v)
                .map(move |&v| (u as RegionId, v))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Whether the subgraph induced by `set` is connected.
    ///
    /// `set` must be sorted. The empty set is reported as not connected.
    pub fn is_connected(&self, set: &[RegionId]) -> bool {
        let Some(&first) = set.first() else {
            return false;
        };
        let mut visited = vec![false; set.len()];
        let mut queue = VecDeque::from([first]);
        visited[0] = true;
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if let Ok(pos) = set.binary_search(&v) {
                    if !visited[pos] {
                        visited[pos] = true;
                        reached += 1;
                        queue.push_back(v);
                    }
                }
            }
        }
        reached == set.len()
    }
}

/// Inclusive, contiguous range of atomic timeslots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: Slot,
    pub end: Slot,
}

impl TimeRange {
    pub fn new(start: Slot, end: Slot) -> Self {
        TimeRange { start, end }
    }

    pub fn single(slot: Slot) -> Self {
        TimeRange { start: slot, end: slot }
    }

    pub fn len(&self) -> usize {
        (self.end as usize + 1).saturating_sub(self.start as usize)
    }

    pub fn is_empty(&self) -> bool {
        self.start > self.end
    }

    pub fn contains(&self, slot: Slot) -> bool {
        self.start <= slot && slot <= self.end
    }

    pub fn covers(&self, other: &TimeRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn slots(&self) -> std::ops::RangeInclusive<Slot> {
        self.start..=self.end
    }
}

impl fmt::Display for TimeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

impl FromStr for TimeRange {
    type Err = OdtError;

    /// Parses `s:e` (inclusive) or a single slot `s`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || OdtError::Config(format!("bad slot range '{s}', expected start:end"));
        let (a, b) = match s.split_once(':') {
            Some((a, b)) => (a, b),
            None => (s, s),
        };
        let start: Slot = a.trim().parse().map_err(|_| bad())?;
        let end: Slot = b.trim().parse().map_err(|_| bad())?;
        if start > end {
            return Err(bad());
        }
        Ok(TimeRange { start, end })
    }
}

/// One of the three components of an ODT triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dim {
    Origin,
    Dest,
    Time,
}

impl Dim {
    pub const ALL: [Dim; 3] = [Dim::Origin, Dim::Dest, Dim::Time];
}

/// The atomic element added by a minimal generalization: a region id for
/// `Origin`/`Dest`, a slot for `Time`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Extension {
    pub dim: Dim,
    pub added: u32,
}

/// First structural rule a triple breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    EmptyOrigin,
    EmptyDest,
    BadRange,
    RegionOutOfRange(RegionId),
    Overlap(RegionId),
    DisconnectedOrigin,
    DisconnectedDest,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyOrigin => write!(f, "empty origin"),
            Violation::EmptyDest => write!(f, "empty destination"),
            Violation::BadRange => write!(f, "bad timeslot range"),
            Violation::RegionOutOfRange(r) => write!(f, "region {r} out of range"),
            Violation::Overlap(r) => write!(f, "overlap: region {r} in both origin and destination"),
            Violation::DisconnectedOrigin => write!(f, "disconnected origin"),
            Violation::DisconnectedDest => write!(f, "disconnected destination"),
        }
    }
}

/// An origin-destination-timeslot triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OdtTriple {
    origins: Vec<RegionId>,
    dests: Vec<RegionId>,
    time: TimeRange,
}

impl OdtTriple {
    /// Normalizes region sets (sort, dedup). Does not validate.
    pub fn new(mut origins: Vec<RegionId>, mut dests: Vec<RegionId>, time: TimeRange) -> Self {
        origins.sort_unstable();
        origins.dedup();
        dests.sort_unstable();
        dests.dedup();
        OdtTriple { origins, dests, time }
    }

    pub fn atomic(o: RegionId, d: RegionId, t: Slot) -> Self {
        OdtTriple {
            origins: vec![o],
            dests: vec![d],
            time: TimeRange::single(t),
        }
    }

    pub fn origins(&self) -> &[RegionId] {
        &self.origins
    }

    pub fn dests(&self) -> &[RegionId] {
        &self.dests
    }

    pub fn time(&self) -> TimeRange {
        self.time
    }

    /// Number of atomic triples contained: `|O| * |D| * |T|`.
    pub fn cardinality(&self) -> u64 {
        self.origins.len() as u64 * self.dests.len() as u64 * self.time.len() as u64
    }

    /// Number of atomic elements: `|O| + |D| + |T|`.
    pub fn level(&self) -> usize {
        self.origins.len() + self.dests.len() + self.time.len()
    }

    pub fn contains_region(&self, r: RegionId) -> bool {
        self.origins.binary_search(&r).is_ok() || self.dests.binary_search(&r).is_ok()
    }

    pub fn with_origin(&self, r: RegionId) -> Self {
        let mut t = self.clone();
        if let Err(pos) = t.origins.binary_search(&r) {
            t.origins.insert(pos, r);
        }
        t
    }

    pub fn with_dest(&self, r: RegionId) -> Self {
        let mut t = self.clone();
        if let Err(pos) = t.dests.binary_search(&r) {
            t.dests.insert(pos, r);
        }
        t
    }

    pub fn with_time(&self, time: TimeRange) -> Self {
        OdtTriple {
            origins: self.origins.clone(),
            dests: self.dests.clone(),
            time,
        }
    }

    pub fn canonical_key(&self) -> CanonicalKey {
        CanonicalKey::from_parts(&self.origins, &self.dests, self.time)
    }

    /// Checks the structural rules in a fixed order and reports the first
    /// failure: empty component, bad range, out-of-range region, overlap,
    /// disconnection.
    pub fn validate(&self, graph: &RegionGraph, n_slots: usize) -> Result<(), Violation> {
        if self.origins.is_empty() {
            return Err(Violation::EmptyOrigin);
        }
        if self.dests.is_empty() {
            return Err(Violation::EmptyDest);
        }
        if self.time.is_empty() || self.time.end as usize >= n_slots {
            return Err(Violation::BadRange);
        }
        let n = graph.n_regions() as RegionId;
        if let Some(&r) = self.origins.iter().chain(&self.dests).find(|&&r| r >= n) {
            return Err(Violation::RegionOutOfRange(r));
        }
        if let Some(&r) = self
            .origins
            .iter()
            .find(|r| self.dests.binary_search(r).is_ok())
        {
            return Err(Violation::Overlap(r));
        }
        if !graph.is_connected(&self.origins) {
            return Err(Violation::DisconnectedOrigin);
        }
        if !graph.is_connected(&self.dests) {
            return Err(Violation::DisconnectedDest);
        }
        Ok(())
    }
}

impl fmt::Display for OdtTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_ids(f, "O", &self.origins)?;
        f.write_str(";")?;
        write_ids(f, "D", &self.dests)?;
        write!(f, ";T=[{},{}]", self.time.start, self.time.end)
    }
}

fn write_ids(f: &mut fmt::Formatter<'_>, tag: &str, ids: &[RegionId]) -> fmt::Result {
    write!(f, "{tag}=[")?;
    for (i, r) in ids.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{r}")?;
    }
    f.write_str("]")
}

impl FromStr for OdtTriple {
    type Err = OdtError;

    /// Parses the textual form `O=[0,1];D=[3];T=[18,18]`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || OdtError::Parse {
            line: 0,
            msg: format!("bad triple '{s}'"),
        };
        let mut parts = s.trim().split(';');
        let mut list = |tag: &str| -> Result<Vec<u32>> {
            let p = parts.next().ok_or_else(bad)?;
            let inner = p
                .strip_prefix(tag)
                .and_then(|p| p.strip_prefix("=["))
                .and_then(|p| p.strip_suffix(']'))
                .ok_or_else(bad)?;
            if inner.is_empty() {
                return Ok(Vec::new());
            }
            inner
                .split(',')
                .map(|x| x.trim().parse::<u32>().map_err(|_| bad()))
                .collect()
        };
        let origins = list("O")?;
        let dests = list("D")?;
        let time = list("T")?;
        if time.len() != 2 || time[0] > time[1] || time[1] > Slot::MAX as u32 {
            return Err(bad());
        }
        Ok(OdtTriple::new(
            origins,
            dests,
            TimeRange::new(time[0] as Slot, time[1] as Slot),
        ))
    }
}

/// Injective, order-independent identity of a triple.
///
/// Ordering is a fixed total order used for deterministic output and for
/// tie-breaking ranked results.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalKey(Box<[u32]>);

impl CanonicalKey {
    /// Key of the triple with these (sorted) components, without building it.
    pub fn from_parts(origins: &[RegionId], dests: &[RegionId], time: TimeRange) -> Self {
        let mut buf = Vec::with_capacity(origins.len() + dests.len() + 4);
        buf.push(origins.len() as u32);
        buf.extend_from_slice(origins);
        buf.push(dests.len() as u32);
        buf.extend_from_slice(dests);
        buf.push(time.start as u32);
        buf.push(time.end as u32);
        CanonicalKey(buf.into_boxed_slice())
    }

    pub fn to_triple(&self) -> OdtTriple {
        let b = &self.0;
        let n_o = b[0] as usize;
        let origins = b[1..1 + n_o].to_vec();
        let n_d = b[1 + n_o] as usize;
        let dests = b[2 + n_o..2 + n_o + n_d].to_vec();
        let start = b[2 + n_o + n_d] as Slot;
        let end = b[3 + n_o + n_d] as Slot;
        OdtTriple {
            origins,
            dests,
            time: TimeRange { start, end },
        }
    }
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.to_triple().fmt(f)
    }
}

impl FromStr for CanonicalKey {
    type Err = OdtError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(s.parse::<OdtTriple>()?.canonical_key())
    }
}

/// A triple together with its atomic-pattern count and cardinality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluatedTriple {
    pub triple: OdtTriple,
    pub cnt: u64,
    pub card: u64,
}

impl EvaluatedTriple {
    pub fn new(triple: OdtTriple, cnt: u64) -> Self {
        let card = triple.cardinality();
        debug_assert!(cnt <= card);
        EvaluatedTriple { triple, cnt, card }
    }

    pub fn ratio(&self) -> f64 {
        self.cnt as f64 / self.card as f64
    }

    pub fn level(&self) -> usize {
        self.triple.level()
    }
}

/// Exact non-negative rational used for the `s_a` and `s_r` thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    num: u64,
    den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 {
            return Err(OdtError::Config("zero denominator".into()));
        }
        Ok(Fraction { num, den })
    }

    pub fn one() -> Self {
        Fraction { num: 1, den: 1 }
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `ceil(self * n)` in exact integer arithmetic.
    pub fn ceil_mul(&self, n: u64) -> u64 {
        let p = self.num as u128 * n as u128;
        p.div_ceil(self.den as u128) as u64
    }

    /// `a / b >= self`, cross-multiplied. `b` must be positive.
    pub fn le_ratio(&self, a: u64, b: u64) -> bool {
        a as u128 * self.den as u128 >= b as u128 * self.num as u128
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Fraction {
    type Err = OdtError;

    /// Accepts decimals (`0.6`, `1`, `.25`) and ratios (`3/5`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || OdtError::Config(format!("bad fraction '{s}'"));
        if let Some((n, d)) = s.split_once('/') {
            let num = n.trim().parse().map_err(|_| bad())?;
            let den = d.trim().parse().map_err(|_| bad())?;
            return Fraction::new(num, den);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if (int.is_empty() && frac.is_empty())
            || !int.bytes().all(|b| b.is_ascii_digit())
            || !frac.bytes().all(|b| b.is_ascii_digit())
            || frac.len() > 18
        {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac_v: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let num = int
            .checked_mul(den)
            .and_then(|x| x.checked_add(frac_v))
            .ok_or_else(bad)?;
        Fraction::new(num, den)
    }
}

/// Upper bounds on `|O|`, `|D|` and `|T|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeBounds {
    pub origins: usize,
    pub dests: usize,
    pub slots: usize,
}

/// Allowed origin regions, destination regions and timeslot window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraints {
    pub origins: Vec<RegionId>,
    pub dests: Vec<RegionId>,
    pub slots: TimeRange,
}

impl Constraints {
    pub fn new(mut origins: Vec<RegionId>, mut dests: Vec<RegionId>, slots: TimeRange) -> Self {
        origins.sort_unstable();
        origins.dedup();
        dests.sort_unstable();
        dests.dedup();
        Constraints { origins, dests, slots }
    }

    /// Constraints that admit every region and slot.
    pub fn everything(n_regions: usize, n_slots: usize) -> Self {
        let all: Vec<RegionId> = (0..n_regions as RegionId).collect();
        Constraints {
            origins: all.clone(),
            dests: all,
            slots: TimeRange::new(0, (n_slots - 1) as Slot),
        }
    }

    pub fn validate(&self, graph: &RegionGraph, n_slots: usize) -> Result<()> {
        let n = graph.n_regions() as RegionId;
        for (name, set) in [("origin", &self.origins), ("destination", &self.dests)] {
            if let Some(r) = set.iter().find(|&&r| r >= n) {
                return Err(OdtError::Config(format!("{name} constraint: region {r} out of range")));
            }
            if !graph.is_connected(set) {
                return Err(OdtError::Config(format!(
                    "{name} constraint set does not induce a connected subgraph"
                )));
            }
        }
        if self.slots.is_empty() || self.slots.end as usize >= n_slots {
            return Err(OdtError::Config(format!("slot constraint {} out of range", self.slots)));
        }
        Ok(())
    }
}

/// Top-k rank parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankConfig {
    pub k: usize,
    pub max_level: usize,
}

/// Thresholds and optional restrictions for one mining run.
#[derive(Debug, Clone, PartialEq)]
pub struct MiningConfig {
    /// Fraction of non-zero atomic triples kept as atomic patterns.
    pub s_a: Fraction,
    /// Minimum ratio of atomic patterns in a generalized pattern. Required by
    /// threshold mining, ignored by ranked mining.
    pub s_r: Option<Fraction>,
    pub bounds: Option<SizeBounds>,
    pub constraints: Option<Constraints>,
    pub rank: Option<RankConfig>,
    /// Highest level that threshold mining will generate.
    pub max_level: Option<usize>,
    /// Evict cached difference counts in insertion order past this many entries.
    pub cache_limit: Option<usize>,
}

impl MiningConfig {
    pub fn new(s_a: Fraction, s_r: Fraction) -> Self {
        MiningConfig {
            s_a,
            s_r: Some(s_r),
            bounds: None,
            constraints: None,
            rank: None,
            max_level: None,
            cache_limit: None,
        }
    }

    pub fn ranked(s_a: Fraction, k: usize, max_level: usize) -> Self {
        MiningConfig {
            s_a,
            s_r: None,
            bounds: None,
            constraints: None,
            rank: Some(RankConfig { k, max_level }),
            max_level: None,
            cache_limit: None,
        }
    }

    pub fn with_max_level(mut self, max_level: usize) -> Self {
        self.max_level = Some(max_level);
        self
    }

    pub fn with_bounds(mut self, bounds: SizeBounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn with_constraints(mut self, constraints: Constraints) -> Self {
        self.constraints = Some(constraints);
        self
    }

    pub(crate) fn check_s_a(&self) -> Result<()> {
        if self.s_a.is_zero() || self.s_a.num() > self.s_a.den() {
            return Err(OdtError::Config(format!("s_a must be in (0,1], got {}", self.s_a)));
        }
        Ok(())
    }

    pub(crate) fn check(&self, graph: &RegionGraph, n_slots: usize) -> Result<()> {
        self.check_s_a()?;
        if let Some(s_r) = self.s_r {
            if s_r.is_zero() {
                return Err(OdtError::Config("s_r must be positive".into()));
            }
        }
        if let Some(b) = self.bounds {
            if b.origins == 0 || b.dests == 0 || b.slots == 0 {
                return Err(OdtError::Config("size bounds must be at least 1".into()));
            }
        }
        if let Some(c) = &self.constraints {
            c.validate(graph, n_slots)?;
        }
        if let Some(r) = self.rank {
            if r.k == 0 {
                return Err(OdtError::Config("k must be at least 1".into()));
            }
            if r.max_level < 3 {
                return Err(OdtError::Config("max level must be at least 3".into()));
            }
        }
        Ok(())
    }
}
