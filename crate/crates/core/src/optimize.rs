//! Counting shortcuts layered onto level-wise enumeration: a cache of
//! difference-triple counts, the zero-support check on `dests`/`srcs`,
//! set-based neighborhood computation, and a 3D prefix-sum index that
//! upper-bounds the atomic patterns inside any box.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::enumerate::count_atomic_patterns;
use crate::error::{OdtError, Result};
use crate::ingest::AtomicPatternSet;
use crate::model::{CanonicalKey, Dim, Extension, OdtTriple, RegionGraph, RegionId};

/// Which optimizations a threshold-mining run enables. Each level adds one
/// technique to the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptLevel {
    Baseline,
    Av,
    Avfc,
    Avfcin,
    Opt,
}

impl OptLevel {
    pub const ALL: [OptLevel; 5] = [
        OptLevel::Baseline,
        OptLevel::Av,
        OptLevel::Avfc,
        OptLevel::Avfcin,
        OptLevel::Opt,
    ];

    pub fn caches_differences(self) -> bool {
        self >= OptLevel::Av
    }

    pub fn checks_zero_support(self) -> bool {
        self >= OptLevel::Avfc
    }

    pub fn uses_frontier(self) -> bool {
        self >= OptLevel::Avfcin
    }

    pub fn uses_prefix_index(self) -> bool {
        self >= OptLevel::Opt
    }
}

impl fmt::Display for OptLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptLevel::Baseline => "baseline",
            OptLevel::Av => "av",
            OptLevel::Avfc => "avfc",
            OptLevel::Avfcin => "avfcin",
            OptLevel::Opt => "opt",
        })
    }
}

impl FromStr for OptLevel {
    type Err = OdtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(OptLevel::Baseline),
            "av" => Ok(OptLevel::Av),
            "avfc" => Ok(OptLevel::Avfc),
            "avfcin" => Ok(OptLevel::Avfcin),
            "opt" => Ok(OptLevel::Opt),
            _ => Err(OdtError::Config(format!(
                "unknown optimization level '{s}' (baseline|av|avfc|avfcin|opt)"
            ))),
        }
    }
}

/// Counts of difference triples, keyed by canonical key and grouped by the
/// difference triple's level.
#[derive(Debug, Default)]
pub struct DiffCache {
    by_level: Vec<FxHashMap<CanonicalKey, u64>>,
    order: VecDeque<(usize, CanonicalKey)>,
    limit: Option<usize>,
    len: usize,
    hits: u64,
    misses: u64,
}

impl DiffCache {
    pub fn new() -> Self {
        DiffCache::default()
    }

    /// A cache that evicts the oldest insertion once it holds `limit` entries.
    pub fn with_limit(limit: Option<usize>) -> Self {
        DiffCache {
            limit,
            ..DiffCache::default()
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn get(&self, level: usize, key: &CanonicalKey) -> Option<u64> {
        self.by_level.get(level)?.get(key).copied()
    }

    pub fn insert(&mut self, level: usize, key: CanonicalKey, cnt: u64) {
        if self.limit == Some(0) {
            return;
        }
        if self.by_level.len() <= level {
            self.by_level.resize_with(level + 1, FxHashMap::default);
        }
        let Some(limit) = self.limit else {
            if self.by_level[level].insert(key, cnt).is_none() {
                self.len += 1;
            }
            return;
        };
        if self.by_level[level].insert(key.clone(), cnt).is_some() {
            return;
        }
        self.len += 1;
        self.order.push_back((level, key));
        while self.len > limit {
            let Some((l, k)) = self.order.pop_front() else {
                break;
            };
            if self.by_level[l].remove(&k).is_some() {
                self.len -= 1;
            }
        }
    }

    /// Exact count of `diff`, served from the cache when present and
    /// counted (then stored) otherwise.
    pub fn cached_count(&mut self, diff: &OdtTriple, aps: &AtomicPatternSet) -> u64 {
        let level = diff.level();
        let key = diff.canonical_key();
        if let Some(c) = self.get(level, &key) {
            self.hits += 1;
            return c;
        }
        self.misses += 1;
        let c = count_atomic_patterns(diff, aps);
        self.insert(level, key, c);
        c
    }
}

/// True when the difference triple of an origin (destination) extension by
/// `added` cannot contain an atomic pattern, judged from `dests` (`srcs`)
/// alone. Time extensions are never skipped.
pub fn zero_support_skip(
    p_diff: &OdtTriple,
    dim: Dim,
    added: RegionId,
    aps: &AtomicPatternSet,
) -> bool {
    match dim {
        Dim::Origin => {
            let dests = aps.dests(added);
            !p_diff.dests().iter().any(|&d| dests.contains(d as usize))
        }
        Dim::Dest => {
            let srcs = aps.srcs(added);
            !p_diff.origins().iter().any(|&o| srcs.contains(o as usize))
        }
        Dim::Time => false,
    }
}

/// Neighbors of `set` outside `set` and `exclude`, ascending and without
/// duplicates. `set` and `exclude` must be sorted.
pub fn frontier(set: &[RegionId], graph: &RegionGraph, exclude: &[RegionId]) -> Vec<RegionId> {
    let mut out: Vec<RegionId> = set
        .iter()
        .flat_map(|&r| graph.neighbors(r).iter().copied())
        .collect();
    out.sort_unstable();
    out.dedup();
    out.retain(|r| set.binary_search(r).is_err() && exclude.binary_search(r).is_err());
    out
}

/// Breadth-first region order: components are laid out one after another,
/// each starting from its smallest unvisited id, with neighbors visited in
/// ascending id order.
pub fn reorder_regions(graph: &RegionGraph) -> Vec<RegionId> {
    let n = graph.n_regions();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    for root in 0..n {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        queue.push_back(root as RegionId);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in graph.neighbors(u) {
                if !visited[v as usize] {
                    visited[v as usize] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    order
}

/// Prefix sums `R` over a 0/1 cube `A` of shape `x * y * z`, stored with one
/// extra zero plane per axis so `R[0][..][..] = R[..][0][..] = R[..][..][0] = 0`.
#[derive(Debug, Clone)]
pub struct PrefixSumIndex {
    dims: (usize, usize, usize),
    sums: Vec<u32>,
    /// Axis position of each region id (0-based).
    position: Vec<u32>,
    order: Vec<RegionId>,
}

impl PrefixSumIndex {
    /// Builds the index for an arbitrary cube; `cell(i, j, k)` is `A` at
    /// 0-based coordinates. Region positions are the identity.
    pub fn from_cells<F>(dims: (usize, usize, usize), mut cell: F) -> Self
    where
        F: FnMut(usize, usize, usize) -> bool,
    {
        let (x, y, z) = dims;
        let mut sums = vec![0u32; (x + 1) * (y + 1) * (z + 1)];
        let at = |i: usize, j: usize, k: usize| (i * (y + 1) + j) * (z + 1) + k;
        for i in 1..=x {
            for j in 1..=y {
                for k in 1..=z {
                    let v = cell(i - 1, j - 1, k - 1) as i64
                        + sums[at(i - 1, j, k)] as i64
                        + sums[at(i, j - 1, k)] as i64
                        + sums[at(i, j, k - 1)] as i64
                        - sums[at(i - 1, j - 1, k)] as i64
                        - sums[at(i - 1, j, k - 1)] as i64
                        - sums[at(i, j - 1, k - 1)] as i64
                        + sums[at(i - 1, j - 1, k - 1)] as i64;
                    sums[at(i, j, k)] = v as u32;
                }
            }
        }
        let n = x.max(y);
        PrefixSumIndex {
            dims,
            sums,
            position: (0..n as u32).collect(),
            order: (0..n as RegionId).collect(),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn region_order(&self) -> &[RegionId] {
        &self.order
    }

    /// 1-based axis coordinate of region `r`.
    pub fn axis_of(&self, r: RegionId) -> usize {
        self.position[r as usize] as usize + 1
    }

    /// `R[i][j][k]`, all indices in `0..=dim`.
    pub fn prefix(&self, i: usize, j: usize, k: usize) -> u64 {
        let (_, y, z) = self.dims;
        self.sums[(i * (y + 1) + j) * (z + 1) + k] as u64
    }

    /// Sum of `A` over the 1-based inclusive box `[a,b] x [c,d] x [e,f]`.
    pub fn range_sum(&self, a: usize, b: usize, c: usize, d: usize, e: usize, f: usize) -> Result<u64> {
        let (x, y, z) = self.dims;
        if !(1 <= a && a <= b && b <= x && 1 <= c && c <= d && d <= y && 1 <= e && e <= f && f <= z) {
            return Err(OdtError::RangeOutOfBounds { a, b, c, d, e, f });
        }
        Ok(self.box_sum(a, b, c, d, e, f))
    }

    #[inline]
    fn box_sum(&self, a: usize, b: usize, c: usize, d: usize, e: usize, f: usize) -> u64 {
        let r = |i, j, k| self.prefix(i, j, k) as i64;
        let v = r(b, d, f) - r(a - 1, d, f) - r(b, c - 1, f) - r(b, d, e - 1)
            + r(a - 1, c - 1, f)
            + r(b, c - 1, e - 1)
            + r(a - 1, d, e - 1)
            - r(a - 1, c - 1, e - 1);
        v as u64
    }
}

/// Prefix-sum index over the atomic-pattern indicator cube, with region
/// axes laid out in `region_order` (a permutation of `0..n_regions`).
pub fn build_prefix_sum(aps: &AtomicPatternSet, region_order: &[RegionId]) -> PrefixSumIndex {
    let n = aps.n_regions();
    let m = aps.n_slots();
    assert_eq!(region_order.len(), n, "region order must be a permutation");
    let mut idx = PrefixSumIndex::from_cells((n, n, m), |i, j, k| {
        aps.contains(region_order[i], region_order[j], k as u16)
    });
    let mut position = vec![0u32; n];
    for (pos, &r) in region_order.iter().enumerate() {
        position[r as usize] = pos as u32;
    }
    idx.position = position;
    idx.order = region_order.to_vec();
    idx
}

fn axis_span(set: &[RegionId], idx: &PrefixSumIndex) -> (usize, usize) {
    set.iter().fold((usize::MAX, 0), |(lo, hi), &r| {
        let p = idx.axis_of(r);
        (lo.min(p), hi.max(p))
    })
}

/// Atomic patterns inside the bounding box of `p_diff` under the index's
/// region order; never less than the exact count.
pub fn upper_bound_count(p_diff: &OdtTriple, idx: &PrefixSumIndex) -> u64 {
    let (a, b) = axis_span(p_diff.origins(), idx);
    let (c, d) = axis_span(p_diff.dests(), idx);
    let t = p_diff.time();
    idx.box_sum(a, b, c, d, t.start as usize + 1, t.end as usize + 1)
}

/// [`upper_bound_count`] of the difference triple of extending `p` by
/// `ext`, computed without building that triple.
pub fn upper_bound_extension(p: &OdtTriple, ext: Extension, idx: &PrefixSumIndex) -> u64 {
    let t = p.time();
    let (e, f) = (t.start as usize + 1, t.end as usize + 1);
    match ext.dim {
        Dim::Origin => {
            let a = idx.axis_of(ext.added);
            let (c, d) = axis_span(p.dests(), idx);
            idx.box_sum(a, a, c, d, e, f)
        }
        Dim::Dest => {
            let (a, b) = axis_span(p.origins(), idx);
            let c = idx.axis_of(ext.added);
            idx.box_sum(a, b, c, c, e, f)
        }
        Dim::Time => {
            let (a, b) = axis_span(p.origins(), idx);
            let (c, d) = axis_span(p.dests(), idx);
            let s = ext.added as usize + 1;
            idx.box_sum(a, b, c, d, s, s)
        }
    }
}
