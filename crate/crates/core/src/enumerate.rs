//! Level-wise enumeration of ODT patterns.
//!
//! Level 3 holds the atomic patterns. Every pattern at level `l` is extended
//! by one atomic element (an adjacent region on the origin or destination
//! side, or an adjacent slot) to form the candidates of level `l + 1`. Each
//! distinct candidate is evaluated once per level: its count is the
//! generator's count plus the count of the difference triple, and it is kept
//! when the ratio of atomic patterns reaches `s_r`. Enumeration stops at the
//! first empty level.

use std::collections::hash_map::Entry;
use std::collections::BTreeMap;
use std::hash::Hasher;
use std::time::{Duration, Instant};

use fixedbitset::FixedBitSet;
use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHasher};
use serde::{Serialize, Serializer};

use crate::error::{OdtError, Result};
use crate::ingest::{select_atomic_patterns, AtomicPatternSet, SupportTable};
use crate::model::{
    CanonicalKey, Dim, EvaluatedTriple, Extension, Fraction, MiningConfig, OdtTriple, RegionGraph,
    RegionId, SizeBounds, Slot, TimeRange,
};
use crate::optimize::{
    build_prefix_sum, reorder_regions, upper_bound_extension, zero_support_skip,
    DiffCache, OptLevel, PrefixSumIndex,
};

/// Work done by a mining run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    /// Candidates produced by extension, duplicates included.
    pub generated: u64,
    /// Candidates dropped because the same triple was already produced at this level.
    pub deduped: u64,
    /// Distinct candidates evaluated.
    pub evaluated: u64,
    /// Difference triples counted by scanning their atomic triples.
    pub exact_counts: u64,
    pub cache_hits: u64,
    pub zero_skips: u64,
    pub prefix_prunes: u64,
    /// Ranked mining only: parents skipped whole.
    pub parents_pruned: u64,
    /// Ranked mining only: per-dimension extension families skipped.
    pub families_pruned: u64,
}

/// Wall-clock split between candidate generation and support counting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhaseTimings {
    #[serde(rename = "generation_ms", serialize_with = "as_millis")]
    pub generation: Duration,
    #[serde(rename = "counting_ms", serialize_with = "as_millis")]
    pub counting: Duration,
}

impl PhaseTimings {
    pub fn total(&self) -> Duration {
        self.generation + self.counting
    }
}

fn as_millis<S: Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

/// Patterns of one level, sorted by canonical key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelPatterns {
    pub level: usize,
    pub patterns: Vec<EvaluatedTriple>,
}

/// Accepted patterns, one entry per non-empty level starting at 3.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatternSet {
    pub levels: Vec<LevelPatterns>,
}

impl PatternSet {
    pub fn level(&self, level: usize) -> &[EvaluatedTriple] {
        self.levels
            .iter()
            .find(|l| l.level == level)
            .map(|l| l.patterns.as_slice())
            .unwrap_or(&[])
    }

    pub fn max_level(&self) -> Option<usize> {
        self.levels.iter().rev().find(|l| !l.patterns.is_empty()).map(|l| l.level)
    }

    pub fn total(&self) -> usize {
        self.levels.iter().map(|l| l.patterns.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &EvaluatedTriple> {
        self.levels.iter().flat_map(|l| l.patterns.iter())
    }

    pub fn find(&self, triple: &OdtTriple) -> Option<&EvaluatedTriple> {
        self.level(triple.level()).iter().find(|e| &e.triple == triple)
    }

    /// Canonical keys per level, each list sorted. Empty levels are omitted.
    pub fn keys_by_level(&self) -> BTreeMap<usize, Vec<CanonicalKey>> {
        self.levels
            .iter()
            .filter(|l| !l.patterns.is_empty())
            .map(|l| {
                let mut keys: Vec<_> = l.patterns.iter().map(|e| e.triple.canonical_key()).collect();
                keys.sort();
                (l.level, keys)
            })
            .collect()
    }
}

/// Result of one mining run.
#[derive(Debug, Clone)]
pub struct MiningRun {
    pub patterns: PatternSet,
    pub counters: Counters,
    pub timings: PhaseTimings,
    pub minsup: u64,
    pub n_atomic_triples: usize,
    pub n_atomic_patterns: usize,
}

/// The candidate obtained by adding `ext` to `p`.
pub fn apply_extension(p: &OdtTriple, ext: Extension) -> OdtTriple {
    match ext.dim {
        Dim::Origin => p.with_origin(ext.added),
        Dim::Dest => p.with_dest(ext.added),
        Dim::Time => p.with_time(apply_extension_time(p.time(), ext)),
    }
}

/// Every minimal generalization of `p`: one adjacent region added to the
/// origin or destination (never one already used by either side), or one
/// slot added at either end of the time range. No duplicates.
pub fn minimal_generalizations(
    p: &OdtTriple,
    graph: &RegionGraph,
    n_slots: usize,
) -> Vec<(OdtTriple, Extension)> {
    let limits = Limits::unrestricted(n_slots);
    let mut expander = Expander::new(graph.n_regions(), true);
    let mut exts = Vec::new();
    for dim in Dim::ALL {
        expander.extend(p, dim, graph, &limits, &mut exts);
    }
    exts.sort_unstable_by_key(|e| (e.dim, e.added));
    exts.into_iter().map(|e| (apply_extension(p, e), e)).collect()
}

/// `cand - p`: the added element crossed with `p`'s two intact components.
pub fn difference(cand: &OdtTriple, p: &OdtTriple, ext: Extension) -> OdtTriple {
    debug_assert_eq!(cand, &apply_extension(p, ext));
    let _ = cand;
    diff_of(p, ext)
}

pub(crate) fn diff_of(p: &OdtTriple, ext: Extension) -> OdtTriple {
    match ext.dim {
        Dim::Origin => OdtTriple::new(vec![ext.added], p.dests().to_vec(), p.time()),
        Dim::Dest => OdtTriple::new(p.origins().to_vec(), vec![ext.added], p.time()),
        Dim::Time => p.with_time(TimeRange::single(ext.added as Slot)),
    }
}

/// Level and canonical key of the difference triple of `p` extended by `ext`.
pub(crate) fn diff_key(p: &OdtTriple, ext: Extension) -> (usize, CanonicalKey) {
    let (o, d, t) = (p.origins(), p.dests(), p.time());
    match ext.dim {
        Dim::Origin => (1 + d.len() + t.len(), CanonicalKey::from_parts(&[ext.added], d, t)),
        Dim::Dest => (o.len() + 1 + t.len(), CanonicalKey::from_parts(o, &[ext.added], t)),
        Dim::Time => {
            let s = TimeRange::single(ext.added as Slot);
            (o.len() + d.len() + 1, CanonicalKey::from_parts(o, d, s))
        }
    }
}

/// Canonical key of `p` extended by `ext`.
pub(crate) fn candidate_key(p: &OdtTriple, ext: Extension) -> CanonicalKey {
    let insert = |set: &[RegionId]| {
        let mut v = Vec::with_capacity(set.len() + 1);
        let at = set.partition_point(|&r| r < ext.added);
        v.extend_from_slice(&set[..at]);
        v.push(ext.added);
        v.extend_from_slice(&set[at..]);
        v
    };
    match ext.dim {
        Dim::Origin => CanonicalKey::from_parts(&insert(p.origins()), p.dests(), p.time()),
        Dim::Dest => CanonicalKey::from_parts(p.origins(), &insert(p.dests()), p.time()),
        Dim::Time => CanonicalKey::from_parts(p.origins(), p.dests(), apply_extension_time(p.time(), ext)),
    }
}

/// `set` with `added` merged in, ascending.
fn merged(set: &[RegionId], added: Option<RegionId>) -> impl Iterator<Item = RegionId> + '_ {
    let at = added.map_or(set.len(), |a| set.partition_point(|&r| r < a));
    set[..at]
        .iter()
        .copied()
        .chain(added)
        .chain(set[at..].iter().copied())
}

/// A candidate seen as `(parent, extension)`, compared and hashed in
/// canonical order without building it.
#[derive(Clone, Copy)]
struct CandidateView<'a> {
    p: &'a OdtTriple,
    ext: Extension,
}

impl CandidateView<'_> {
    fn added(&self, dim: Dim) -> Option<RegionId> {
        (self.ext.dim == dim).then_some(self.ext.added)
    }

    fn origins(&self) -> impl Iterator<Item = RegionId> + '_ {
        merged(self.p.origins(), self.added(Dim::Origin))
    }

    fn dests(&self) -> impl Iterator<Item = RegionId> + '_ {
        merged(self.p.dests(), self.added(Dim::Dest))
    }

    fn n_origins(&self) -> usize {
        self.p.origins().len() + (self.ext.dim == Dim::Origin) as usize
    }

    fn n_dests(&self) -> usize {
        self.p.dests().len() + (self.ext.dim == Dim::Dest) as usize
    }

    fn time(&self) -> TimeRange {
        match self.ext.dim {
            Dim::Time => apply_extension_time(self.p.time(), self.ext),
            _ => self.p.time(),
        }
    }

    fn hash(&self) -> u64 {
        let mut h = FxHasher::default();
        h.write_usize(self.n_origins());
        self.origins().for_each(|r| h.write_u32(r));
        h.write_usize(self.n_dests());
        self.dests().for_each(|r| h.write_u32(r));
        let t = self.time();
        h.write_u32(t.start as u32);
        h.write_u32(t.end as u32);
        h.finish()
    }

    fn same(&self, other: &CandidateView<'_>) -> bool {
        self.time() == other.time()
            && same_side(self.p.origins(), self.added(Dim::Origin), other.p.origins(), other.added(Dim::Origin))
            && same_side(self.p.dests(), self.added(Dim::Dest), other.p.dests(), other.added(Dim::Dest))
    }
}

/// Whether `a ∪ {x}` equals `b ∪ {y}` for sorted `a`, `b` not holding `x`, `y`.
fn same_side(a: &[RegionId], x: Option<RegionId>, b: &[RegionId], y: Option<RegionId>) -> bool {
    let n = a.len() + x.is_some() as usize;
    if n != b.len() + y.is_some() as usize {
        return false;
    }
    if x == y {
        return a == b;
    }
    let at = |s: &[RegionId], v: Option<RegionId>| v.map_or(s.len(), |v| s.partition_point(|&r| r < v));
    let (ia, ib) = (at(a, x), at(b, y));
    let get = |s: &[RegionId], v: Option<RegionId>, i: usize, k: usize| match k.cmp(&i) {
        std::cmp::Ordering::Less => s[k],
        std::cmp::Ordering::Equal => v.unwrap_or(RegionId::MAX),
        std::cmp::Ordering::Greater => s[k - 1],
    };
    (0..n).all(|k| get(a, x, ia, k) == get(b, y, ib, k))
}

/// Exact set of candidates given as `(parent index, extension)`. Hash
/// collisions are chained and resolved by comparing the candidates.
#[derive(Default)]
struct CandidateSet {
    heads: FxHashMap<u64, u32>,
    /// `(parent, extension, next entry in the chain)`.
    entries: Vec<(u32, Extension, u32)>,
}

impl CandidateSet {
    const END: u32 = u32::MAX;

    fn with_capacity(n: usize) -> Self {
        CandidateSet {
            heads: FxHashMap::with_capacity_and_hasher(n, Default::default()),
            entries: Vec::with_capacity(n),
        }
    }

    /// Adds the candidate; false if an equal one is already present.
    fn insert(&mut self, parents: &[EvaluatedTriple], pi: usize, ext: Extension) -> bool {
        let view = CandidateView { p: &parents[pi].triple, ext };
        let new = self.entries.len() as u32;
        match self.heads.entry(view.hash()) {
            Entry::Vacant(v) => {
                v.insert(new);
                self.entries.push((pi as u32, ext, Self::END));
                true
            }
            Entry::Occupied(o) => {
                let mut at = *o.get();
                loop {
                    let (qi, qext, next) = self.entries[at as usize];
                    let other = CandidateView { p: &parents[qi as usize].triple, ext: qext };
                    if view.same(&other) {
                        return false;
                    }
                    if next == Self::END {
                        break;
                    }
                    at = next;
                }
                self.entries[at as usize].2 = new;
                self.entries.push((pi as u32, ext, Self::END));
                true
            }
        }
    }
}

fn apply_extension_time(t: TimeRange, ext: Extension) -> TimeRange {
    let s = ext.added as Slot;
    if s < t.start {
        TimeRange::new(s, t.end)
    } else {
        TimeRange::new(t.start, s)
    }
}

/// Cardinality of `p` after one extension along `dim`.
pub(crate) fn extended_card(p: &OdtTriple, dim: Dim) -> u64 {
    let (o, d, t) = (p.origins().len() as u64, p.dests().len() as u64, p.time().len() as u64);
    match dim {
        Dim::Origin => (o + 1) * d * t,
        Dim::Dest => o * (d + 1) * t,
        Dim::Time => o * d * (t + 1),
    }
}

/// Count of the difference triple of `p` extended by `ext`.
pub(crate) fn count_extension(p: &OdtTriple, ext: Extension, aps: &AtomicPatternSet) -> u64 {
    let mut n = 0;
    match ext.dim {
        Dim::Origin => {
            for &d in p.dests() {
                for s in p.time().slots() {
                    n += aps.contains(ext.added, d, s) as u64;
                }
            }
        }
        Dim::Dest => {
            for &o in p.origins() {
                for s in p.time().slots() {
                    n += aps.contains(o, ext.added, s) as u64;
                }
            }
        }
        Dim::Time => {
            let s = ext.added as Slot;
            for &o in p.origins() {
                for &d in p.dests() {
                    n += aps.contains(o, d, s) as u64;
                }
            }
        }
    }
    n
}

/// Number of atomic triples of `t` that are atomic patterns.
pub fn count_atomic_patterns(t: &OdtTriple, aps: &AtomicPatternSet) -> u64 {
    let mut n = 0;
    for &o in t.origins() {
        for &d in t.dests() {
            for s in t.time().slots() {
                n += aps.contains(o, d, s) as u64;
            }
        }
    }
    n
}

/// `cnt / card >= s_r`, compared exactly.
pub fn is_pattern(cnt: u64, card: u64, s_r: Fraction) -> bool {
    s_r.le_ratio(cnt, card)
}

/// Where extensions may go: size bounds, allowed regions per side, slot window.
#[derive(Debug, Clone)]
pub(crate) struct Limits {
    bounds: Option<SizeBounds>,
    origins: Option<FixedBitSet>,
    dests: Option<FixedBitSet>,
    slots: TimeRange,
}

impl Limits {
    pub(crate) fn unrestricted(n_slots: usize) -> Self {
        Limits {
            bounds: None,
            origins: None,
            dests: None,
            slots: TimeRange::new(0, (n_slots - 1) as Slot),
        }
    }

    pub(crate) fn from_config(cfg: &MiningConfig, n_regions: usize, n_slots: usize) -> Self {
        let mut l = Limits::unrestricted(n_slots);
        l.bounds = cfg.bounds;
        if let Some(c) = &cfg.constraints {
            let set = |ids: &[RegionId]| {
                let mut b = FixedBitSet::with_capacity(n_regions);
                ids.iter().for_each(|&r| b.insert(r as usize));
                b
            };
            l.origins = Some(set(&c.origins));
            l.dests = Some(set(&c.dests));
            l.slots = c.slots;
        }
        l
    }
}

/// Produces the extensions of a triple along each dimension.
///
/// In frontier mode each candidate region is emitted once, found by stamping
/// the triple's regions and then its side's neighbors with a per-call epoch.
/// Otherwise each member's neighbors are visited in turn and a region
/// adjacent to several members is emitted several times.
pub(crate) struct Expander {
    frontier: bool,
    marks: Vec<u32>,
    epoch: u32,
}

impl Expander {
    pub(crate) fn new(n_regions: usize, frontier: bool) -> Self {
        Expander {
            frontier,
            marks: if frontier { vec![0; n_regions] } else { Vec::new() },
            epoch: 0,
        }
    }

    /// Appends the extensions of `p` along `dim` that respect `limits`.
    pub(crate) fn extend(
        &mut self,
        p: &OdtTriple,
        dim: Dim,
        graph: &RegionGraph,
        limits: &Limits,
        out: &mut Vec<Extension>,
    ) {
        let bounds = limits.bounds;
        let (side, allowed, cap) = match dim {
            Dim::Origin => (p.origins(), &limits.origins, bounds.map(|b| b.origins)),
            Dim::Dest => (p.dests(), &limits.dests, bounds.map(|b| b.dests)),
            Dim::Time => {
                let t = p.time();
                if bounds.is_some_and(|b| t.len() >= b.slots) {
                    return;
                }
                if t.start > limits.slots.start {
                    out.push(Extension { dim, added: (t.start - 1) as u32 });
                }
                if t.end < limits.slots.end {
                    out.push(Extension { dim, added: (t.end + 1) as u32 });
                }
                return;
            }
        };
        if cap.is_some_and(|c| side.len() >= c) {
            return;
        }
        let ok = |r: RegionId| allowed.as_ref().is_none_or(|a| a.contains(r as usize));
        if !self.frontier {
            for &m in side {
                for &r in graph.neighbors(m) {
                    if !p.contains_region(r) && ok(r) {
                        out.push(Extension { dim, added: r });
                    }
                }
            }
            return;
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.fill(0);
            self.epoch = 1;
        }
        let e = self.epoch;
        for &r in p.origins().iter().chain(p.dests()) {
            self.marks[r as usize] = e;
        }
        for &m in side {
            for &r in graph.neighbors(m) {
                let mark = &mut self.marks[r as usize];
                if *mark != e {
                    *mark = e;
                    if ok(r) {
                        out.push(Extension { dim, added: r });
                    }
                }
            }
        }
    }
}

/// Shared setup for every mining entry point: validated config, effective
/// table, atomic patterns and (optionally) the prefix-sum index.
pub(crate) struct Prepared {
    pub aps: AtomicPatternSet,
    pub limits: Limits,
    pub prefix: Option<PrefixSumIndex>,
}

pub(crate) fn prepare(
    table: &SupportTable,
    graph: &RegionGraph,
    cfg: &MiningConfig,
    with_prefix: bool,
) -> Result<Prepared> {
    let n_slots = table.n_slots();
    if n_slots == 0 {
        return Err(OdtError::Config("period has no timeslots".into()));
    }
    if table.n_regions() != graph.n_regions() {
        return Err(OdtError::Config(format!(
            "support table has {} regions but the graph has {}",
            table.n_regions(),
            graph.n_regions()
        )));
    }
    cfg.check(graph, n_slots)?;
    let aps = match &cfg.constraints {
        Some(c) => select_atomic_patterns(&table.restrict(c), cfg.s_a)?,
        None => select_atomic_patterns(table, cfg.s_a)?,
    };
    let prefix = with_prefix.then(|| build_prefix_sum(&aps, &reorder_regions(graph)));
    Ok(Prepared {
        limits: Limits::from_config(cfg, graph.n_regions(), n_slots),
        aps,
        prefix,
    })
}

pub(crate) fn atomic_level(aps: &AtomicPatternSet) -> Vec<EvaluatedTriple> {
    let mut level: Vec<_> = aps
        .members()
        .iter()
        .map(|&(o, d, t)| EvaluatedTriple::new(OdtTriple::atomic(o, d, t), 1))
        .collect();
    level.sort_by_cached_key(|e| e.triple.canonical_key());
    level
}

/// Mines every pattern reachable from the atomic patterns, honoring any
/// size bounds, constraints and level cap in `cfg`.
pub fn mine_all(
    table: &SupportTable,
    graph: &RegionGraph,
    cfg: &MiningConfig,
    opt: OptLevel,
) -> Result<MiningRun> {
    ThresholdMiner::new(table, graph, cfg, opt)?.run()
}

struct Job {
    parent: usize,
    ext: Extension,
    /// Difference count already settled during generation.
    known: Option<u64>,
}

enum DiffCount {
    Known(u64),
    Pending(usize),
}

pub(crate) struct ThresholdMiner<'a> {
    graph: &'a RegionGraph,
    prep: Prepared,
    s_r: Fraction,
    max_level: usize,
    opt: OptLevel,
    cache: DiffCache,
    counters: Counters,
    timings: PhaseTimings,
    reverse_parents: bool,
}

impl<'a> ThresholdMiner<'a> {
    pub(crate) fn new(
        table: &SupportTable,
        graph: &'a RegionGraph,
        cfg: &MiningConfig,
        opt: OptLevel,
    ) -> Result<Self> {
        let start = Instant::now();
        let s_r = cfg
            .s_r
            .ok_or_else(|| OdtError::Config("threshold mining needs s_r".into()))?;
        let prep = prepare(table, graph, cfg, opt.uses_prefix_index())?;
        let timings = PhaseTimings {
            generation: start.elapsed(),
            counting: Duration::ZERO,
        };
        Ok(ThresholdMiner {
            graph,
            prep,
            s_r,
            max_level: cfg.max_level.unwrap_or(usize::MAX),
            opt,
            cache: DiffCache::with_limit(cfg.cache_limit),
            counters: Counters::default(),
            timings,
            reverse_parents: false,
        })
    }

    #[cfg(test)]
    pub(crate) fn reverse_parent_order(mut self) -> Self {
        self.reverse_parents = true;
        self
    }

    pub(crate) fn run(mut self) -> Result<MiningRun> {
        let t0 = Instant::now();
        let mut current = atomic_level(&self.prep.aps);
        self.timings.generation += t0.elapsed();
        let mut levels = Vec::new();
        let mut level = 3;
        while !current.is_empty() {
            let next = if level < self.max_level {
                self.next_level(&current)
            } else {
                Vec::new()
            };
            levels.push(LevelPatterns {
                level,
                patterns: current,
            });
            current = next;
            level += 1;
        }
        Ok(MiningRun {
            patterns: PatternSet { levels },
            counters: self.counters,
            timings: self.timings,
            minsup: self.prep.aps.minsup(),
            n_atomic_triples: self.prep.aps.n_atomic_triples(),
            n_atomic_patterns: self.prep.aps.len(),
        })
    }

    fn next_level(&mut self, parents: &[EvaluatedTriple]) -> Vec<EvaluatedTriple> {
        let gen_start = Instant::now();
        let jobs = self.generate(parents);
        self.timings.generation += gen_start.elapsed();

        let count_start = Instant::now();
        let accepted = self.evaluate(parents, jobs);
        self.timings.counting += count_start.elapsed();

        let sort_start = Instant::now();
        let mut accepted = accepted;
        accepted.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let out = accepted.into_iter().map(|(_, e)| e).collect();
        self.timings.generation += sort_start.elapsed();
        out
    }

    /// Extends every parent and keeps one job per distinct candidate: the
    /// first `(parent, extension)` pair that produces it.
    ///
    /// The zero-support check and the prefix-sum bound then run on that job
    /// only. Deduplicating first means every opt level sees the same jobs and
    /// the optimizations can only remove work, never move a candidate to a
    /// parent whose difference triple misses the cache.
    fn generate(&mut self, parents: &[EvaluatedTriple]) -> Vec<Job> {
        let mut seen = CandidateSet::with_capacity(parents.len() * 4);
        let mut expander = Expander::new(self.graph.n_regions(), self.opt.uses_frontier());
        let mut jobs = Vec::new();
        let mut exts = Vec::new();
        let order: Box<dyn Iterator<Item = usize>> = if self.reverse_parents {
            Box::new((0..parents.len()).rev())
        } else {
            Box::new(0..parents.len())
        };
        let aps = &self.prep.aps;
        for pi in order {
            let parent = &parents[pi];
            let p = &parent.triple;
            exts.clear();
            for dim in Dim::ALL {
                expander.extend(p, dim, self.graph, &self.prep.limits, &mut exts);
            }
            for &ext in &exts {
                self.counters.generated += 1;
                if !seen.insert(parents, pi, ext) {
                    self.counters.deduped += 1;
                    continue;
                }
                let mut known = None;
                if self.opt.checks_zero_support() && zero_support_skip(p, ext.dim, ext.added, aps) {
                    self.counters.zero_skips += 1;
                    if !is_pattern(parent.cnt, extended_card(p, ext.dim), self.s_r) {
                        continue;
                    }
                    known = Some(0);
                } else if let Some(idx) = &self.prep.prefix {
                    let need = self.s_r.ceil_mul(extended_card(p, ext.dim));
                    if parent.cnt + upper_bound_extension(p, ext, idx) < need {
                        self.counters.prefix_prunes += 1;
                        continue;
                    }
                }
                jobs.push(Job { parent: pi, ext, known });
            }
        }
        jobs
    }

    fn evaluate(
        &mut self,
        parents: &[EvaluatedTriple],
        jobs: Vec<Job>,
    ) -> Vec<(CanonicalKey, EvaluatedTriple)> {
        let aps = &self.prep.aps;
        let opt = self.opt;
        let mut plan = Vec::with_capacity(jobs.len());
        let mut to_count: Vec<(usize, Extension)> = Vec::new();
        let mut fresh: Vec<(usize, CanonicalKey)> = Vec::new();
        let mut pending: FxHashMap<CanonicalKey, usize> = FxHashMap::default();
        self.counters.evaluated += jobs.len() as u64;

        for job in &jobs {
            let p = &parents[job.parent].triple;
            if let Some(c) = job.known {
                plan.push(DiffCount::Known(c));
                continue;
            }
            if opt.caches_differences() {
                let (level, key) = diff_key(p, job.ext);
                if let Some(c) = self.cache.get(level, &key) {
                    self.counters.cache_hits += 1;
                    plan.push(DiffCount::Known(c));
                } else if let Some(&slot) = pending.get(&key) {
                    self.counters.cache_hits += 1;
                    plan.push(DiffCount::Pending(slot));
                } else {
                    pending.insert(key.clone(), to_count.len());
                    fresh.push((level, key));
                    plan.push(DiffCount::Pending(to_count.len()));
                    to_count.push((job.parent, job.ext));
                }
            } else {
                plan.push(DiffCount::Pending(to_count.len()));
                to_count.push((job.parent, job.ext));
            }
        }

        let counts: Vec<u64> = to_count
            .par_iter()
            .map(|&(pi, ext)| count_extension(&parents[pi].triple, ext, aps))
            .collect();
        self.counters.exact_counts += counts.len() as u64;
        for ((level, key), &c) in fresh.into_iter().zip(&counts) {
            self.cache.insert(level, key, c);
        }

        let s_r = self.s_r;
        jobs.into_iter()
            .zip(plan)
            .filter_map(|(job, dc)| {
                let diff_cnt = match dc {
                    DiffCount::Known(c) => c,
                    DiffCount::Pending(slot) => counts[slot],
                };
                let p = &parents[job.parent];
                let cnt = p.cnt + diff_cnt;
                let card = extended_card(&p.triple, job.ext.dim);
                is_pattern(cnt, card, s_r).then(|| {
                    let triple = apply_extension(&p.triple, job.ext);
                    (triple.canonical_key(), EvaluatedTriple { triple, cnt, card })
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{aggregate, TripRecord, MINUTES_PER_DAY};

    const A: RegionId = 0;
    const B: RegionId = 1;
    const C: RegionId = 2;
    const D: RegionId = 3;

    fn tr(o: &[RegionId], d: &[RegionId], s: Slot, e: Slot) -> OdtTriple {
        OdtTriple::new(o.to_vec(), d.to_vec(), TimeRange::new(s, e))
    }

    fn example_graph() -> RegionGraph {
        RegionGraph::from_edges(4, [(A, B), (A, C), (B, C), (B, D), (C, D)]).unwrap()
    }

    fn example_table() -> SupportTable {
        let trips = [
            TripRecord::new(A, D, 9 * 60 + 5, 3),
            TripRecord::new(B, D, 9 * 60 + 20, 2),
            TripRecord::new(B, D, 9 * 60 + 29, 1),
            TripRecord::new(C, A, 8 * 60 + 40, 2),
            TripRecord::new(D, B, 10 * 60 + 15, 1),
            TripRecord::new(A, C, 9 * 60 + 45, 1),
        ];
        aggregate(&trips, 30, 4, MINUTES_PER_DAY).unwrap()
    }

    fn cfg(s_a: &str, s_r: &str) -> MiningConfig {
        MiningConfig::new(s_a.parse().unwrap(), s_r.parse().unwrap())
    }

    #[test]
    fn generalizations_of_an_atomic_triple() {
        let g = example_graph();
        let gens = minimal_generalizations(&OdtTriple::atomic(A, D, 18), &g, 48);
        let cands: Vec<_> = gens.iter().map(|(c, _)| c.clone()).collect();
        assert!(cands.contains(&tr(&[A, B], &[D], 18, 18)));
        assert!(cands.contains(&tr(&[A], &[D], 17, 18)));
        assert!(cands.contains(&tr(&[A], &[D], 18, 19)));
        // C is adjacent to both A and D but must appear once per side.
        assert_eq!(cands.iter().filter(|c| **c == tr(&[A, C], &[D], 18, 18)).count(), 1);
        assert_eq!(cands.iter().filter(|c| **c == tr(&[A], &[C, D], 18, 18)).count(), 1);
        assert_eq!(cands.len(), 2 + 2 + 2);
    }

    #[test]
    fn origin_growth_through_a_shared_neighbor() {
        let g = example_graph();
        let gens = minimal_generalizations(&tr(&[B, D], &[A], 3, 3), &g, 48);
        assert!(gens.iter().any(|(c, _)| *c == tr(&[B, C, D], &[A], 3, 3)));
    }

    #[test]
    fn time_extension_stops_at_the_period_edges() {
        let g = RegionGraph::from_edges(2, [(0, 1)]).unwrap();
        let gens = minimal_generalizations(&OdtTriple::atomic(0, 1, 0), &g, 48);
        assert_eq!(gens.len(), 1);
        assert_eq!(gens[0].0.time(), TimeRange::new(0, 1));
        let gens = minimal_generalizations(&OdtTriple::atomic(0, 1, 47), &g, 48);
        assert_eq!(gens[0].0.time(), TimeRange::new(46, 47));
    }

    #[test]
    fn difference_examples() {
        let p = tr(&[A], &[C, D], 1, 2);
        let ext = Extension { dim: Dim::Origin, added: B };
        let cand = apply_extension(&p, ext);
        assert_eq!(cand, tr(&[A, B], &[C, D], 1, 2));
        assert_eq!(difference(&cand, &p, ext), tr(&[B], &[C, D], 1, 2));

        let p = tr(&[A], &[B], 5, 5);
        let ext = Extension { dim: Dim::Time, added: 6 };
        assert_eq!(difference(&apply_extension(&p, ext), &p, ext), tr(&[A], &[B], 6, 6));
        let ext = Extension { dim: Dim::Dest, added: C };
        assert_eq!(difference(&apply_extension(&p, ext), &p, ext), tr(&[A], &[C], 5, 5));
    }

    #[test]
    fn counting_examples() {
        let table = example_table();
        let aps = select_atomic_patterns(&table, "0.5".parse().unwrap()).unwrap();
        assert_eq!(count_atomic_patterns(&OdtTriple::atomic(B, D, 18), &aps), 1);

        let empty = AtomicPatternSet::from_members(4, 4, []);
        assert_eq!(count_atomic_patterns(&tr(&[A, B], &[C, D], 1, 3), &empty), 0);

        let mut all = Vec::new();
        for o in [A, B] {
            for d in [C, D] {
                for t in 1..=3 {
                    all.push((o, d, t));
                }
            }
        }
        let full = AtomicPatternSet::from_members(4, 4, all);
        assert_eq!(count_atomic_patterns(&tr(&[A, B], &[C, D], 1, 3), &full), 12);
    }

    #[test]
    fn candidate_set_matches_key_dedup() {
        let g = RegionGraph::from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (1, 4), (0, 5)]).unwrap();
        let mut level: Vec<EvaluatedTriple> = vec![
            EvaluatedTriple::new(OdtTriple::atomic(0, 3, 2), 1),
            EvaluatedTriple::new(OdtTriple::atomic(1, 3, 2), 1),
            EvaluatedTriple::new(OdtTriple::atomic(4, 2, 1), 1),
        ];
        for _ in 0..3 {
            let mut set = CandidateSet::default();
            let mut keys = std::collections::BTreeSet::new();
            let mut next = Vec::new();
            for (pi, parent) in level.iter().enumerate() {
                for (cand, ext) in minimal_generalizations(&parent.triple, &g, 5) {
                    assert_eq!(set.insert(&level, pi, ext), keys.insert(cand.canonical_key()));
                    next.push(EvaluatedTriple::new(cand, 1));
                }
            }
            next.sort_by_key(|e| e.triple.canonical_key());
            next.dedup_by(|a, b| a.triple == b.triple);
            level = next;
        }
    }

    #[test]
    fn same_side_matches_set_union() {
        let union = |s: &[u32], v: Option<u32>| {
            let mut u: Vec<u32> = s.iter().copied().chain(v).collect();
            u.sort_unstable();
            u
        };
        let sets: Vec<Vec<u32>> = (0u32..32)
            .map(|m| (0..5).filter(|i| m & (1 << i) != 0).collect())
            .collect();
        let extras = [None, Some(0), Some(2), Some(4)];
        for a in &sets {
            for &x in &extras {
                if x.is_some_and(|x| a.contains(&x)) {
                    continue;
                }
                for b in &sets {
                    for &y in &extras {
                        if y.is_some_and(|y| b.contains(&y)) {
                            continue;
                        }
                        assert_eq!(same_side(a, x, b, y), union(a, x) == union(b, y), "{a:?}+{x:?} vs {b:?}+{y:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn candidate_set_resolves_collisions() {
        let parents = vec![
            EvaluatedTriple::new(OdtTriple::atomic(0, 2, 0), 1),
            EvaluatedTriple::new(OdtTriple::atomic(1, 2, 0), 1),
        ];
        let a = Extension { dim: Dim::Dest, added: 3 };
        let b = Extension { dim: Dim::Origin, added: 0 };
        let mut set = CandidateSet::default();
        assert!(set.insert(&parents, 0, a));
        // Point b's hash at a's entry to force a chain walk.
        let hb = CandidateView { p: &parents[1].triple, ext: b }.hash();
        set.heads.insert(hb, 0);
        assert!(set.insert(&parents, 1, b));
        assert!(!set.insert(&parents, 1, b));
        // ({0,1},2,0) again, from the other side.
        assert!(!set.insert(&parents, 0, Extension { dim: Dim::Origin, added: 1 }));
        assert_eq!(set.entries.len(), 2);
    }

    #[test]
    fn shortcut_helpers_agree_with_built_triples() {
        use crate::optimize::{upper_bound_count, upper_bound_extension};
        use rand::{Rng, SeedableRng};
        let g = RegionGraph::from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (1, 4)]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let members: Vec<_> = (0..60)
            .map(|_| (rng.random_range(0..6u32), rng.random_range(0..6u32), rng.random_range(0..5u16)))
            .filter(|(o, d, _)| o != d)
            .collect();
        let aps = AtomicPatternSet::from_members(6, 5, members);
        let idx = build_prefix_sum(&aps, &reorder_regions(&g));
        let mut frontier_set = vec![OdtTriple::atomic(0, 3, 2), OdtTriple::atomic(4, 1, 0)];
        for _ in 0..3 {
            let mut next = Vec::new();
            for p in &frontier_set {
                for (cand, ext) in minimal_generalizations(p, &g, 5) {
                    let diff = diff_of(p, ext);
                    assert_eq!(candidate_key(p, ext), cand.canonical_key());
                    assert_eq!(diff_key(p, ext), (diff.level(), diff.canonical_key()));
                    assert_eq!(count_extension(p, ext, &aps), count_atomic_patterns(&diff, &aps));
                    assert_eq!(upper_bound_extension(p, ext, &idx), upper_bound_count(&diff, &idx));
                    next.push(cand);
                }
            }
            frontier_set = next;
        }
    }

    #[test]
    fn in_place_frontier_matches_the_set_version() {
        use crate::optimize::frontier;
        let g = RegionGraph::from_edges(7, [(0, 1), (1, 2), (2, 3), (3, 0), (2, 4), (4, 5), (5, 6), (1, 5)]).unwrap();
        let limits = Limits::unrestricted(3);
        for om in 1u32..128 {
            for dm in [1u32, 8, 48, 96] {
                if om & dm != 0 {
                    continue;
                }
                let ids = |m: u32| (0..7).filter(|i| m & (1 << i) != 0).collect::<Vec<u32>>();
                let p = OdtTriple::new(ids(om), ids(dm), TimeRange::single(1));
                let mut out = Vec::new();
                Expander::new(7, true).extend(&p, Dim::Origin, &g, &limits, &mut out);
                let mut got: Vec<_> = out.iter().map(|e| e.added).collect();
                got.sort_unstable();
                assert_eq!(got, frontier(p.origins(), &g, p.dests()));
            }
        }
    }

    #[test]
    fn ratio_test_examples() {
        assert!(is_pattern(2, 2, "0.6".parse().unwrap()));
        assert!(!is_pattern(0, 1, "0.01".parse().unwrap()));
        assert!(is_pattern(3, 6, "0.5".parse().unwrap()));
        assert!(!is_pattern(2, 6, "0.5".parse().unwrap()));
    }

    #[test]
    fn running_example_finds_the_joint_origin() {
        let run = mine_all(&example_table(), &example_graph(), &cfg("0.5", "0.6"), OptLevel::Baseline)
            .unwrap();
        assert_eq!(run.minsup, 2);
        let p = run.patterns.find(&tr(&[A, B], &[D], 18, 18)).expect("(AB,D,18) is a pattern");
        assert_eq!((p.cnt, p.card), (2, 2));
        assert_eq!(p.level(), 4);
    }

    #[test]
    fn ratio_above_one_stops_after_atomic_level() {
        let run =
            mine_all(&example_table(), &example_graph(), &cfg("0.5", "1.01"), OptLevel::Opt).unwrap();
        assert_eq!(run.patterns.levels.len(), 1);
        assert_eq!(run.patterns.levels[0].level, 3);
    }

    #[test]
    fn every_opt_level_agrees_on_the_running_example() {
        let (t, g) = (example_table(), example_graph());
        let base = mine_all(&t, &g, &cfg("1", "0.3"), OptLevel::Baseline).unwrap();
        for opt in OptLevel::ALL {
            let run = mine_all(&t, &g, &cfg("1", "0.3"), opt).unwrap();
            assert_eq!(run.patterns, base.patterns, "{opt}");
        }
    }

    #[test]
    fn parent_order_does_not_matter() {
        let (t, g) = (example_table(), example_graph());
        let c = cfg("1", "0.3");
        let fwd = ThresholdMiner::new(&t, &g, &c, OptLevel::Av).unwrap().run().unwrap();
        let rev = ThresholdMiner::new(&t, &g, &c, OptLevel::Av)
            .unwrap()
            .reverse_parent_order()
            .run()
            .unwrap();
        assert_eq!(fwd.patterns, rev.patterns);
    }

    #[test]
    fn mismatched_region_counts_are_rejected() {
        let g = RegionGraph::from_edges(5, [(0, 1)]).unwrap();
        assert!(mine_all(&example_table(), &g, &cfg("0.5", "0.5"), OptLevel::Opt).is_err());
    }

    #[test]
    fn max_level_caps_the_loop() {
        let (t, g) = (example_table(), example_graph());
        let run = mine_all(&t, &g, &cfg("1", "0.2").with_max_level(4), OptLevel::Opt).unwrap();
        assert!(run.patterns.max_level().unwrap() <= 4);
    }
}
