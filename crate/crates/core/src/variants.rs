//! Size-bounded, constrained and rank-based mining.

use std::cell::RefCell;
use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::enumerate::{
    apply_extension, atomic_level, candidate_key, count_extension, diff_key, mine_all, prepare,
    Counters, Expander, LevelPatterns, Limits, MiningRun, PatternSet, PhaseTimings,
};
use crate::error::{OdtError, Result};
use crate::ingest::{AtomicPatternSet, SupportTable};
use crate::model::{
    CanonicalKey, Constraints, Dim, EvaluatedTriple, Extension, MiningConfig, OdtTriple,
    RegionGraph, SizeBounds,
};
use crate::optimize::{upper_bound_extension, zero_support_skip, DiffCache, OptLevel, PrefixSumIndex};

/// Threshold mining with extensions capped at `bounds` per dimension.
pub fn mine_bounded(
    table: &SupportTable,
    graph: &RegionGraph,
    cfg: &MiningConfig,
    bounds: SizeBounds,
    opt: OptLevel,
) -> Result<MiningRun> {
    mine_all(table, graph, &cfg.clone().with_bounds(bounds), opt)
}

/// Threshold mining confined to `constraints`. The `s_a` fraction is taken
/// over the atomic triples inside the constraints only.
pub fn mine_constrained(
    table: &SupportTable,
    graph: &RegionGraph,
    cfg: &MiningConfig,
    constraints: Constraints,
    opt: OptLevel,
) -> Result<MiningRun> {
    mine_all(table, graph, &cfg.clone().with_constraints(constraints), opt)
}

/// Largest count a single extension along `dim` can add to `p`.
pub fn max_extension_gain(p: &EvaluatedTriple, dim: Dim) -> u64 {
    let t = &p.triple;
    let (o, d, s) = (t.origins().len() as u64, t.dests().len() as u64, t.time().len() as u64);
    match dim {
        Dim::Origin => d * s,
        Dim::Dest => o * s,
        Dim::Time => o * d,
    }
}

/// True when no minimal generalization of `p` can reach a count above `theta`.
///
/// The miner itself prunes only when the bound is strictly below the
/// threshold, so that candidates tying with the current worst entry still
/// reach the key tie-break.
pub fn prune_parent(p: &EvaluatedTriple, theta: u64) -> bool {
    let gain = Dim::ALL.iter().map(|&d| max_extension_gain(p, d)).max().unwrap_or(0);
    p.cnt + gain <= theta
}

/// Ranking order: higher count first, then ascending canonical key.
fn rank_cmp(a: (u64, &CanonicalKey), b: (u64, &CanonicalKey)) -> Ordering {
    b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

struct HeapEntry {
    key: CanonicalKey,
    et: EvaluatedTriple,
}

impl HeapEntry {
    fn order(&self) -> (Reverse<u64>, &CanonicalKey) {
        (Reverse(self.et.cnt), &self.key)
    }
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.order() == other.order()
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.order().cmp(&other.order())
    }
}

/// Bounded collection of the best `k` triples. The top is the worst kept
/// entry: lowest count, and among equal counts the largest key.
pub struct RankHeap {
    k: usize,
    heap: BinaryHeap<HeapEntry>,
}

impl RankHeap {
    pub fn new(k: usize) -> Self {
        RankHeap {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.heap.len() >= self.k
    }

    /// Count of the worst kept entry once the heap is full.
    pub fn threshold(&self) -> Option<u64> {
        if self.is_full() {
            self.heap.peek().map(|e| e.et.cnt)
        } else {
            None
        }
    }

    /// Inserts `et` if it ranks among the best `k`. Zero counts never enter.
    pub fn offer(&mut self, et: EvaluatedTriple) -> bool {
        self.offer_keyed(et.triple.canonical_key(), et)
    }

    fn offer_keyed(&mut self, key: CanonicalKey, et: EvaluatedTriple) -> bool {
        if et.cnt == 0 || self.k == 0 {
            return false;
        }
        if !self.is_full() {
            self.heap.push(HeapEntry { key, et });
            return true;
        }
        let top = self.heap.peek().expect("full heap is non-empty");
        if rank_cmp((et.cnt, &key), (top.et.cnt, &top.key)) == Ordering::Less {
            self.heap.pop();
            self.heap.push(HeapEntry { key, et });
            true
        } else {
            false
        }
    }

    /// Entries from best to worst.
    pub fn into_sorted(self) -> Vec<EvaluatedTriple> {
        let mut v: Vec<_> = self.heap.into_vec();
        v.sort_by(|a, b| rank_cmp((a.et.cnt, &a.key), (b.et.cnt, &b.key)));
        v.into_iter().map(|e| e.et).collect()
    }
}

/// Strategy for ranked mining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankAlgo {
    /// Count every candidate, then select.
    BaseRank,
    /// As `BaseRank` with the zero-support check, difference cache and frontier.
    BaseOptRank,
    /// Heap-driven selection with parent, family and prefix-sum pruning.
    OptRank,
}

impl RankAlgo {
    pub const ALL: [RankAlgo; 3] = [RankAlgo::BaseRank, RankAlgo::BaseOptRank, RankAlgo::OptRank];
}

impl fmt::Display for RankAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankAlgo::BaseRank => "baserank",
            RankAlgo::BaseOptRank => "baseoptrank",
            RankAlgo::OptRank => "optrank",
        })
    }
}

impl FromStr for RankAlgo {
    type Err = OdtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baserank" => Ok(RankAlgo::BaseRank),
            "baseoptrank" => Ok(RankAlgo::BaseOptRank),
            "optrank" => Ok(RankAlgo::OptRank),
            other => Err(OdtError::Config(format!("unknown rank algorithm {other:?}"))),
        }
    }
}

/// Counts difference triples with whichever shortcuts are enabled.
struct DiffCounter<'a> {
    aps: &'a AtomicPatternSet,
    zero_check: bool,
    cache: Option<DiffCache>,
}

impl DiffCounter<'_> {
    fn count(&mut self, parent: &OdtTriple, ext: Extension, c: &mut Counters) -> u64 {
        if self.zero_check && zero_support_skip(parent, ext.dim, ext.added, self.aps) {
            c.zero_skips += 1;
            return 0;
        }
        if let Some(cache) = &mut self.cache {
            let (level, key) = diff_key(parent, ext);
            if let Some(v) = cache.get(level, &key) {
                c.cache_hits += 1;
                return v;
            }
            c.exact_counts += 1;
            let v = count_extension(parent, ext, self.aps);
            cache.insert(level, key, v);
            return v;
        }
        c.exact_counts += 1;
        count_extension(parent, ext, self.aps)
    }
}

/// Ranked mining: level 3 holds every atomic pattern; each higher level up
/// to the configured cap holds the `k` best minimal generalizations of the
/// previous level by count, ties broken by ascending canonical key.
pub fn mine_topk(
    table: &SupportTable,
    graph: &RegionGraph,
    cfg: &MiningConfig,
    algo: RankAlgo,
) -> Result<MiningRun> {
    let start = Instant::now();
    let rank = cfg
        .rank
        .ok_or_else(|| OdtError::Config("ranked mining needs k and a max level".into()))?;
    let prep = prepare(table, graph, cfg, algo == RankAlgo::OptRank)?;
    let mut timings = PhaseTimings {
        generation: start.elapsed(),
        counting: Duration::ZERO,
    };
    let mut counters = Counters::default();
    let opt = match algo {
        RankAlgo::BaseRank => OptLevel::Baseline,
        _ => OptLevel::Opt,
    };
    let mut counter = DiffCounter {
        aps: &prep.aps,
        zero_check: opt.checks_zero_support(),
        cache: opt
            .caches_differences()
            .then(|| DiffCache::with_limit(cfg.cache_limit)),
    };
    let ranker = Ranker {
        graph,
        prep_limits: &prep.limits,
        expander: RefCell::new(Expander::new(graph.n_regions(), opt.uses_frontier())),
        k: rank.k,
    };

    let t0 = Instant::now();
    let mut current = atomic_level(&prep.aps);
    timings.generation += t0.elapsed();
    let mut levels = Vec::new();
    let mut level = 3;
    while !current.is_empty() {
        let next = if level < rank.max_level {
            match algo {
                RankAlgo::OptRank => ranker.pruned_level(
                    &current,
                    &mut counter,
                    prep.prefix.as_ref(),
                    &mut counters,
                    &mut timings,
                ),
                _ => ranker.full_level(&current, &mut counter, &mut counters, &mut timings),
            }
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
        counters,
        timings,
        minsup: prep.aps.minsup(),
        n_atomic_triples: prep.aps.n_atomic_triples(),
        n_atomic_patterns: prep.aps.len(),
    })
}

struct Ranker<'a> {
    graph: &'a RegionGraph,
    prep_limits: &'a Limits,
    expander: RefCell<Expander>,
    k: usize,
}

impl Ranker<'_> {
    fn extensions_of(&self, p: &OdtTriple, dim: Dim, out: &mut Vec<Extension>) {
        out.clear();
        self.expander.borrow_mut().extend(p, dim, self.graph, self.prep_limits, out);
    }

    /// Generates and counts every candidate, then keeps the best `k`.
    fn full_level(
        &self,
        parents: &[EvaluatedTriple],
        counter: &mut DiffCounter<'_>,
        c: &mut Counters,
        t: &mut PhaseTimings,
    ) -> Vec<EvaluatedTriple> {
        let mut seen = FxHashSet::default();
        let mut heap = RankHeap::new(self.k);
        let mut exts = Vec::new();
        for parent in parents {
            let p = &parent.triple;
            for dim in Dim::ALL {
                let g0 = Instant::now();
                self.extensions_of(p, dim, &mut exts);
                t.generation += g0.elapsed();
                for &ext in &exts {
                    let g0 = Instant::now();
                    c.generated += 1;
                    let key = candidate_key(p, ext);
                    let fresh = !seen.contains(&key);
                    if fresh {
                        seen.insert(key.clone());
                    }
                    t.generation += g0.elapsed();
                    if !fresh {
                        c.deduped += 1;
                        continue;
                    }
                    c.evaluated += 1;
                    let c0 = Instant::now();
                    let cnt = parent.cnt + counter.count(p, ext, c);
                    t.counting += c0.elapsed();
                    heap.offer_keyed(key, EvaluatedTriple::new(apply_extension(p, ext), cnt));
                }
            }
        }
        finish_level(heap)
    }

    /// Heap-driven selection. Parents are visited from highest count down;
    /// once the heap is full, a parent, an extension family or a single
    /// candidate is skipped when its best possible count is below the
    /// current worst kept count.
    fn pruned_level(
        &self,
        parents: &[EvaluatedTriple],
        counter: &mut DiffCounter<'_>,
        prefix: Option<&PrefixSumIndex>,
        c: &mut Counters,
        t: &mut PhaseTimings,
    ) -> Vec<EvaluatedTriple> {
        let g0 = Instant::now();
        let mut order: Vec<(CanonicalKey, &EvaluatedTriple)> =
            parents.iter().map(|e| (e.triple.canonical_key(), e)).collect();
        order.sort_by(|a, b| rank_cmp((a.1.cnt, &a.0), (b.1.cnt, &b.0)));
        t.generation += g0.elapsed();

        let mut seen = FxHashSet::default();
        let mut heap = RankHeap::new(self.k);
        let mut exts = Vec::new();
        for (_, parent) in order {
            let p = &parent.triple;
            if let Some(theta) = heap.threshold() {
                let gain = Dim::ALL.iter().map(|&d| max_extension_gain(parent, d)).max().unwrap_or(0);
                if parent.cnt + gain < theta {
                    c.parents_pruned += 1;
                    continue;
                }
            }
            for dim in Dim::ALL {
                if let Some(theta) = heap.threshold() {
                    if parent.cnt + max_extension_gain(parent, dim) < theta {
                        c.families_pruned += 1;
                        continue;
                    }
                }
                let g0 = Instant::now();
                self.extensions_of(p, dim, &mut exts);
                t.generation += g0.elapsed();
                for &ext in &exts {
                    let g0 = Instant::now();
                    c.generated += 1;
                    let key = candidate_key(p, ext);
                    let fresh = !seen.contains(&key);
                    if fresh {
                        seen.insert(key.clone());
                    }
                    t.generation += g0.elapsed();
                    if !fresh {
                        c.deduped += 1;
                        continue;
                    }
                    c.evaluated += 1;
                    let c0 = Instant::now();
                    if let (Some(idx), Some(theta)) = (prefix, heap.threshold()) {
                        if parent.cnt + upper_bound_extension(p, ext, idx) < theta {
                            c.prefix_prunes += 1;
                            t.counting += c0.elapsed();
                            continue;
                        }
                    }
                    let cnt = parent.cnt + counter.count(p, ext, c);
                    t.counting += c0.elapsed();
                    heap.offer_keyed(key, EvaluatedTriple::new(apply_extension(p, ext), cnt));
                }
            }
        }
        finish_level(heap)
    }
}

fn finish_level(heap: RankHeap) -> Vec<EvaluatedTriple> {
    let mut v = heap.into_sorted();
    v.sort_by_cached_key(|e| e.triple.canonical_key());
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SupportTable;
    use crate::model::TimeRange;
    use std::collections::HashSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Counts here are arbitrary scores, so the card check is bypassed.
    fn et(o: &[u32], d: &[u32], s: u16, e: u16, cnt: u64) -> EvaluatedTriple {
        let triple = OdtTriple::new(o.to_vec(), d.to_vec(), TimeRange::new(s, e));
        let card = triple.cardinality();
        EvaluatedTriple { triple, cnt, card }
    }

    fn grid(rows: usize, cols: usize) -> RegionGraph {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = (r * cols + c) as u32;
                if c + 1 < cols {
                    edges.push((v, v + 1));
                }
                if r + 1 < rows {
                    edges.push((v, v + cols as u32));
                }
            }
        }
        RegionGraph::from_edges(rows * cols, edges).unwrap()
    }

    fn random_table(n: usize, m: usize, seed: u64) -> SupportTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = SupportTable::new(n, m);
        for o in 0..n as u32 {
            for d in 0..n as u32 {
                for s in 0..m as u16 {
                    if o != d && rng.random_bool(0.5) {
                        t.add(o, d, s, rng.random_range(1..20));
                    }
                }
            }
        }
        t
    }

    #[test]
    fn gain_examples() {
        let p = et(&[0, 1], &[2, 3, 4], 0, 3, 0);
        assert_eq!(max_extension_gain(&p, Dim::Origin), 12);
        assert_eq!(max_extension_gain(&p, Dim::Dest), 8);
        assert_eq!(max_extension_gain(&p, Dim::Time), 6);
        let a = et(&[0], &[1], 0, 0, 1);
        for d in Dim::ALL {
            assert_eq!(max_extension_gain(&a, d), 1);
        }
    }

    #[test]
    fn prune_parent_examples() {
        // Largest gain 4 (extend O or T by one), count 5.
        let p = et(&[0], &[2, 3, 4, 5], 0, 0, 5);
        assert_eq!(Dim::ALL.map(|d| max_extension_gain(&p, d)), [4, 1, 4]);
        assert!(prune_parent(&p, 9));
        assert!(!prune_parent(&p, 8));
    }

    #[test]
    fn heap_keeps_best_with_key_tiebreak() {
        let mut h = RankHeap::new(2);
        assert_eq!(h.threshold(), None);
        assert!(h.offer(et(&[0], &[1], 0, 0, 3)));
        assert!(h.offer(et(&[0], &[2], 0, 0, 3)));
        assert_eq!(h.threshold(), Some(3));
        // Same count, larger key than both entries: rejected.
        assert!(!h.offer(et(&[0], &[3], 0, 0, 3)));
        // Same count, smaller key than the top: replaces it.
        assert!(h.offer(et(&[0], &[1], 0, 1, 3)));
        assert!(!h.offer(et(&[5], &[6], 0, 0, 0)));
        let out = h.into_sorted();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|e| e.cnt == 3));
    }

    #[test]
    fn heap_threshold_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut h = RankHeap::new(5);
        let mut last = 0;
        for i in 0..200u32 {
            h.offer(et(&[i], &[i + 1000], 0, 0, rng.random_range(0..50)));
            if let Some(t) = h.threshold() {
                assert!(t >= last);
                last = t;
            }
        }
    }

    #[test]
    fn rank_algo_parsing() {
        for a in RankAlgo::ALL {
            assert_eq!(a.to_string().parse::<RankAlgo>().unwrap(), a);
        }
        assert!("fastrank".parse::<RankAlgo>().is_err());
    }

    #[test]
    fn optrank_matches_baserank_on_random_grids() {
        let g = grid(3, 3);
        for seed in 0..6 {
            let t = random_table(9, 4, seed);
            for k in [1, 3, 10] {
                let cfg = MiningConfig::ranked("0.3".parse().unwrap(), k, 6);
                let base = mine_topk(&t, &g, &cfg, RankAlgo::BaseRank).unwrap();
                for algo in [RankAlgo::BaseOptRank, RankAlgo::OptRank] {
                    let run = mine_topk(&t, &g, &cfg, algo).unwrap();
                    assert_eq!(run.patterns, base.patterns, "seed {seed} k {k} {algo}");
                    assert!(run.counters.exact_counts <= base.counters.exact_counts);
                }
                for l in &base.patterns.levels[1..] {
                    assert!(l.patterns.len() <= k);
                    assert!(l.level <= 6);
                }
            }
        }
    }

    #[test]
    fn k_one_picks_the_best_candidate() {
        let g = grid(2, 3);
        let t = random_table(6, 3, 4);
        let cfg = MiningConfig::ranked("0.5".parse().unwrap(), 1, 5);
        let run = mine_topk(&t, &g, &cfg, RankAlgo::OptRank).unwrap();
        // Score every minimal generalization of level 3 exhaustively.
        let l3 = run.patterns.level(3);
        let aps_count = |tr: &OdtTriple| {
            let set: HashSet<_> = l3.iter().map(|e| e.triple.clone()).collect();
            let mut n = 0;
            for &o in tr.origins() {
                for &d in tr.dests() {
                    for s in tr.time().slots() {
                        n += set.contains(&OdtTriple::atomic(o, d, s)) as u64;
                    }
                }
            }
            n
        };
        let mut best: Option<(u64, CanonicalKey)> = None;
        for p in l3 {
            for (cand, _) in crate::enumerate::minimal_generalizations(&p.triple, &g, 3) {
                let s = (aps_count(&cand), cand.canonical_key());
                best = match best {
                    Some(b) if rank_cmp((b.0, &b.1), (s.0, &s.1)) != Ordering::Greater => Some(b),
                    _ => Some(s),
                };
            }
        }
        let best = best.unwrap();
        let l4 = run.patterns.level(4);
        assert_eq!(l4.len(), 1);
        assert_eq!((l4[0].cnt, l4[0].triple.canonical_key()), best);
    }

    #[test]
    fn bounded_equals_filtered_full_run() {
        let g = grid(3, 3);
        let t = random_table(9, 4, 3);
        let cfg = MiningConfig::new("0.4".parse().unwrap(), "0.5".parse().unwrap());
        let full = mine_all(&t, &g, &cfg, OptLevel::Opt).unwrap();
        let b = SizeBounds { origins: 2, dests: 1, slots: 2 };
        let bounded = mine_bounded(&t, &g, &cfg, b, OptLevel::Opt).unwrap();
        let filtered: Vec<_> = full
            .patterns
            .iter()
            .filter(|e| {
                let tr = &e.triple;
                tr.origins().len() <= 2 && tr.dests().len() <= 1 && tr.time().len() <= 2
            })
            .cloned()
            .collect();
        let got: Vec<_> = bounded.patterns.iter().cloned().collect();
        assert_eq!(got, filtered);
        assert!(bounded.patterns.max_level().unwrap() <= 5);

        let unit = SizeBounds { origins: 1, dests: 1, slots: 1 };
        let atomic = mine_bounded(&t, &g, &cfg, unit, OptLevel::Opt).unwrap();
        assert_eq!(atomic.patterns.levels.len(), 1);
    }

    #[test]
    fn inactive_constraints_change_nothing() {
        let g = grid(3, 3);
        let t = random_table(9, 4, 8);
        let cfg = MiningConfig::new("0.4".parse().unwrap(), "0.5".parse().unwrap());
        let full = mine_all(&t, &g, &cfg, OptLevel::Avfc).unwrap();
        let c = Constraints::everything(9, 4);
        let run = mine_constrained(&t, &g, &cfg, c, OptLevel::Avfc).unwrap();
        assert_eq!(run.patterns, full.patterns);
        assert_eq!(run.minsup, full.minsup);
    }

    #[test]
    fn constrained_output_stays_inside() {
        let g = grid(3, 3);
        let t = random_table(9, 5, 9);
        let cfg = MiningConfig::new("0.5".parse().unwrap(), "0.4".parse().unwrap());
        let c = Constraints::new(vec![0, 1, 3], vec![5, 8], TimeRange::new(1, 3));
        let run = mine_constrained(&t, &g, &cfg, c.clone(), OptLevel::Opt).unwrap();
        for e in run.patterns.iter() {
            let tr = &e.triple;
            assert!(tr.origins().iter().all(|o| c.origins.contains(o)));
            assert!(tr.dests().iter().all(|d| c.dests.contains(d)));
            assert!(c.slots.covers(&tr.time()));
        }
    }

    #[test]
    fn disconnected_constraints_are_rejected() {
        let g = grid(3, 3);
        let t = random_table(9, 4, 1);
        let cfg = MiningConfig::new("0.5".parse().unwrap(), "0.5".parse().unwrap());
        let c = Constraints::new(vec![0, 8], vec![4], TimeRange::new(0, 3));
        assert!(mine_constrained(&t, &g, &cfg, c, OptLevel::Opt).is_err());
    }
}
