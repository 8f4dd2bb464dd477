//! Brute-force reference miner for small instances.
//!
//! Enumerates every valid triple up to a level cap, counts atomic patterns
//! by direct membership tests and applies the pattern definition literally:
//! the ratio test plus at least one minimal specialization that is itself a
//! pattern. Only the model types are shared with the optimized miner.

use std::collections::{BTreeMap, HashSet};

use crate::error::{OdtError, Result};
use crate::ingest::SupportTable;
use crate::model::{
    CanonicalKey, Fraction, MiningConfig, OdtTriple, RegionGraph, RegionId, Slot, TimeRange,
};

/// Largest instance the oracle accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleGuard {
    pub max_regions: usize,
    pub max_slots: usize,
    pub max_level: usize,
}

impl Default for OracleGuard {
    fn default() -> Self {
        OracleGuard {
            max_regions: 14,
            max_slots: 10,
            max_level: 10,
        }
    }
}

impl OracleGuard {
    pub fn check(&self, n_regions: usize, n_slots: usize, max_level: usize) -> Result<()> {
        let mut over = Vec::new();
        if n_regions > self.max_regions {
            over.push(format!("regions {n_regions} > {}", self.max_regions));
        }
        if n_slots > self.max_slots {
            over.push(format!("slots {n_slots} > {}", self.max_slots));
        }
        if max_level > self.max_level {
            over.push(format!("max level {max_level} > {}", self.max_level));
        }
        if over.is_empty() {
            Ok(())
        } else {
            Err(OdtError::GuardExceeded(over.join(", ")))
        }
    }
}

/// Oracle verdict for one triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleEntry {
    pub cnt: u64,
    pub card: u64,
    pub is_pattern: bool,
}

/// Every valid triple up to the level cap, by level and canonical key.
#[derive(Debug, Clone, Default)]
pub struct OracleResult {
    pub levels: BTreeMap<usize, BTreeMap<CanonicalKey, OracleEntry>>,
    pub minsup: u64,
}

impl OracleResult {
    /// Sorted pattern keys per level; levels without patterns are omitted.
    pub fn patterns_by_level(&self) -> BTreeMap<usize, Vec<CanonicalKey>> {
        self.levels
            .iter()
            .filter_map(|(&l, m)| {
                let keys: Vec<_> = m.iter().filter(|(_, e)| e.is_pattern).map(|(k, _)| k.clone()).collect();
                (!keys.is_empty()).then_some((l, keys))
            })
            .collect()
    }

    pub fn get(&self, t: &OdtTriple) -> Option<&OracleEntry> {
        self.levels.get(&t.level())?.get(&t.canonical_key())
    }

    pub fn n_triples(&self) -> usize {
        self.levels.values().map(|m| m.len()).sum()
    }
}

fn mask_of(ids: &[RegionId]) -> u32 {
    ids.iter().fold(0, |m, &r| m | 1 << r)
}

fn ids_of(mask: u32) -> Vec<RegionId> {
    (0..32).filter(|&r| mask & (1 << r) != 0).collect()
}

/// Connectivity of a region bitmask by flood fill over `adj` masks.
fn mask_connected(mask: u32, adj: &[u32]) -> bool {
    if mask == 0 {
        return false;
    }
    let mut reached = mask & mask.wrapping_neg();
    loop {
        let mut grown = reached;
        for r in ids_of(reached) {
            grown |= adj[r as usize] & mask;
        }
        if grown == reached {
            return reached == mask;
        }
        reached = grown;
    }
}

fn adjacency_masks(g: &RegionGraph) -> Vec<u32> {
    (0..g.n_regions() as RegionId)
        .map(|r| mask_of(g.neighbors(r)))
        .collect()
}

/// Every valid triple with level at most `max_level`, ordered by level and
/// then canonical key.
pub fn enumerate_valid_triples(
    g: &RegionGraph,
    n_slots: usize,
    max_level: usize,
    guard: &OracleGuard,
) -> Result<Vec<OdtTriple>> {
    guard.check(g.n_regions(), n_slots, max_level)?;
    let adj = adjacency_masks(g);
    let n = g.n_regions();
    let mut by_size: Vec<Vec<u32>> = vec![Vec::new(); n + 1];
    for mask in 1u32..(1 << n) {
        let size = mask.count_ones() as usize;
        if size + 2 <= max_level && mask_connected(mask, &adj) {
            by_size[size].push(mask);
        }
    }
    let mut out = Vec::new();
    for level in 3..=max_level {
        let mut lvl = Vec::new();
        for so in 1..=n {
            for sd in 1..=n {
                if so + sd >= level {
                    continue;
                }
                let st = level - so - sd;
                if st > n_slots {
                    continue;
                }
                for &om in &by_size[so] {
                    for &dm in &by_size[sd] {
                        if om & dm != 0 {
                            continue;
                        }
                        for start in 0..=(n_slots - st) {
                            lvl.push(OdtTriple::new(
                                ids_of(om),
                                ids_of(dm),
                                TimeRange::new(start as Slot, (start + st - 1) as Slot),
                            ));
                        }
                    }
                }
            }
        }
        lvl.sort_by_cached_key(|t| t.canonical_key());
        out.extend(lvl);
    }
    Ok(out)
}

/// Minimal specializations of `t`: one region removed from a side that keeps
/// at least one region and stays connected, or one slot dropped from either
/// end of a range longer than one.
pub fn minimal_specializations(t: &OdtTriple, g: &RegionGraph) -> Vec<OdtTriple> {
    specializations(t, &adjacency_masks(g))
}

fn specializations(t: &OdtTriple, adj: &[u32]) -> Vec<OdtTriple> {
    let mut out = Vec::new();
    let om = mask_of(t.origins());
    let dm = mask_of(t.dests());
    for r in t.origins() {
        let rest = om & !(1 << r);
        if mask_connected(rest, adj) {
            out.push(OdtTriple::new(ids_of(rest), t.dests().to_vec(), t.time()));
        }
    }
    for r in t.dests() {
        let rest = dm & !(1 << r);
        if mask_connected(rest, adj) {
            out.push(OdtTriple::new(t.origins().to_vec(), ids_of(rest), t.time()));
        }
    }
    let tr = t.time();
    if tr.end > tr.start {
        out.push(t.with_time(TimeRange::new(tr.start + 1, tr.end)));
        out.push(t.with_time(TimeRange::new(tr.start, tr.end - 1)));
    }
    out
}

/// Reusable oracle over one graph and period: the valid triples are
/// enumerated once and then judged under any thresholds.
pub struct Oracle<'g> {
    graph: &'g RegionGraph,
    adj: Vec<u32>,
    n_slots: usize,
    max_level: usize,
    triples: Vec<OdtTriple>,
}

impl<'g> Oracle<'g> {
    pub fn new(graph: &'g RegionGraph, n_slots: usize, max_level: usize) -> Result<Self> {
        Self::with_guard(graph, n_slots, max_level, &OracleGuard::default())
    }

    pub fn with_guard(
        graph: &'g RegionGraph,
        n_slots: usize,
        max_level: usize,
        guard: &OracleGuard,
    ) -> Result<Self> {
        let triples = enumerate_valid_triples(graph, n_slots, max_level, guard)?;
        Ok(Oracle {
            graph,
            adj: adjacency_masks(graph),
            n_slots,
            max_level,
            triples,
        })
    }

    pub fn n_triples(&self) -> usize {
        self.triples.len()
    }

    /// Judges every enumerated triple. Size bounds and constraints in `cfg`
    /// are honored by skipping triples outside them; with constraints the
    /// atomic patterns are selected among the atomic triples inside.
    pub fn mine(&self, table: &SupportTable, cfg: &MiningConfig) -> Result<OracleResult> {
        let s_r = cfg
            .s_r
            .ok_or_else(|| OdtError::Config("oracle needs s_r".into()))?;
        if table.n_slots() != self.n_slots || table.n_regions() != self.graph.n_regions() {
            return Err(OdtError::Config("table does not match the oracle instance".into()));
        }
        let max_level = cfg.max_level.map_or(self.max_level, |l| l.min(self.max_level));
        let inside = |t: &OdtTriple| {
            let b_ok = cfg.bounds.is_none_or(|b| {
                t.origins().len() <= b.origins && t.dests().len() <= b.dests && t.time().len() <= b.slots
            });
            let c_ok = cfg.constraints.as_ref().is_none_or(|c| {
                t.origins().iter().all(|o| c.origins.contains(o))
                    && t.dests().iter().all(|d| c.dests.contains(d))
                    && c.slots.start <= t.time().start
                    && t.time().end <= c.slots.end
            });
            b_ok && c_ok
        };

        let supports: Vec<((RegionId, RegionId, Slot), u64)> = table
            .iter()
            .filter(|&((o, d, s), v)| v > 0 && inside(&OdtTriple::atomic(o, d, s)))
            .collect();
        let (aps, minsup) = atomic_patterns(&supports, cfg.s_a)?;

        let mut result = OracleResult {
            minsup,
            ..Default::default()
        };
        let mut prev: HashSet<OdtTriple> = HashSet::new();
        let mut cur: HashSet<OdtTriple> = HashSet::new();
        let mut level = 3;
        for t in &self.triples {
            if t.level() > max_level {
                break;
            }
            if t.level() != level {
                prev = std::mem::take(&mut cur);
                level = t.level();
            }
            if !inside(t) {
                continue;
            }
            let mut cnt = 0u64;
            for &o in t.origins() {
                for &d in t.dests() {
                    for s in t.time().slots() {
                        cnt += aps.contains(&(o, d, s)) as u64;
                    }
                }
            }
            let card = (t.origins().len() * t.dests().len() * t.time().len()) as u64;
            let is_pattern = if level == 3 {
                cnt == 1
            } else {
                let ratio_ok =
                    cnt as u128 * s_r.den() as u128 >= s_r.num() as u128 * card as u128;
                ratio_ok
                    && specializations(t, &self.adj)
                        .iter()
                        .any(|s| prev.contains(s))
            };
            if is_pattern {
                cur.insert(t.clone());
            }
            result.levels.entry(level).or_default().insert(
                t.canonical_key(),
                OracleEntry {
                    cnt,
                    card,
                    is_pattern,
                },
            );
        }
        Ok(result)
    }
}

/// Atomic patterns: supports at least the value ranked `ceil(s_a * n)`
/// among the `n` non-zero supports.
fn atomic_patterns(
    supports: &[((RegionId, RegionId, Slot), u64)],
    s_a: Fraction,
) -> Result<(HashSet<(RegionId, RegionId, Slot)>, u64)> {
    if supports.is_empty() {
        return Err(OdtError::NoAtomicTriples);
    }
    let mut values: Vec<u64> = supports.iter().map(|&(_, v)| v).collect();
    values.sort_unstable_by(|a, b| b.cmp(a));
    let n = values.len() as u128;
    let rank = (s_a.num() as u128 * n).div_ceil(s_a.den() as u128).max(1) as usize;
    let minsup = values[rank.min(values.len()) - 1];
    let set = supports
        .iter()
        .filter(|&&(_, v)| v >= minsup)
        .map(|&(k, _)| k)
        .collect();
    Ok((set, minsup))
}

/// One-shot oracle run; the level cap is `cfg.max_level` or the guard's.
pub fn oracle_mine(table: &SupportTable, g: &RegionGraph, cfg: &MiningConfig) -> Result<OracleResult> {
    let guard = OracleGuard::default();
    let max_level = cfg.max_level.unwrap_or(guard.max_level);
    Oracle::with_guard(g, table.n_slots(), max_level, &guard)?.mine(table, cfg)
}

/// Triples counted per level by the enumeration, for reports.
pub fn level_histogram(triples: &[OdtTriple]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for t in triples {
        *h.entry(t.level()).or_default() += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enumerate::minimal_generalizations;

    fn path(n: usize) -> RegionGraph {
        RegionGraph::from_edges(n, (0..n as u32 - 1).map(|i| (i, i + 1))).unwrap()
    }

    #[test]
    fn two_region_atomic_triples() {
        let g = path(2);
        let ts = enumerate_valid_triples(&g, 1, 3, &OracleGuard::default()).unwrap();
        assert_eq!(ts, vec![OdtTriple::atomic(0, 1, 0), OdtTriple::atomic(1, 0, 0)]);
    }

    #[test]
    fn path_connectivity_rule() {
        let g = path(3);
        let ts = enumerate_valid_triples(&g, 1, 4, &OracleGuard::default()).unwrap();
        let has = |o: &[u32], d: &[u32]| ts.contains(&OdtTriple::new(o.to_vec(), d.to_vec(), TimeRange::single(0)));
        assert!(has(&[0, 1], &[2]));
        assert!(has(&[0], &[2]));
        assert!(!has(&[0, 2], &[1]));
    }

    #[test]
    fn guard_refuses_large_instances() {
        let g = path(15);
        let err = enumerate_valid_triples(&g, 4, 5, &OracleGuard::default()).unwrap_err();
        assert!(matches!(err, OdtError::GuardExceeded(_)));
        assert!(Oracle::new(&path(4), 11, 5).is_err());
        assert!(Oracle::new(&path(4), 4, 11).is_err());
    }

    /// Every pair of region subsets and every range, filtered by the model's
    /// own validity check.
    fn subset_filter_count(g: &RegionGraph, m: usize, max_level: usize) -> usize {
        let n = g.n_regions();
        let mut count = 0;
        for om in 1u32..(1 << n) {
            for dm in 1u32..(1 << n) {
                for s in 0..m {
                    for e in s..m {
                        let t = OdtTriple::new(ids_of(om), ids_of(dm), TimeRange::new(s as u16, e as u16));
                        if t.level() <= max_level && t.validate(g, m).is_ok() {
                            count += 1;
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn enumeration_matches_subset_filter() {
        let star = RegionGraph::from_edges(5, [(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        let cycle = RegionGraph::from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]).unwrap();
        for g in [path(5), star, cycle] {
            for (m, l) in [(1, 5), (3, 6), (2, 9)] {
                let ts = enumerate_valid_triples(&g, m, l, &OracleGuard::default()).unwrap();
                assert_eq!(ts.len(), subset_filter_count(&g, m, l));
                let uniq: HashSet<_> = ts.iter().collect();
                assert_eq!(uniq.len(), ts.len());
            }
        }
    }

    #[test]
    fn specialization_is_inverse_of_generalization() {
        let g = RegionGraph::from_edges(5, [(0, 1), (1, 2), (2, 3), (1, 4)]).unwrap();
        let m = 3;
        let ts = enumerate_valid_triples(&g, m, 7, &OracleGuard::default()).unwrap();
        for t in &ts {
            for s in minimal_specializations(t, &g) {
                assert!(s.validate(&g, m).is_ok());
                let gens = minimal_generalizations(&s, &g, m);
                assert!(gens.iter().any(|(c, _)| c == t), "{t} from {s}");
            }
            if t.level() < 7 {
                for (gen, _) in minimal_generalizations(t, &g, m) {
                    assert!(minimal_specializations(&gen, &g).contains(t), "{gen} to {t}");
                }
            }
        }
    }

    #[test]
    fn cut_vertex_removal_is_not_a_specialization() {
        let g = path(4);
        let t = OdtTriple::new(vec![0, 1, 2], vec![3], TimeRange::single(0));
        let specs = minimal_specializations(&t, &g);
        assert!(!specs.iter().any(|s| s.origins() == [0, 2]));
        assert_eq!(specs.len(), 2);
    }

    fn example() -> (SupportTable, RegionGraph) {
        let g = RegionGraph::from_edges(4, [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]).unwrap();
        let mut t = SupportTable::new(4, 20);
        t.add(0, 3, 18, 3);
        t.add(1, 3, 18, 3);
        t.add(2, 0, 17, 2);
        t.add(3, 1, 19, 1);
        t.add(0, 2, 19, 1);
        (t, g)
    }

    #[test]
    fn running_example_pattern() {
        let (t, g) = example();
        // A 20-slot period is over the default guard.
        let guard = OracleGuard {
            max_slots: 20,
            ..OracleGuard::default()
        };
        let cfg = MiningConfig::new("0.5".parse().unwrap(), "0.6".parse().unwrap()).with_max_level(4);
        let res = Oracle::with_guard(&g, 20, 4, &guard).unwrap().mine(&t, &cfg).unwrap();
        assert_eq!(res.minsup, 2);
        let ab_d = OdtTriple::new(vec![0, 1], vec![3], TimeRange::single(18));
        let e = res.get(&ab_d).unwrap();
        assert_eq!((e.cnt, e.card, e.is_pattern), (2, 2, true));
    }

    #[test]
    fn strict_ratio_leaves_only_atomic_level() {
        let (t, g) = example();
        let guard = OracleGuard {
            max_slots: 20,
            ..OracleGuard::default()
        };
        let cfg = MiningConfig::new("1".parse().unwrap(), "1.01".parse().unwrap()).with_max_level(5);
        let res = Oracle::with_guard(&g, 20, 5, &guard).unwrap().mine(&t, &cfg).unwrap();
        let pats = res.patterns_by_level();
        assert_eq!(pats.keys().copied().collect::<Vec<_>>(), vec![3]);
    }
}
