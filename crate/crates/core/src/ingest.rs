//! Trip parsing, aggregation into atomic triples, atomic-pattern selection
//! and the trip-duration MAD statistic.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use fixedbitset::FixedBitSet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OdtError, Result};
use crate::model::{Constraints, Fraction, RegionGraph, RegionId, Slot};

pub const MINUTES_PER_DAY: u32 = 24 * 60;

/// Key of an atomic triple: `(origin, destination, slot)`.
pub type AtomicKey = (RegionId, RegionId, Slot);

/// One trip (or a group of passengers travelling together).
#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub origin: RegionId,
    pub destination: RegionId,
    /// Minutes since the start of the period.
    pub start_minute: u32,
    pub flow: u64,
    /// Trip duration in minutes, when the input carries one.
    pub duration: Option<f64>,
}

impl TripRecord {
    pub fn new(origin: RegionId, destination: RegionId, start_minute: u32, flow: u64) -> Self {
        TripRecord {
            origin,
            destination,
            start_minute,
            flow,
            duration: None,
        }
    }
}

/// Per-reason count of rejected input rows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RejectionTally(BTreeMap<&'static str, usize>);

impl RejectionTally {
    pub fn record(&mut self, reason: &'static str) {
        *self.0.entry(reason).or_default() += 1;
    }

    pub fn get(&self, reason: &str) -> usize {
        self.0.get(reason).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Lines of the form `rejected[<reason>]=<count>`.
    pub fn lines(&self) -> impl Iterator<Item = String> + '_ {
        self.0.iter().map(|(r, c)| format!("rejected[{r}]={c}"))
    }
}

/// `floor(minutes / slot_minutes)`.
pub fn map_to_slot(minutes: u32, slot_minutes: u32) -> Slot {
    (minutes / slot_minutes) as Slot
}

/// Parses `HH:MM` or a plain integer number of minutes.
pub fn parse_time(s: &str) -> Option<u32> {
    let s = s.trim();
    match s.split_once(':') {
        Some((h, m)) => {
            let h: u32 = h.parse().ok()?;
            let m: u32 = m.parse().ok()?;
            (m < 60).then_some(h * 60 + m)
        }
        None => s.parse().ok(),
    }
}

#[derive(Debug, Deserialize)]
struct TripRow {
    origin: String,
    destination: String,
    time: String,
    flow: String,
    #[serde(default)]
    duration: Option<String>,
}

/// Reads a headered trips CSV (`origin,destination,time,flow[,duration]`).
///
/// Bad rows are skipped and tallied by reason: `parse`, `self_loop`,
/// `region`, `time`, `flow`.
pub fn read_trips<R: Read>(
    reader: R,
    n_regions: Option<usize>,
    period_minutes: u32,
) -> Result<(Vec<TripRecord>, RejectionTally)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut trips = Vec::new();
    let mut tally = RejectionTally::default();
    for row in rdr.deserialize::<TripRow>() {
        let Ok(row) = row else {
            tally.record("parse");
            continue;
        };
        let parsed = (|| {
            let o: RegionId = row.origin.parse().ok()?;
            let d: RegionId = row.destination.parse().ok()?;
            let minute = parse_time(&row.time)?;
            let flow: u64 = row.flow.parse().ok()?;
            let duration = match row.duration.as_deref().map(str::trim) {
                None | Some("") => None,
                Some(x) => Some(x.parse::<f64>().ok().filter(|v| v.is_finite())?),
            };
            Some((o, d, minute, flow, duration))
        })();
        let Some((o, d, minute, flow, duration)) = parsed else {
            tally.record("parse");
            continue;
        };
        if o == d {
            tally.record("self_loop");
        } else if n_regions.is_some_and(|n| o as usize >= n || d as usize >= n) {
            tally.record("region");
        } else if minute >= period_minutes {
            tally.record("time");
        } else if flow == 0 {
            tally.record("flow");
        } else {
            trips.push(TripRecord {
                origin: o,
                destination: d,
                start_minute: minute,
                flow,
                duration,
            });
        }
    }
    Ok((trips, tally))
}

/// Writes trips as `origin,destination,time,flow` with `HH:MM` times.
pub fn write_trips<W: Write>(writer: W, trips: &[TripRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["origin", "destination", "time", "flow"])?;
    for t in trips {
        w.write_record([
            t.origin.to_string(),
            t.destination.to_string(),
            format!("{:02}:{:02}", t.start_minute / 60, t.start_minute % 60),
            t.flow.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Total flow per atomic triple. Zero-support triples are absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportTable {
    entries: BTreeMap<AtomicKey, u64>,
    n_regions: usize,
    n_slots: usize,
}

impl SupportTable {
    pub fn new(n_regions: usize, n_slots: usize) -> Self {
        SupportTable {
            entries: BTreeMap::new(),
            n_regions,
            n_slots,
        }
    }

    /// Adds `flow` to `(o, d, t)`. Zero flow and `o == d` are ignored.
    pub fn add(&mut self, o: RegionId, d: RegionId, t: Slot, flow: u64) {
        if flow == 0 || o == d {
            return;
        }
        debug_assert!((o as usize) < self.n_regions && (d as usize) < self.n_regions);
        debug_assert!((t as usize) < self.n_slots);
        *self.entries.entry((o, d, t)).or_default() += flow;
    }

    pub fn get(&self, key: &AtomicKey) -> Option<u64> {
        self.entries.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    /// Entries in ascending key order.
    pub fn iter(&self) -> impl Iterator<Item = (AtomicKey, u64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    pub fn total_support(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn merge(mut self, other: SupportTable) -> SupportTable {
        for (k, v) in other.entries {
            *self.entries.entry(k).or_default() += v;
        }
        self
    }

    /// Keeps only triples with origin, destination and slot inside `c`.
    pub fn restrict(&self, c: &Constraints) -> SupportTable {
        let entries = self
            .entries
            .iter()
            .filter(|((o, d, t), _)| {
                c.origins.binary_search(o).is_ok()
                    && c.dests.binary_search(d).is_ok()
                    && c.slots.contains(*t)
            })
            .map(|(&k, &v)| (k, v))
            .collect();
        SupportTable {
            entries,
            n_regions: self.n_regions,
            n_slots: self.n_slots,
        }
    }

    /// Reads `o,d,t,support` rows. Rows must be in range and have `o != d`
    /// and positive support; anything else is an error naming the line.
    pub fn read_csv<R: Read>(reader: R, n_regions: usize, n_slots: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut table = SupportTable::new(n_regions, n_slots);
        for (i, row) in rdr.deserialize::<AggregatedRow>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| OdtError::Parse {
                line,
                msg: e.to_string(),
            })?;
            let err = |msg: &str| OdtError::Parse {
                line,
                msg: msg.to_string(),
            };
            if row.o == row.d {
                return Err(err("origin equals destination"));
            }
            if row.o as usize >= n_regions || row.d as usize >= n_regions {
                return Err(err("region id out of range"));
            }
            if row.t as usize >= n_slots {
                return Err(err("slot out of range"));
            }
            if row.support == 0 {
                return Err(err("support must be positive"));
            }
            table.add(row.o, row.d, row.t, row.support);
        }
        Ok(table)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (&(o, d, t), &support) in &self.entries {
            w.serialize(AggregatedRow { o, d, t, support })?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AggregatedRow {
    o: RegionId,
    d: RegionId,
    t: Slot,
    support: u64,
}

/// Number of slots in a period; the slot length must divide it.
pub fn slots_per_period(slot_minutes: u32, period_minutes: u32) -> Result<usize> {
    if slot_minutes == 0 || period_minutes % slot_minutes != 0 {
        return Err(OdtError::Config(format!(
            "slot length {slot_minutes} does not divide the period length {period_minutes}"
        )));
    }
    Ok((period_minutes / slot_minutes) as usize)
}

/// Sums flow per `(origin, destination, slot)`.
pub fn aggregate(
    trips: &[TripRecord],
    slot_minutes: u32,
    n_regions: usize,
    period_minutes: u32,
) -> Result<SupportTable> {
    let n_slots = slots_per_period(slot_minutes, period_minutes)?;
    let mut table = SupportTable::new(n_regions, n_slots);
    for t in trips {
        table.add(t.origin, t.destination, map_to_slot(t.start_minute, slot_minutes), t.flow);
    }
    Ok(table)
}

/// Same result as [`aggregate`], built from per-shard partial tables.
pub fn aggregate_sharded(
    trips: &[TripRecord],
    slot_minutes: u32,
    n_regions: usize,
    period_minutes: u32,
    shard_len: usize,
) -> Result<SupportTable> {
    let n_slots = slots_per_period(slot_minutes, period_minutes)?;
    Ok(trips
        .par_chunks(shard_len.max(1))
        .map(|chunk| {
            let mut t = SupportTable::new(n_regions, n_slots);
            for r in chunk {
                t.add(r.origin, r.destination, map_to_slot(r.start_minute, slot_minutes), r.flow);
            }
            t
        })
        .reduce(|| SupportTable::new(n_regions, n_slots), SupportTable::merge))
}

/// Atomic triples whose support ranks in the top `s_a` fraction, plus the
/// per-region destination and source sets derived from them.
#[derive(Debug, Clone)]
pub struct AtomicPatternSet {
    n_regions: usize,
    n_slots: usize,
    members: Vec<AtomicKey>,
    cube: FixedBitSet,
    dests: Vec<FixedBitSet>,
    srcs: Vec<FixedBitSet>,
    minsup: u64,
    n_atomic_triples: usize,
}

impl AtomicPatternSet {
    /// Builds the set directly from member keys.
    pub fn from_members<I>(n_regions: usize, n_slots: usize, members: I) -> Self
    where
        I: IntoIterator<Item = AtomicKey>,
    {
        let mut members: Vec<AtomicKey> = members.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        let mut cube = FixedBitSet::with_capacity(n_regions * n_regions * n_slots);
        let mut dests = vec![FixedBitSet::with_capacity(n_regions); n_regions];
        let mut srcs = vec![FixedBitSet::with_capacity(n_regions); n_regions];
        for &(o, d, t) in &members {
            cube.insert((o as usize * n_regions + d as usize) * n_slots + t as usize);
            dests[o as usize].insert(d as usize);
            srcs[d as usize].insert(o as usize);
        }
        AtomicPatternSet {
            n_regions,
            n_slots,
            members,
            cube,
            dests,
            srcs,
            minsup: 0,
            n_atomic_triples: 0,
        }
    }

    #[inline]
    pub fn contains(&self, o: RegionId, d: RegionId, t: Slot) -> bool {
        self.cube
            .contains((o as usize * self.n_regions + d as usize) * self.n_slots + t as usize)
    }

    /// Members in ascending key order.
    pub fn members(&self) -> &[AtomicKey] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    /// Support threshold realized by the top-fraction selection.
    pub fn minsup(&self) -> u64 {
        self.minsup
    }

    /// Number of non-zero atomic triples the selection ranked.
    pub fn n_atomic_triples(&self) -> usize {
        self.n_atomic_triples
    }

    /// Regions `d` such that some `(r, d, t)` is a member.
    pub fn dests(&self, r: RegionId) -> &FixedBitSet {
        &self.dests[r as usize]
    }

    /// Regions `o` such that some `(o, r, t)` is a member.
    pub fn srcs(&self, r: RegionId) -> &FixedBitSet {
        &self.srcs[r as usize]
    }
}

/// Selects atomic patterns: `minsup` is the support of the
/// `ceil(s_a * |table|)`-th largest entry, and every entry with support at
/// least `minsup` is a member (ties included).
pub fn select_atomic_patterns(table: &SupportTable, s_a: Fraction) -> Result<AtomicPatternSet> {
    if table.is_empty() {
        return Err(OdtError::NoAtomicTriples);
    }
    if s_a.is_zero() || s_a.num() > s_a.den() {
        return Err(OdtError::Config(format!("s_a must be in (0,1], got {s_a}")));
    }
    let mut supports: Vec<u64> = table.entries.values().copied().collect();
    supports.sort_unstable_by(|a, b| b.cmp(a));
    let rank = s_a.ceil_mul(supports.len() as u64).max(1) as usize;
    let minsup = supports[rank - 1];
    let mut aps = AtomicPatternSet::from_members(
        table.n_regions,
        table.n_slots,
        table.iter().filter(|&(_, s)| s >= minsup).map(|(k, _)| k),
    );
    aps.minsup = minsup;
    aps.n_atomic_triples = table.len();
    Ok(aps)
}

/// Mean absolute deviation `sum |x - mean| / n`; `None` for no samples.
pub fn duration_mad(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    Some(samples.iter().map(|x| (x - mean).abs()).sum::<f64>() / n)
}

/// Duration samples grouped by atomic triple; trips without a duration are skipped.
pub fn durations_by_key(trips: &[TripRecord], slot_minutes: u32) -> BTreeMap<AtomicKey, Vec<f64>> {
    let mut out: BTreeMap<AtomicKey, Vec<f64>> = BTreeMap::new();
    for t in trips {
        if let Some(d) = t.duration {
            out.entry((t.origin, t.destination, map_to_slot(t.start_minute, slot_minutes)))
                .or_default()
                .push(d);
        }
    }
    out
}

/// Per-key MAD; keys with no samples are skipped.
pub fn mad_by_key(samples: &BTreeMap<AtomicKey, Vec<f64>>) -> BTreeMap<AtomicKey, f64> {
    samples
        .iter()
        .filter_map(|(&k, v)| duration_mad(v).map(|m| (k, m)))
        .collect()
}

/// Plain mean of per-key MAD values.
pub fn mean_mad(per_key: &BTreeMap<AtomicKey, f64>) -> Option<f64> {
    if per_key.is_empty() {
        return None;
    }
    Some(per_key.values().sum::<f64>() / per_key.len() as f64)
}

/// Parses whitespace-separated `u v` edge lines.
///
/// Blank lines and `#` comments are ignored, except a `# regions=N`
/// directive which fixes the region count. Without it (and without
/// `n_regions`), the count is the largest id plus one.
pub fn load_region_graph<R: BufRead>(reader: R, n_regions: Option<usize>) -> Result<RegionGraph> {
    let mut edges = Vec::new();
    let mut lines = Vec::new();
    let mut declared = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        if let Some(c) = s.strip_prefix('#') {
            if let Some(n) = c.trim().strip_prefix("regions=") {
                declared = Some(n.trim().parse::<usize>().map_err(|_| OdtError::Parse {
                    line: line_no,
                    msg: format!("bad regions directive '{s}'"),
                })?);
            }
            continue;
        }
        let mut it = s.split_whitespace();
        let parse = |x: Option<&str>| x.and_then(|x| x.parse::<RegionId>().ok());
        match (parse(it.next()), parse(it.next()), it.next()) {
            (Some(u), Some(v), None) => {
                edges.push((u, v));
                lines.push(line_no);
            }
            _ => {
                return Err(OdtError::Parse {
                    line: line_no,
                    msg: format!("expected 'u v', got '{s}'"),
                })
            }
        }
    }
    let n = n_regions.or(declared).unwrap_or_else(|| {
        edges
            .iter()
            .map(|&(u, v)| u.max(v) as usize + 1)
            .max()
            .unwrap_or(0)
    });
    for (&(u, v), &line) in edges.iter().zip(&lines) {
        if u == v {
            return Err(OdtError::Parse {
                line,
                msg: format!("self-loop on region {u}"),
            });
        }
        if u as usize >= n || v as usize >= n {
            return Err(OdtError::Parse {
                line,
                msg: format!("region id out of range 0..{n} in edge ({u},{v})"),
            });
        }
    }
    RegionGraph::from_edges(n, edges)
}

pub fn write_region_graph<W: Write>(mut w: W, graph: &RegionGraph) -> Result<()> {
    writeln!(w, "# regions={}", graph.n_regions())?;
    for (u, v) in graph.edges() {
        writeln!(w, "{u} {v}")?;
    }
    Ok(())
}
