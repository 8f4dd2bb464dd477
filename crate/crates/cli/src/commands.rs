use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use odt_core::ingest::{
    durations_by_key, load_region_graph, mad_by_key, mean_mad, read_trips, slots_per_period,
    write_region_graph, write_trips,
};
use odt_core::output::{write_pattern_set, write_patterns, RunReport};
use odt_core::synth::{generate, InstanceFile, SyntheticSpec};
use odt_core::{
    aggregate, mine_all, mine_topk, Constraints, EvaluatedTriple, Fraction, MiningConfig,
    MiningRun, OdtError, OptLevel, Oracle, OracleGuard, RankAlgo, RegionGraph, RegionId,
    SizeBounds, Slot, SupportTable, TimeRange,
};

use crate::args::{
    AggregateArgs, Input, MineArgs, OracleArgs, Restrictions, SynthArgs,
};

#[derive(Debug)]
pub enum CliError {
    Core(OdtError),
    /// Flags that cannot be used together.
    Conflict(String),
    File(String, std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(OdtError::GuardExceeded(_)) => 4,
            CliError::Conflict(_) => 3,
            CliError::Core(_) | CliError::File(..) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Conflict(m) => write!(f, "conflicting flags: {m}"),
            CliError::File(p, e) => write!(f, "{p}: {e}"),
        }
    }
}

impl From<OdtError> for CliError {
    fn from(e: OdtError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::File(path.display().to_string(), e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::File(path.display().to_string(), e))
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Core(OdtError::Config("--threads must be positive".into()))),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| OdtError::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

pub fn aggregate_cmd(a: &AggregateArgs) -> CliResult<()> {
    let graph = load_region_graph(open(&a.graph)?, None)?;
    let (trips, tally) = read_trips(open(&a.trips)?, Some(graph.n_regions()), a.timeline.period_minutes)?;
    for line in tally.lines() {
        eprintln!("{line}");
    }
    let table = aggregate(&trips, a.timeline.slot_minutes, graph.n_regions(), a.timeline.period_minutes)?;
    if table.is_empty() {
        return Err(OdtError::NoAtomicTriples.into());
    }
    let mut w = create(&a.out)?;
    table.write_csv(&mut w)?;
    w.flush()?;

    if let Some(path) = &a.mad_out {
        let per_key = mad_by_key(&durations_by_key(&trips, a.timeline.slot_minutes));
        let mut w = create(path)?;
        writeln!(w, "o,d,t,mad")?;
        for ((o, d, t), m) in &per_key {
            writeln!(w, "{o},{d},{t},{m}")?;
        }
        w.flush()?;
        if let Some(mean) = mean_mad(&per_key) {
            eprintln!("mean_mad={mean}");
        }
    }
    Ok(())
}

pub fn load_input(i: &Input) -> CliResult<(SupportTable, RegionGraph)> {
    if let Some(p) = &i.instance {
        let f = InstanceFile::read(open(p)?)?;
        return Ok((f.table()?, f.graph()?));
    }
    let (Some(sup), Some(gp)) = (&i.supports, &i.graph) else {
        return Err(CliError::Conflict("need --instance or both --supports and --graph".into()));
    };
    let graph = load_region_graph(open(gp)?, None)?;
    let n_slots = slots_per_period(i.timeline.slot_minutes, i.timeline.period_minutes)?;
    let table = SupportTable::read_csv(open(sup)?, graph.n_regions(), n_slots)?;
    Ok((table, graph))
}

fn read_region_list(path: &Path) -> CliResult<Vec<RegionId>> {
    let mut s = String::new();
    open(path)?.read_to_string(&mut s)?;
    let mut out = Vec::new();
    for (i, line) in s.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            out.push(tok.parse().map_err(|_| OdtError::Parse {
                line: i + 1,
                msg: format!("bad region id '{tok}' in {}", path.display()),
            })?);
        }
    }
    Ok(out)
}

fn parse_slot_window(s: &str) -> CliResult<TimeRange> {
    let bad = || CliError::Core(OdtError::Config(format!("bad slot window '{s}', expected start:end")));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let a: Slot = a.trim().parse().map_err(|_| bad())?;
    let b: Slot = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok(TimeRange::new(a, b))
}

/// `None` when no constraint flag is set; missing parts admit everything.
pub fn constraints(r: &Restrictions, n_regions: usize, n_slots: usize) -> CliResult<Option<Constraints>> {
    if r.origins.is_none() && r.dests.is_none() && r.slots.is_none() {
        return Ok(None);
    }
    let all = Constraints::everything(n_regions, n_slots);
    let origins = match &r.origins {
        Some(p) => read_region_list(p)?,
        None => all.origins.clone(),
    };
    let dests = match &r.dests {
        Some(p) => read_region_list(p)?,
        None => all.dests.clone(),
    };
    let slots = match &r.slots {
        Some(s) => parse_slot_window(s)?,
        None => all.slots,
    };
    Ok(Some(Constraints::new(origins, dests, slots)))
}

/// One mining configuration, threshold or ranked.
#[derive(Debug, Clone)]
pub struct Settings {
    pub sa: Option<Fraction>,
    pub sr: Option<Fraction>,
    pub opt: Option<OptLevel>,
    pub bounds: [Option<usize>; 3],
    pub k: Option<usize>,
    pub max_level: Option<usize>,
    pub algo: Option<RankAlgo>,
    pub cache_limit: Option<usize>,
}

impl Settings {
    pub fn is_ranked(&self) -> bool {
        self.k.is_some()
    }

    pub fn algorithm(&self) -> String {
        if self.is_ranked() {
            self.algo.unwrap_or(RankAlgo::OptRank).to_string()
        } else {
            self.opt.unwrap_or(OptLevel::Opt).to_string()
        }
    }

    fn config(&self, constraints: Option<Constraints>, n_regions: usize, n_slots: usize) -> CliResult<MiningConfig> {
        let sa = self.sa.ok_or_else(|| CliError::Conflict("--sa is required".into()))?;
        let mut cfg = match (self.k, self.sr) {
            (Some(_), Some(_)) => return Err(CliError::Conflict("--topk excludes --sr".into())),
            (Some(_), None) if self.opt.is_some() => {
                return Err(CliError::Conflict("--topk excludes --opt; use --rank-algo".into()))
            }
            (Some(k), None) => {
                let maxl = self
                    .max_level
                    .ok_or_else(|| CliError::Conflict("--topk needs --max-level".into()))?;
                MiningConfig::ranked(sa, k, maxl)
            }
            (None, _) if self.algo.is_some() => {
                return Err(CliError::Conflict("--rank-algo needs --topk".into()))
            }
            (None, Some(sr)) => {
                let mut c = MiningConfig::new(sa, sr);
                c.max_level = self.max_level;
                c
            }
            (None, None) => return Err(CliError::Conflict("need --sr or --topk".into())),
        };
        if self.bounds.iter().any(Option::is_some) {
            let [o, d, t] = self.bounds;
            cfg.bounds = Some(SizeBounds {
                origins: o.unwrap_or(n_regions),
                dests: d.unwrap_or(n_regions),
                slots: t.unwrap_or(n_slots),
            });
        }
        cfg.constraints = constraints;
        cfg.cache_limit = self.cache_limit;
        Ok(cfg)
    }

    pub fn run(
        &self,
        table: &SupportTable,
        graph: &RegionGraph,
        constraints: Option<Constraints>,
    ) -> CliResult<(MiningRun, MiningConfig)> {
        let cfg = self.config(constraints, graph.n_regions(), table.n_slots())?;
        let run = if self.is_ranked() {
            mine_topk(table, graph, &cfg, self.algo.unwrap_or(RankAlgo::OptRank))?
        } else {
            mine_all(table, graph, &cfg, self.opt.unwrap_or(OptLevel::Opt))?
        };
        Ok((run, cfg))
    }
}

pub fn mine_cmd(a: &MineArgs) -> CliResult<()> {
    let (table, graph) = load_input(&a.input)?;
    let settings = Settings {
        sa: Some(a.sa),
        sr: a.sr,
        opt: a.opt,
        bounds: [a.restrict.bound_o, a.restrict.bound_d, a.restrict.bound_t],
        k: a.topk,
        max_level: a.max_level,
        algo: a.rank_algo,
        cache_limit: a.cache_limit,
    };
    let cons = constraints(&a.restrict, graph.n_regions(), table.n_slots())?;
    let (run, threads) = with_threads(a.threads, || {
        settings
            .run(&table, &graph, cons)
            .map(|(run, _)| (run, rayon::current_num_threads()))
    })??;

    let mut w = create(&a.out)?;
    if settings.is_ranked() {
        // Level 3 is the full atomic pattern set, not a ranked result.
        write_patterns(&mut w, run.patterns.levels.iter().skip(1).flat_map(|l| &l.patterns))?;
    } else {
        write_pattern_set(&mut w, &run.patterns)?;
    }
    w.flush()?;

    let mut report = RunReport::new(settings.algorithm(), a.sa.to_string(), &run, threads);
    report.s_r = a.sr.map(|s| s.to_string());
    report.k = a.topk;
    let mut w = create(&a.report)?;
    report.write(&mut w)?;
    writeln!(w)?;
    w.flush()?;
    eprintln!(
        "{} patterns, minsup {}, {:.1} ms",
        report.total_patterns, report.minsup, report.mining_ms
    );
    Ok(())
}

pub fn oracle_cmd(a: &OracleArgs) -> CliResult<()> {
    let f = InstanceFile::read(open(&a.instance)?)?;
    let graph = f.graph()?;
    let table = f.table()?;
    let guard = OracleGuard::default();
    let max_level = a.max_level.unwrap_or(guard.max_level);
    let oracle = Oracle::with_guard(&graph, table.n_slots(), max_level, &guard)?;
    let cfg = MiningConfig::new(a.sa, a.sr).with_max_level(max_level);
    let res = oracle.mine(&table, &cfg)?;
    let mut w = create(&a.out)?;
    for entries in res.levels.values() {
        let found: Vec<EvaluatedTriple> = entries
            .iter()
            .filter(|(_, e)| e.is_pattern)
            .map(|(k, e)| EvaluatedTriple::new(k.to_triple(), e.cnt))
            .collect();
        write_patterns(&mut w, &found)?;
    }
    w.flush()?;
    Ok(())
}

pub fn synth_cmd(a: &SynthArgs) -> CliResult<()> {
    let mut spec = SyntheticSpec::new(a.kind, a.regions, a.slots, a.seed);
    spec.slot_minutes = a.slot_minutes;
    if let Some(n) = a.n_trips {
        spec.n_trips = n;
    }
    spec.hot_spots = a.hot_spots;
    spec.intensity = a.intensity;
    spec.hot_regions = a.hot_regions;
    spec.hot_slots = a.hot_slots;
    spec.max_degree = a.max_degree;
    let inst = generate(&spec)?;

    let mut w = create(&a.out_trips)?;
    write_trips(&mut w, &inst.trips)?;
    w.flush()?;
    let mut w = create(&a.out_graph)?;
    write_region_graph(&mut w, &inst.graph)?;
    w.flush()?;
    if let Some(p) = &a.out_instance {
        let mut w = create(p)?;
        InstanceFile::new(&inst.graph, &inst.support_table()?).write(&mut w)?;
        w.flush()?;
    }
    if let Some(p) = &a.out_truth {
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, &inst.hot_spots).map_err(OdtError::from)?;
        writeln!(w)?;
        w.flush()?;
    }
    eprintln!(
        "{} trips, period {} minutes",
        inst.trips.len(),
        inst.period_minutes()
    );
    Ok(())
}
