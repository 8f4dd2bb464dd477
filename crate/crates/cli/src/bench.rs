//! Parameter sweeps: one CSV row per configuration, failures included.

use odt_core::{Counters, MiningRun, OdtError, RegionGraph, SupportTable};

use crate::args::BenchArgs;
use crate::commands::{constraints, load_input, with_threads, CliError, CliResult, Settings};

const SWEEPABLE: [&str; 9] = [
    "sa", "sr", "opt", "bound-o", "bound-d", "bound-t", "k", "max-level", "rank-algo",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub name: String,
    pub values: Vec<String>,
}

pub fn parse_sweep(s: &str) -> CliResult<Sweep> {
    let (name, vals) = s
        .split_once('=')
        .ok_or_else(|| CliError::Conflict(format!("sweep '{s}' is not name=v1,v2,...")))?;
    let name = name.trim().replace('_', "-");
    if !SWEEPABLE.contains(&name.as_str()) {
        return Err(CliError::Conflict(format!(
            "cannot sweep '{name}'; choose from {}",
            SWEEPABLE.join(", ")
        )));
    }
    let values: Vec<String> = vals
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(CliError::Conflict(format!("sweep '{name}' has no values")));
    }
    Ok(Sweep { name, values })
}

fn apply(s: &mut Settings, name: &str, v: &str) -> CliResult<()> {
    fn p<T: std::str::FromStr>(v: &str) -> CliResult<T> {
        v.parse()
            .map_err(|_| CliError::Core(OdtError::Config(format!("bad sweep value '{v}'"))))
    }
    match name {
        "sa" => s.sa = Some(p(v)?),
        "sr" => s.sr = Some(p(v)?),
        "opt" => s.opt = Some(p(v)?),
        "bound-o" => s.bounds[0] = Some(p(v)?),
        "bound-d" => s.bounds[1] = Some(p(v)?),
        "bound-t" => s.bounds[2] = Some(p(v)?),
        "k" => s.k = Some(p(v)?),
        "max-level" => s.max_level = Some(p(v)?),
        "rank-algo" => s.algo = Some(p(v)?),
        _ => unreachable!("checked by parse_sweep"),
    }
    Ok(())
}

/// Every combination of sweep values, first sweep varying slowest.
pub fn combinations(sweeps: &[Sweep]) -> Vec<Vec<&str>> {
    let mut out: Vec<Vec<&str>> = vec![Vec::new()];
    for s in sweeps {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                s.values.iter().map(move |v| {
                    let mut row = prefix.clone();
                    row.push(v.as_str());
                    row
                })
            })
            .collect();
    }
    out
}

const COUNTER_COLUMNS: [&str; 9] = [
    "generated",
    "deduped",
    "evaluated",
    "exact_counts",
    "cache_hits",
    "zero_skips",
    "prefix_prunes",
    "parents_pruned",
    "families_pruned",
];

fn counter_values(c: &Counters) -> [u64; 9] {
    [
        c.generated,
        c.deduped,
        c.evaluated,
        c.exact_counts,
        c.cache_hits,
        c.zero_skips,
        c.prefix_prunes,
        c.parents_pruned,
        c.families_pruned,
    ]
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

struct Measured {
    run: MiningRun,
    mining_ms: f64,
    generation_ms: f64,
    counting_ms: f64,
}

fn measure(
    s: &Settings,
    table: &SupportTable,
    graph: &RegionGraph,
    cons: &Option<odt_core::Constraints>,
    repeat: usize,
) -> CliResult<Measured> {
    let mut runs = Vec::with_capacity(repeat);
    for _ in 0..repeat.max(1) {
        runs.push(s.run(table, graph, cons.clone())?.0);
    }
    let ms = |f: &dyn Fn(&MiningRun) -> std::time::Duration| {
        median(runs.iter().map(|r| f(r).as_secs_f64() * 1e3).collect())
    };
    let mining_ms = ms(&|r| r.timings.total());
    let generation_ms = ms(&|r| r.timings.generation);
    let counting_ms = ms(&|r| r.timings.counting);
    Ok(Measured {
        run: runs.pop().expect("at least one run"),
        mining_ms,
        generation_ms,
        counting_ms,
    })
}

pub fn bench_cmd(a: &BenchArgs) -> CliResult<()> {
    let sweeps = a.sweep.iter().map(|s| parse_sweep(s)).collect::<CliResult<Vec<_>>>()?;
    let (table, graph) = load_input(&a.input)?;
    let cons = constraints(&a.restrict, graph.n_regions(), table.n_slots())?;
    let base = Settings {
        sa: a.sa,
        sr: a.sr,
        opt: a.opt,
        bounds: [a.restrict.bound_o, a.restrict.bound_d, a.restrict.bound_t],
        k: a.topk,
        max_level: a.max_level,
        algo: a.rank_algo,
        cache_limit: None,
    };

    let mut w = csv::Writer::from_path(&a.out).map_err(OdtError::from)?;
    let mut header: Vec<&str> = sweeps.iter().map(|s| s.name.as_str()).collect();
    header.extend([
        "algorithm",
        "status",
        "error",
        "minsup",
        "patterns",
        "top_level",
        "mining_ms",
        "generation_ms",
        "counting_ms",
    ]);
    header.extend(COUNTER_COLUMNS);
    w.write_record(&header).map_err(OdtError::from)?;

    let mut failures = 0;
    for combo in combinations(&sweeps) {
        let mut s = base.clone();
        let outcome = sweeps
            .iter()
            .zip(&combo)
            .try_for_each(|(sw, v)| apply(&mut s, &sw.name, v))
            .and_then(|()| with_threads(a.threads, || measure(&s, &table, &graph, &cons, a.repeat))?);
        let mut row: Vec<String> = combo.iter().map(|v| v.to_string()).collect();
        row.push(s.algorithm());
        match outcome {
            Ok(m) => {
                row.extend([
                    "ok".to_string(),
                    String::new(),
                    m.run.minsup.to_string(),
                    m.run.patterns.total().to_string(),
                    m.run.patterns.max_level().unwrap_or(0).to_string(),
                    format!("{:.3}", m.mining_ms),
                    format!("{:.3}", m.generation_ms),
                    format!("{:.3}", m.counting_ms),
                ]);
                row.extend(counter_values(&m.run.counters).iter().map(u64::to_string));
            }
            Err(e) => {
                failures += 1;
                row.extend(["error".to_string(), e.to_string()]);
                row.extend(std::iter::repeat_n(String::new(), 6 + COUNTER_COLUMNS.len()));
            }
        }
        w.write_record(&row).map_err(OdtError::from)?;
        w.flush()?;
    }
    if failures > 0 {
        eprintln!("{failures} configuration(s) failed; see the status column");
    }
    Ok(())
}
