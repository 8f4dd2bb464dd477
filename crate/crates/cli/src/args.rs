use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use odt_core::synth::GraphKind;
use odt_core::{Fraction, OptLevel, RankAlgo};

#[derive(Debug, Parser)]
#[command(name = "odtminer", version, about = "Mine generalized origin-destination-time flow patterns")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate trip records into atomic (origin, destination, slot) supports.
    Aggregate(AggregateArgs),
    /// Mine patterns from aggregated supports.
    Mine(MineArgs),
    /// Brute-force reference miner for small instances.
    Oracle(OracleArgs),
    /// Generate a seeded synthetic instance with planted hot spots.
    Synth(SynthArgs),
    /// Run a parameter sweep and write one CSV row per configuration.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Timeline {
    #[arg(long, default_value_t = 30)]
    pub slot_minutes: u32,
    #[arg(long, default_value_t = 1440)]
    pub period_minutes: u32,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub trips: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    pub timeline: Timeline,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Per-key mean absolute deviation of trip durations, as CSV.
    #[arg(long)]
    pub mad_out: Option<PathBuf>,
}

/// Where the supports and the graph come from.
#[derive(Debug, Clone, Args)]
pub struct Input {
    /// Aggregated `o,d,t,support` CSV.
    #[arg(long, requires = "graph", conflicts_with = "instance")]
    pub supports: Option<PathBuf>,
    #[arg(long, requires = "supports", conflicts_with = "instance")]
    pub graph: Option<PathBuf>,
    /// JSON instance holding both graph and supports.
    #[arg(long, required_unless_present = "supports")]
    pub instance: Option<PathBuf>,
    #[command(flatten)]
    pub timeline: Timeline,
}

#[derive(Debug, Clone, Args)]
pub struct Restrictions {
    /// Largest origin set allowed.
    #[arg(long)]
    pub bound_o: Option<usize>,
    #[arg(long)]
    pub bound_d: Option<usize>,
    #[arg(long)]
    pub bound_t: Option<usize>,
    /// File of allowed origin region ids.
    #[arg(long)]
    pub origins: Option<PathBuf>,
    /// File of allowed destination region ids.
    #[arg(long)]
    pub dests: Option<PathBuf>,
    /// Allowed slot window `start:end`, inclusive.
    #[arg(long)]
    pub slots: Option<String>,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub input: Input,
    /// Share of non-zero atomic triples kept as atomic patterns, e.g. `0.5` or `1/2`.
    #[arg(long)]
    pub sa: Fraction,
    /// Minimum share of atomic patterns inside a generalized pattern.
    #[arg(long, required_unless_present = "topk", conflicts_with = "topk")]
    pub sr: Option<Fraction>,
    /// baseline, av, avfc, avfcin or opt (default).
    #[arg(long, conflicts_with = "topk")]
    pub opt: Option<OptLevel>,
    #[command(flatten)]
    pub restrict: Restrictions,
    /// Report the k best patterns per level instead of using a ratio threshold.
    #[arg(long, requires = "max_level")]
    pub topk: Option<usize>,
    #[arg(long)]
    pub max_level: Option<usize>,
    /// baserank, baseoptrank or optrank (default).
    #[arg(long, requires = "topk")]
    pub rank_algo: Option<RankAlgo>,
    /// Cap on cached difference counts.
    #[arg(long)]
    pub cache_limit: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, short, default_value = "patterns.jsonl")]
    pub out: PathBuf,
    #[arg(long, default_value = "report.json")]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub sa: Fraction,
    #[arg(long)]
    pub sr: Fraction,
    #[arg(long)]
    pub max_level: Option<usize>,
    #[arg(long, short, default_value = "oracle.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "grid")]
    pub kind: GraphKind,
    #[arg(long)]
    pub regions: usize,
    /// Number of timeslots.
    #[arg(long)]
    pub slots: usize,
    #[arg(long, default_value_t = 30)]
    pub slot_minutes: u32,
    /// Defaults to 20 trips per region and slot.
    #[arg(long)]
    pub n_trips: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub hot_spots: usize,
    #[arg(long, default_value_t = 0.3)]
    pub intensity: f64,
    #[arg(long, default_value_t = 2)]
    pub hot_regions: usize,
    #[arg(long, default_value_t = 2)]
    pub hot_slots: usize,
    #[arg(long, default_value_t = 4)]
    pub max_degree: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_trips: PathBuf,
    #[arg(long)]
    pub out_graph: PathBuf,
    /// Also write the aggregated instance as JSON.
    #[arg(long)]
    pub out_instance: Option<PathBuf>,
    /// Planted hot spots as JSON.
    #[arg(long)]
    pub out_truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub input: Input,
    #[arg(long)]
    pub sa: Option<Fraction>,
    #[arg(long)]
    pub sr: Option<Fraction>,
    #[arg(long)]
    pub opt: Option<OptLevel>,
    #[command(flatten)]
    pub restrict: Restrictions,
    #[arg(long)]
    pub topk: Option<usize>,
    #[arg(long)]
    pub max_level: Option<usize>,
    #[arg(long)]
    pub rank_algo: Option<RankAlgo>,
    /// `name=v1,v2,...` over sa, sr, opt, bound-o, bound-d, bound-t, k,
    /// max-level or rank-algo. Repeated sweeps form a cross product.
    #[arg(long, required = true)]
    pub sweep: Vec<String>,
    /// Runs per configuration; the median time is reported.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
}
