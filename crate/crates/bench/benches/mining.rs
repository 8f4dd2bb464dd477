use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use odt_bench::{aggregated, frac, grid_workload};
use odt_core::optimize::PrefixSumIndex;
use odt_core::{aggregate, mine_all, mine_topk, MiningConfig, OptLevel, RankAlgo};

fn opt_ladder(c: &mut Criterion) {
    let inst = grid_workload(49, 24, 30_000, 7);
    let (table, graph) = aggregated(&inst);
    let cfg = MiningConfig::new(frac("0.02"), frac("0.5"));
    let mut g = c.benchmark_group("mine_all");
    g.sample_size(10);
    for opt in OptLevel::ALL {
        g.bench_with_input(BenchmarkId::from_parameter(opt), &opt, |b, &opt| {
            b.iter(|| mine_all(&table, &graph, &cfg, opt).unwrap())
        });
    }
    g.finish();
}

fn ranked(c: &mut Criterion) {
    let inst = grid_workload(25, 12, 8_000, 11);
    let (table, graph) = aggregated(&inst);
    let mut g = c.benchmark_group("mine_topk");
    g.sample_size(10);
    for algo in [RankAlgo::BaseRank, RankAlgo::BaseOptRank, RankAlgo::OptRank] {
        for k in [10, 50] {
            let cfg = MiningConfig::ranked(frac("0.1"), k, 6);
            g.bench_with_input(BenchmarkId::new(format!("{algo:?}"), k), &cfg, |b, cfg| {
                b.iter(|| mine_topk(&table, &graph, cfg, algo).unwrap())
            });
        }
    }
    g.finish();
}

fn ingest(c: &mut Criterion) {
    let inst = grid_workload(100, 48, 100_000, 3);
    c.bench_function("aggregate_100k", |b| {
        b.iter(|| aggregate(black_box(&inst.trips), inst.slot_minutes, 100, inst.period_minutes()).unwrap())
    });
}

fn prefix_sums(c: &mut Criterion) {
    let dims = (40, 40, 48);
    c.bench_function("prefix_sum_build", |b| {
        b.iter(|| PrefixSumIndex::from_cells(dims, |o, d, t| (o * 7 + d * 3 + t) % 5 == 0))
    });
    let idx = PrefixSumIndex::from_cells(dims, |o, d, t| (o * 7 + d * 3 + t) % 5 == 0);
    c.bench_function("prefix_sum_query", |b| {
        b.iter(|| idx.range_sum(black_box(3), 30, black_box(5), 25, 10, 40).unwrap())
    });
}

criterion_group!(benches, opt_ladder, ranked, ingest, prefix_sums);
criterion_main!(benches);
