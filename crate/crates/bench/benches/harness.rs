use std::collections::BTreeSet;
use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use docnav_bench::{corpus, token_group};
use docnav_core::agents::{AgentFactory, BridgeOptions};
use docnav_core::overview::build_overview;
use docnav_core::retrieval::PageIndexStats;
use docnav_core::rewards::nls;
use docnav_core::trainpipe::{group_advantages, grpo_objective};
use docnav_core::{AgentSpec, EpisodeRunner, HarnessConfig, RetrieverSpec};

fn bench_overview(c: &mut Criterion) {
    let mut group = c.benchmark_group("overview");
    group.sample_size(10);
    for pages in [12, 40] {
        let corpus = corpus(1, pages);
        let doc = corpus.documents.values().next().unwrap().clone();
        group.bench_with_input(BenchmarkId::from_parameter(pages), &doc, |b, doc| {
            b.iter(|| build_overview(black_box(doc), 36, 28).unwrap())
        });
    }
    group.finish();
}

fn bench_bm25(c: &mut Criterion) {
    let corpus = corpus(1, 40);
    let doc = corpus.documents.values().next().unwrap();
    let qa = &corpus.qa_items[0];
    c.bench_function("bm25/index_40", |b| b.iter(|| PageIndexStats::build(black_box(doc))));
    let index = Arc::new(PageIndexStats::build(doc));
    let excluded = BTreeSet::new();
    c.bench_function("bm25/retrieve_40", |b| b.iter(|| index.retrieve(black_box(&qa.question), &excluded, 4)));
}

fn bench_episode(c: &mut Criterion) {
    let corpus = corpus(2, 12);
    let cfg = HarnessConfig::default();
    let mut group = c.benchmark_group("episode");
    for (name, agent, retriever) in
        [("oracle", AgentSpec::Oracle, RetrieverSpec::Oracle), ("greedy_bm25", AgentSpec::Greedy, RetrieverSpec::Bm25)]
    {
        let factory = AgentFactory::new(agent, BridgeOptions::default());
        let runner = EpisodeRunner::new(&corpus, &corpus.qa_items, &cfg, factory, retriever).unwrap();
        let qa = &corpus.qa_items[0];
        group.bench_function(name, |b| b.iter(|| runner.run(black_box(qa))));
    }
    group.finish();
}

fn bench_grpo(c: &mut Criterion) {
    let (seqs, rewards) = token_group(8, 512);
    c.bench_function("grpo/advantages_8", |b| b.iter(|| group_advantages(black_box(&rewards), 1e-8)));
    let adv = group_advantages(&rewards, 1e-8);
    c.bench_function("grpo/objective_8x512", |b| b.iter(|| grpo_objective(black_box(&seqs), &adv, 0.2).unwrap()));
}

fn bench_nls(c: &mut Criterion) {
    let a = "Total revenue for the fiscal year 2023";
    let b = "total revenues for fiscal year 2022";
    c.bench_function("nls/sentence", |bench| bench.iter(|| nls(black_box(a), black_box(b))));
}

criterion_group!(benches, bench_overview, bench_bm25, bench_episode, bench_grpo, bench_nls);
criterion_main!(benches);
