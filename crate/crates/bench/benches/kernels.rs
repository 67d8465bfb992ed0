use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use persona_audit::cultural_space::CulturalSchema;
use persona_audit::iw_mapper::{pca_varimax, standardize};
use persona_audit::moral_profiler::{greedy_core_set_selection, Foundation, OracleMatrix, SelectionParams};
use persona_audit::pattern_miner::closed_itemsets;
use persona_audit::wvb_aligner::{emd, CategoricalDistribution};
use persona_audit_bench::{planted_personas, simplex, transactions, two_factor_rows};

fn miner(c: &mut Criterion) {
    let mut g = c.benchmark_group("closed_itemsets");
    for n in [500, 2_000] {
        let tx = transactions(n, 32, 0.3, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &tx, |b, tx| {
            b.iter(|| closed_itemsets(black_box(tx), 0.2))
        });
    }
    g.finish();
}

fn pca(c: &mut Criterion) {
    let rows = two_factor_rows(20_000, 2);
    let z = standardize(&rows).unwrap().data;
    c.bench_function("pca_varimax_20000x10", |b| {
        b.iter(|| pca_varimax(black_box(&z), 2).unwrap())
    });
}

fn emd_pairs(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs: Vec<(CategoricalDistribution, CategoricalDistribution)> = (0..1_000)
        .map(|i| {
            let k = 2 + i % 9;
            (
                CategoricalDistribution::new("q", simplex(&mut rng, k)).unwrap(),
                CategoricalDistribution::new("q", simplex(&mut rng, k)).unwrap(),
            )
        })
        .collect();
    c.bench_function("emd_1000_pairs", |b| {
        b.iter(|| pairs.iter().map(|(p, h)| emd(p, h).unwrap().normalized).sum::<f64>())
    });
}

fn selection(c: &mut Criterion) {
    let schema = CulturalSchema::default_schema();
    let matrix = OracleMatrix::demo(&schema).unwrap();
    let (configs, mfq) = planted_personas(&schema, &matrix, 5_000, 4);
    let params = SelectionParams {
        runs: 10,
        ..SelectionParams::default()
    };
    let mut g = c.benchmark_group("greedy_selection");
    g.sample_size(10);
    g.bench_function("5000_personas_10_runs", |b| {
        b.iter(|| greedy_core_set_selection(Foundation::Care, &mfq, &configs, &matrix, &params).unwrap())
    });
    g.finish();
}

criterion_group!(benches, miner, pca, emd_pairs, selection);
criterion_main!(benches);
