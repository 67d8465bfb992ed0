//! Seeded synthetic inputs shared by the benchmarks.

use persona_audit::cultural_space::{ConfigId, CulturalConfiguration, CulturalSchema};
use persona_audit::moral_profiler::{Foundation, MoralVector, OracleMatrix, Origin};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Transactions over `items` items, each item present with probability `density`.
pub fn transactions(n: usize, items: u32, density: f64, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..items).filter(|_| rng.gen_bool(density)).collect())
        .collect()
}

/// Row-major data with two latent factors behind ten columns.
pub fn two_factor_rows(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (a, b): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            (0..10)
                .map(|i| {
                    let w = i as f64 / 9.0;
                    (1.0 - w) * a + w * b + 0.1 * rng.gen_range(-1.0..1.0)
                })
                .collect()
        })
        .collect()
}

/// A random point of the probability simplex with `k` categories.
pub fn simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.001..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut m: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let head: f64 = m[..k - 1].iter().sum();
    m[k - 1] = 1.0 - head;
    m
}

/// Configurations with a care score driven by one variable plus noise.
pub fn planted_personas(
    schema: &CulturalSchema,
    matrix: &OracleMatrix,
    n: usize,
    seed: u64,
) -> (Vec<CulturalConfiguration>, Vec<MoralVector>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = schema.variable_index("religiosity").expect("default schema variable");
    let configs: Vec<CulturalConfiguration> = (0..n)
        .map(|_| schema.decode(ConfigId(rng.gen_range(0..schema.space_size()))).unwrap())
        .collect();
    let mfq = configs
        .iter()
        .map(|c| {
            let y = matrix.entry(v, c.level_of(v), Foundation::Care) as f64 + rng.gen_range(-0.3..0.3);
            MoralVector {
                config_id: c.id(),
                origin: Origin::Mfq,
                scores: Foundation::ALL
                    .into_iter()
                    .map(|f| (f, if f == Foundation::Care { y } else { 3.0 }))
                    .collect(),
            }
        })
        .collect();
    (configs, mfq)
}
