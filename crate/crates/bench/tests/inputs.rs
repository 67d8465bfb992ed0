use persona_audit::cultural_space::CulturalSchema;
use persona_audit::moral_profiler::OracleMatrix;
use persona_audit_bench::{planted_personas, simplex, transactions, two_factor_rows};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn generators_are_seeded() {
    assert_eq!(transactions(50, 8, 0.4, 1), transactions(50, 8, 0.4, 1));
    assert_ne!(transactions(50, 8, 0.4, 1), transactions(50, 8, 0.4, 2));
    let rows = two_factor_rows(20, 3);
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.len() == 10));
}

#[test]
fn simplex_points_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for k in 2..12 {
        let m = simplex(&mut rng, k);
        assert_eq!(m.len(), k);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(m.iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn planted_personas_align() {
    let schema = CulturalSchema::default_schema();
    let matrix = OracleMatrix::demo(&schema).unwrap();
    let (configs, mfq) = planted_personas(&schema, &matrix, 30, 5);
    assert_eq!(configs.len(), mfq.len());
    assert!(configs.iter().zip(&mfq).all(|(c, m)| c.id() == m.config_id));
}
