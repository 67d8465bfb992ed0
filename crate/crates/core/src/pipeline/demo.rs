//! Synthetic stand-ins for externally sourced human reference data, so the
//! alignment stage can run offline. Never a substitute for real references.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::wvb_aligner::{CategoricalDistribution, DemographicTriple, QuestionBank, ReferenceSet};

/// Random distributions for every triple and question, Dirichlet(2, .., 2).
pub fn demo_reference(bank: &QuestionBank, seed: u64) -> ReferenceSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x7265_6665);
    let gamma = Gamma::new(2.0, 1.0).expect("valid shape");
    let mut out = ReferenceSet::new();
    for triple in DemographicTriple::all() {
        let group = out.entry(triple).or_default();
        for q in &bank.questions {
            let raw: Vec<f64> = (0..q.k).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = raw.iter().sum();
            let masses = raw.into_iter().map(|x| x / total).collect();
            let d = CategoricalDistribution::new(q.id.clone(), masses).expect("normalized masses");
            group.insert(q.id.clone(), d);
        }
    }
    out
}

/// Long-format CSV readable by `load_reference`.
pub fn write_reference_csv<W: Write>(out: W, reference: &ReferenceSet) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["continent", "area", "education", "question_id", "k", "mass"])?;
    for (triple, dists) in reference {
        for (qid, d) in dists {
            for (k, m) in d.masses.iter().enumerate() {
                w.write_record([
                    triple.continent.label().to_string(),
                    triple.residential_area.label().to_string(),
                    triple.education.label().to_string(),
                    qid.clone(),
                    (k + 1).to_string(),
                    m.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
