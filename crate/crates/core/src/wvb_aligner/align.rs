use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Continent, DemographicTriple, Education, QuestionBank, ResidentialArea, WVBResponseVector};

/// Thresholds on normalized distance for the moderate and high alignment
/// shares; both comparisons are strict.
pub const MODERATE_ALIGNMENT: f64 = 0.4;
pub const HIGH_ALIGNMENT: f64 = 0.2;

const MASS_TOL: f64 = 1e-9;
const REFERENCE_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("need at least 2 categories, got {0}")]
    TooFewCategories(usize),
    #[error("masses must be finite and nonnegative")]
    InvalidMass,
    #[error("masses sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("category counts differ: {0} vs {1}")]
    KMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDistribution {
    pub question_id: String,
    pub masses: Vec<f64>,
}

impl CategoricalDistribution {
    pub fn new(question_id: impl Into<String>, masses: Vec<f64>) -> Result<Self, DistributionError> {
        if masses.len() < 2 {
            return Err(DistributionError::TooFewCategories(masses.len()));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(DistributionError::InvalidMass);
        }
        let sum: f64 = masses.iter().sum();
        if (sum - 1.0).abs() > MASS_TOL {
            return Err(DistributionError::NotNormalized(sum));
        }
        Ok(Self {
            question_id: question_id.into(),
            masses,
        })
    }

    /// Empirical distribution of answers in `1..=k`.
    pub fn from_answers(question_id: impl Into<String>, k: usize, answers: &[u32]) -> Result<Self, DistributionError> {
        let mut counts = vec![0usize; k];
        for &a in answers {
            if a == 0 || a as usize > k {
                return Err(DistributionError::InvalidMass);
            }
            counts[a as usize - 1] += 1;
        }
        let n = answers.len() as f64;
        Self::new(question_id, counts.into_iter().map(|c| c as f64 / n).collect())
    }

    pub fn k(&self) -> usize {
        self.masses.len()
    }

    fn cdf(&self) -> impl Iterator<Item = f64> + '_ {
        self.masses.iter().scan(0.0, |acc, m| {
            *acc += m;
            Some(*acc)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Emd {
    /// Sum of absolute CDF differences over all K categories.
    pub raw: f64,
    /// `raw / (K - 1)`, in [0, 1].
    pub normalized: f64,
}

pub fn emd(p: &CategoricalDistribution, h: &CategoricalDistribution) -> Result<Emd, DistributionError> {
    if p.k() != h.k() {
        return Err(DistributionError::KMismatch(p.k(), h.k()));
    }
    let raw: f64 = p.cdf().zip(h.cdf()).map(|(a, b)| (a - b).abs()).sum();
    Ok(Emd {
        raw,
        normalized: (raw / (p.k() - 1) as f64).clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupDistributions {
    pub counts: BTreeMap<DemographicTriple, usize>,
    pub distributions: BTreeMap<DemographicTriple, BTreeMap<String, CategoricalDistribution>>,
}

pub fn build_group_distributions(bank: &QuestionBank, responses: &[WVBResponseVector]) -> GroupDistributions {
    let mut answers: BTreeMap<DemographicTriple, BTreeMap<&str, Vec<u32>>> = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for r in responses {
        *counts.entry(r.triple).or_insert(0) += 1;
        let group = answers.entry(r.triple).or_default();
        for q in &bank.questions {
            if let Some(&a) = r.answers.get(&q.id) {
                group.entry(q.id.as_str()).or_default().push(a);
            }
        }
    }
    let distributions = answers
        .into_iter()
        .map(|(g, per_q)| {
            let dists = per_q
                .into_iter()
                .filter_map(|(qid, a)| {
                    let k = bank.get(qid)?.k as usize;
                    CategoricalDistribution::from_answers(qid, k, &a)
                        .ok()
                        .map(|d| (qid.to_string(), d))
                })
                .collect();
            (g, dists)
        })
        .collect();
    GroupDistributions { counts, distributions }
}

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("{group} / {question}: {message}")]
    Distribution {
        group: String,
        question: String,
        message: String,
    },
}

pub type ReferenceSet = BTreeMap<DemographicTriple, BTreeMap<String, CategoricalDistribution>>;

#[derive(Debug, Deserialize)]
struct ReferenceRow {
    continent: String,
    area: String,
    education: String,
    question_id: String,
    k: usize,
    mass: f64,
}

/// Long-format CSV `continent,area,education,question_id,k,mass` with one
/// row per category `k = 1..K`. Masses summing to 1 within 1e-6 are
/// renormalized.
pub fn load_reference<R: Read>(input: R) -> Result<ReferenceSet, ReferenceError> {
    let mut reader = csv::Reader::from_reader(input);
    let mut raw: BTreeMap<(DemographicTriple, String), BTreeMap<usize, f64>> = BTreeMap::new();
    for (i, row) in reader.deserialize::<ReferenceRow>().enumerate() {
        let line = i as u64 + 2;
        let row = row?;
        let bad = |message: String| ReferenceError::Row { line, message };
        let triple = DemographicTriple {
            continent: Continent::parse(&row.continent).ok_or_else(|| bad(format!("continent `{}`", row.continent)))?,
            residential_area: ResidentialArea::parse(&row.area).ok_or_else(|| bad(format!("area `{}`", row.area)))?,
            education: Education::parse(&row.education).ok_or_else(|| bad(format!("education `{}`", row.education)))?,
        };
        if row.k == 0 {
            return Err(bad("categories are numbered from 1".into()));
        }
        let slot = raw.entry((triple, row.question_id)).or_default();
        if slot.insert(row.k, row.mass).is_some() {
            return Err(bad(format!("category {} repeated", row.k)));
        }
    }
    let mut out = ReferenceSet::new();
    for ((triple, qid), cats) in raw {
        let fail = |message: String| ReferenceError::Distribution {
            group: triple.to_string(),
            question: qid.clone(),
            message,
        };
        let k = *cats.keys().next_back().expect("at least one row");
        if cats.len() != k {
            return Err(fail(format!("categories 1..{k} not all present")));
        }
        let masses: Vec<f64> = cats.into_values().collect();
        let sum: f64 = masses.iter().sum();
        if (sum - 1.0).abs() > REFERENCE_SUM_TOL {
            return Err(fail(format!("masses sum to {sum}")));
        }
        let masses = masses.into_iter().map(|m| m / sum).collect();
        let dist = CategoricalDistribution::new(qid.clone(), masses).map_err(|e| fail(e.to_string()))?;
        out.entry(triple).or_default().insert(qid, dist);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEmd {
    pub group: DemographicTriple,
    pub question_id: String,
    pub raw: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAlignment {
    pub group: DemographicTriple,
    pub personas: usize,
    pub questions_scored: usize,
    pub mean_emd: f64,
    pub score: f64,
    pub pct_below_moderate: f64,
    pub pct_below_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub score: f64,
    pub pct_below_moderate: f64,
    pub pct_below_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub pairs: Vec<PairEmd>,
    /// Sorted by persona count descending, then group.
    pub groups: Vec<GroupAlignment>,
    /// Groups with personas but no reference distributions.
    pub unscored_groups: Vec<(DemographicTriple, usize)>,
    /// Group/question pairs present in the persona data but not the reference.
    pub missing_pairs: Vec<(DemographicTriple, String)>,
    pub unweighted: Aggregate,
    pub weighted: Aggregate,
}

pub fn alignment_report(
    groups: &GroupDistributions,
    reference: &ReferenceSet,
) -> Result<AlignmentReport, DistributionError> {
    let mut pairs = Vec::new();
    let mut scored = Vec::new();
    let mut unscored = Vec::new();
    let mut missing = Vec::new();
    for (triple, dists) in &groups.distributions {
        let personas = groups.counts.get(triple).copied().unwrap_or(0);
        let Some(refs) = reference.get(triple) else {
            log::info!("group {triple} has no reference distributions; not scored");
            unscored.push((*triple, personas));
            continue;
        };
        let mut values = Vec::new();
        for (qid, p) in dists {
            let Some(h) = refs.get(qid) else {
                log::info!("no reference for {triple} / {qid}; pair excluded");
                missing.push((*triple, qid.clone()));
                continue;
            };
            let d = emd(p, h)?;
            values.push(d.normalized);
            pairs.push(PairEmd {
                group: *triple,
                question_id: qid.clone(),
                raw: d.raw,
                normalized: d.normalized,
            });
        }
        if values.is_empty() {
            unscored.push((*triple, personas));
            continue;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let share = |t: f64| 100.0 * values.iter().filter(|&&v| v < t).count() as f64 / n;
        scored.push(GroupAlignment {
            group: *triple,
            personas,
            questions_scored: values.len(),
            mean_emd: mean,
            score: 1.0 - mean,
            pct_below_moderate: share(MODERATE_ALIGNMENT),
            pct_below_high: share(HIGH_ALIGNMENT),
        });
    }
    let aggregate = |weight: &dyn Fn(&GroupAlignment) -> f64| {
        let total: f64 = scored.iter().map(weight).sum();
        if total == 0.0 {
            return Aggregate::default();
        }
        let avg = |f: fn(&GroupAlignment) -> f64| scored.iter().map(|g| weight(g) * f(g)).sum::<f64>() / total;
        Aggregate {
            score: avg(|g| g.score),
            pct_below_moderate: avg(|g| g.pct_below_moderate),
            pct_below_high: avg(|g| g.pct_below_high),
        }
    };
    let unweighted = aggregate(&|_| 1.0);
    let weighted = aggregate(&|g| g.personas as f64);
    scored.sort_by(|a, b| b.personas.cmp(&a.personas).then(a.group.cmp(&b.group)));
    Ok(AlignmentReport {
        pairs,
        groups: scored,
        unscored_groups: unscored,
        missing_pairs: missing,
        unweighted,
        weighted,
    })
}

pub const SUMMARY_HEADER: [&str; 4] = ["Aggregation", "1 - mean EMD", "%(EMD < 0.4)", "%(EMD < 0.2)"];
pub const TOP_GROUPS_HEADER: [&str; 5] = ["Group", "#personas", "1 - mean EMD", "%(EMD < 0.4)", "%(EMD < 0.2)"];
pub const GROUP_TABLE_HEADER: [&str; 5] = [
    "Group (Continent Settlement Education)",
    "# personas",
    "1 - mean EMD",
    "%(EMD < 0.4)",
    "%(EMD < 0.2)",
];

pub fn write_summary_table<W: Write>(out: W, report: &AlignmentReport) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for (name, a) in [("Unweighted", report.unweighted), ("Weighted", report.weighted)] {
        w.write_record([
            name.to_string(),
            format!("{:.3}", a.score),
            format!("{:.2}", a.pct_below_moderate),
            format!("{:.2}", a.pct_below_high),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn group_rows<W: Write>(w: &mut csv::Writer<W>, groups: &[GroupAlignment], compact: bool) -> Result<(), csv::Error> {
    for g in groups {
        w.write_record([
            if compact { g.group.code() } else { g.group.to_string() },
            g.personas.to_string(),
            format!("{:.3}", g.score),
            format!("{:.1}", g.pct_below_moderate),
            format!("{:.1}", g.pct_below_high),
        ])?;
    }
    Ok(())
}

/// The `n` largest groups with compact group codes.
pub fn write_top_groups_table<W: Write>(out: W, report: &AlignmentReport, n: usize) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TOP_GROUPS_HEADER)?;
    group_rows(&mut w, &report.groups[..n.min(report.groups.len())], true)?;
    w.flush()?;
    Ok(())
}

/// Every scored group, largest first.
pub fn write_group_table<W: Write>(out: W, report: &AlignmentReport) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GROUP_TABLE_HEADER)?;
    group_rows(&mut w, &report.groups, false)?;
    w.flush()?;
    Ok(())
}
