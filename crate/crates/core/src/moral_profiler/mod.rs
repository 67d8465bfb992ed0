//! Moral-foundation profiles: questionnaire scores elicited from personas,
//! scores inferred from a culture-to-morality matrix, core-variable
//! selection and per-level statistics.

mod select;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::cultural_space::{ConfigId, CulturalConfiguration, CulturalSchema};
use crate::elicit::ask_with_repair;
use crate::llm_gateway::{ChatRequest, Gateway, GatewayError, RequestClass};
use crate::persona_forge::{PersonaProfile, RecordStatus};

pub use select::{
    fit_ols, greedy_core_set_selection, jaccard, r_squared, AbortedRun, CoreSetResult, SelectionError, SelectionParams,
    SelectionRun,
};
pub use stats::{
    per_value_stats, quantile, smoothed_series, write_core_set_table, write_series_csv, write_value_stats_table,
    SeriesPoint, ValueStats, CORE_SET_HEADER, VALUE_STATS_HEADER,
};

pub const ITEM_COUNT: usize = 36;
pub const ITEMS_PER_FOUNDATION: usize = 6;
pub const LIKERT_MIN: u8 = 1;
pub const LIKERT_MAX: u8 = 5;

const BUNDLED_ITEM_MAP: &str = include_str!("../../data/mfq2_item_map.csv");
const BUNDLED_ITEMS: &str = include_str!("../../data/mfq2_items_placeholder.csv");
const DEMO_MATRIX: &str = include_str!("../../data/oracle_matrix_demo.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Foundation {
    Care,
    Equality,
    Proportionality,
    Loyalty,
    Authority,
    Purity,
}

impl Foundation {
    pub const ALL: [Foundation; 6] = [
        Foundation::Care,
        Foundation::Equality,
        Foundation::Proportionality,
        Foundation::Loyalty,
        Foundation::Authority,
        Foundation::Purity,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Foundation::Care => "care",
            Foundation::Equality => "equality",
            Foundation::Proportionality => "proportionality",
            Foundation::Loyalty => "loyalty",
            Foundation::Authority => "authority",
            Foundation::Purity => "purity",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Foundation::Care => "Care",
            Foundation::Equality => "Equality",
            Foundation::Proportionality => "Proportionality",
            Foundation::Loyalty => "Loyalty",
            Foundation::Authority => "Authority",
            Foundation::Purity => "Purity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        Self::ALL.into_iter().find(|f| f.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Foundation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Mfq,
    Mft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoralVector {
    pub config_id: ConfigId,
    pub origin: Origin,
    pub scores: BTreeMap<Foundation, f64>,
}

impl MoralVector {
    fn from_array(config_id: ConfigId, origin: Origin, values: [f64; 6]) -> Self {
        Self {
            config_id,
            origin,
            scores: Foundation::ALL.into_iter().zip(values).collect(),
        }
    }

    pub fn get(&self, f: Foundation) -> f64 {
        self.scores[&f]
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ItemMapError {
    #[error("item map: {0}")]
    Csv(String),
    #[error("item index {0} outside 1..=36")]
    Index(u32),
    #[error("item {0} assigned twice")]
    Duplicate(u32),
    #[error("item {0} not assigned")]
    Missing(u32),
    #[error("unknown foundation {0:?}")]
    Foundation(String),
    #[error("foundation {foundation} has {count} items, expected 6")]
    Unbalanced { foundation: Foundation, count: usize },
}

/// Assignment of the 36 numbered items to foundations, six each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemMap {
    /// `foundations[i]` is the foundation of item `i + 1`.
    foundations: Vec<Foundation>,
}

impl ItemMap {
    pub fn new(pairs: &[(u32, Foundation)]) -> Result<Self, ItemMapError> {
        let mut slots: Vec<Option<Foundation>> = vec![None; ITEM_COUNT];
        for &(idx, f) in pairs {
            if idx == 0 || idx as usize > ITEM_COUNT {
                return Err(ItemMapError::Index(idx));
            }
            let slot = &mut slots[idx as usize - 1];
            if slot.is_some() {
                return Err(ItemMapError::Duplicate(idx));
            }
            *slot = Some(f);
        }
        let foundations = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or(ItemMapError::Missing(i as u32 + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        for f in Foundation::ALL {
            let count = foundations.iter().filter(|&&g| g == f).count();
            if count != ITEMS_PER_FOUNDATION {
                return Err(ItemMapError::Unbalanced { foundation: f, count });
            }
        }
        Ok(Self { foundations })
    }

    pub fn bundled() -> Self {
        Self::from_csv(BUNDLED_ITEM_MAP.as_bytes()).expect("bundled item map is valid")
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<Self, ItemMapError> {
        #[derive(Deserialize)]
        struct Row {
            item_index: u32,
            foundation: String,
        }
        let mut pairs = Vec::new();
        for row in csv::Reader::from_reader(reader).deserialize::<Row>() {
            let row = row.map_err(|e| ItemMapError::Csv(e.to_string()))?;
            let f = Foundation::parse(&row.foundation).ok_or(ItemMapError::Foundation(row.foundation))?;
            pairs.push((row.item_index, f));
        }
        Self::new(&pairs)
    }

    pub fn load(path: &Path) -> Result<Self, ItemMapError> {
        let file = std::fs::File::open(path).map_err(|e| ItemMapError::Csv(format!("{}: {e}", path.display())))?;
        Self::from_csv(file)
    }

    pub fn foundation_of(&self, item: u32) -> Foundation {
        self.foundations[item as usize - 1]
    }

    /// Foundation scores as means of their items; `answers[i]` is item `i + 1`.
    pub fn score(&self, answers: &[u8]) -> [f64; 6] {
        let mut sums = [0.0; 6];
        for (i, &a) in answers.iter().enumerate() {
            sums[self.foundations[i].index()] += a as f64;
        }
        sums.map(|s| s / ITEMS_PER_FOUNDATION as f64)
    }
}

/// Item wordings shown to the model, numbered 1..=36.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MfqItems {
    texts: Vec<String>,
}

impl MfqItems {
    /// Placeholder wordings for mock runs; the instrument text is supplied by the user.
    pub fn placeholder() -> Self {
        Self::from_csv(BUNDLED_ITEMS.as_bytes()).expect("bundled items are valid")
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<Self, ItemMapError> {
        #[derive(Deserialize)]
        struct Row {
            item_index: u32,
            text: String,
        }
        let mut slots: Vec<Option<String>> = vec![None; ITEM_COUNT];
        for row in csv::Reader::from_reader(reader).deserialize::<Row>() {
            let row = row.map_err(|e| ItemMapError::Csv(e.to_string()))?;
            if row.item_index == 0 || row.item_index as usize > ITEM_COUNT {
                return Err(ItemMapError::Index(row.item_index));
            }
            let slot = &mut slots[row.item_index as usize - 1];
            if slot.is_some() {
                return Err(ItemMapError::Duplicate(row.item_index));
            }
            *slot = Some(row.text.trim().to_string());
        }
        let texts = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or(ItemMapError::Missing(i as u32 + 1)))
            .collect::<Result<_, _>>()?;
        Ok(Self { texts })
    }

    pub fn load(path: &Path) -> Result<Self, ItemMapError> {
        let file = std::fs::File::open(path).map_err(|e| ItemMapError::Csv(format!("{}: {e}", path.display())))?;
        Self::from_csv(file)
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }
}

pub fn render_mfq_system(persona: &PersonaProfile) -> String {
    format!(
        "You are the following person:\n {}\n\nAnswer the following MFQ-2 survey as this person would \
         answer, based on their values and worldview. It is very important to respond EXACTLY as \
         requested. Be terse.",
        persona.raw_text.trim()
    )
}

pub fn render_mfq_prompt(items: &MfqItems) -> String {
    let mut out = String::from(
        "You will be given 36 numbered MFQ-2 items. For each item, return a single integer in \
         {1, 2, 3, 4, 5}. Return ONLY valid JSON in the following format (and nothing else):\n\
         {\"answers\": {\"1\": <int>, ..., \"36\": <int>}}\n\n",
    );
    for (i, t) in items.texts().iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, t));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MfqAnswerError {
    #[error("no JSON object found")]
    NoJson,
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("missing items {0:?}")]
    Missing(Vec<u32>),
    #[error("unexpected key {0:?}")]
    UnexpectedKey(String),
    #[error("item {item}: {value} is not an integer in 1..=5")]
    OutOfRange { item: u32, value: String },
}

/// Parses `{"answers": {"1": .., "36": ..}}`. A bare item object and a
/// surrounding code fence are tolerated; anything else must be exact.
pub fn parse_mfq_answers(text: &str) -> Result<Vec<u8>, MfqAnswerError> {
    let start = text.find('{').ok_or(MfqAnswerError::NoJson)?;
    let end = text.rfind('}').ok_or(MfqAnswerError::NoJson)?;
    if end < start {
        return Err(MfqAnswerError::NoJson);
    }
    let value: Value = serde_json::from_str(&text[start..=end]).map_err(|e| MfqAnswerError::Json(e.to_string()))?;
    let obj = match value.get("answers") {
        Some(Value::Object(m)) => m,
        Some(_) => return Err(MfqAnswerError::Json("\"answers\" is not an object".into())),
        None => value.as_object().ok_or(MfqAnswerError::NoJson)?,
    };
    let mut answers: Vec<Option<u8>> = vec![None; ITEM_COUNT];
    for (k, v) in obj {
        let item: u32 = match k.trim().parse() {
            Ok(i) if (1..=ITEM_COUNT as u32).contains(&i) => i,
            _ => return Err(MfqAnswerError::UnexpectedKey(k.clone())),
        };
        let n = v
            .as_u64()
            .or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
            .filter(|n| (LIKERT_MIN as u64..=LIKERT_MAX as u64).contains(n));
        match n {
            Some(n) => answers[item as usize - 1] = Some(n as u8),
            None => {
                return Err(MfqAnswerError::OutOfRange {
                    item,
                    value: v.to_string(),
                })
            }
        }
    }
    let missing: Vec<u32> = (1..=ITEM_COUNT as u32)
        .filter(|i| answers[*i as usize - 1].is_none())
        .collect();
    if !missing.is_empty() {
        return Err(MfqAnswerError::Missing(missing));
    }
    Ok(answers.into_iter().flatten().collect())
}

/// Persisted questionnaire outcome, one JSON line per persona.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfqRecord {
    pub config_id: ConfigId,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<Foundation, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: u32,
    pub raw_text: String,
}

impl MfqRecord {
    pub fn vector(&self) -> Option<MoralVector> {
        match (self.status, &self.scores) {
            (RecordStatus::Ok, Some(s)) => Some(MoralVector {
                config_id: self.config_id,
                origin: Origin::Mfq,
                scores: s.clone(),
            }),
            _ => None,
        }
    }
}

fn mfq_repair(err: &MfqAnswerError) -> String {
    format!(
        "Your previous answer could not be used ({err}). Return ONLY the JSON object \
         {{\"answers\": {{\"1\": <int>, ..., \"36\": <int>}}}} with all 36 items, each an integer from 1 to 5."
    )
}

pub fn elicit_mfq_scores(
    persona: &PersonaProfile,
    items: &MfqItems,
    item_map: &ItemMap,
    gateway: &Gateway,
    max_reasks: u32,
) -> Result<MfqRecord, GatewayError> {
    let req = gateway
        .prepare(ChatRequest::new(render_mfq_system(persona), render_mfq_prompt(items)))
        .with_context(RequestClass::Mfq, persona.config_id, None);
    let asked = ask_with_repair(gateway, &req, max_reasks, parse_mfq_answers, mfq_repair)?;
    Ok(match asked.result {
        Ok(answers) => {
            let v = MoralVector::from_array(persona.config_id, Origin::Mfq, item_map.score(&answers));
            MfqRecord {
                config_id: persona.config_id,
                status: RecordStatus::Ok,
                answers: Some(answers),
                scores: Some(v.scores),
                error: None,
                attempts: asked.attempts,
                raw_text: asked.last_text,
            }
        }
        Err(e) => MfqRecord {
            config_id: persona.config_id,
            status: RecordStatus::Failed,
            answers: None,
            scores: None,
            error: Some(e),
            attempts: asked.attempts,
            raw_text: asked.last_text,
        },
    })
}

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("oracle matrix: {0}")]
    Csv(#[from] csv::Error),
    #[error("oracle matrix: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: unknown variable {variable:?}")]
    UnknownVariable { line: u64, variable: String },
    #[error("line {line}: unknown level {level:?} of {variable}")]
    UnknownLevel { line: u64, variable: String, level: String },
    #[error("line {line}: duplicate row {variable}={level}")]
    Duplicate { line: u64, variable: String, level: String },
    #[error("line {line}: {foundation} entry {value} outside 1..=5")]
    Entry {
        line: u64,
        foundation: Foundation,
        value: i64,
    },
    #[error("missing row {variable}={level}")]
    MissingRow { variable: String, level: String },
}

/// Integer 1..=5 score of every (variable, level) on every foundation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleMatrix {
    variables: Vec<String>,
    /// `rows[v][l][f]`
    rows: Vec<Vec<[u8; 6]>>,
}

impl OracleMatrix {
    /// Reads the `variable,level,care,...,purity` CSV and checks it covers
    /// exactly the levels of `schema`.
    pub fn from_csv<R: Read>(schema: &CulturalSchema, reader: R) -> Result<Self, MatrixError> {
        Self::parse(schema, reader, false)
    }

    fn parse<R: Read>(schema: &CulturalSchema, reader: R, skip_unknown: bool) -> Result<Self, MatrixError> {
        #[derive(Deserialize)]
        struct Row {
            variable: String,
            level: String,
            care: i64,
            equality: i64,
            proportionality: i64,
            loyalty: i64,
            authority: i64,
            purity: i64,
        }
        let mut slots: Vec<Vec<Option<[u8; 6]>>> =
            schema.variables().iter().map(|v| vec![None; v.levels.len()]).collect();
        let mut rdr = csv::Reader::from_reader(reader);
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row?;
            let line = i as u64 + 2;
            if skip_unknown
                && schema
                    .variable(row.variable.trim())
                    .and_then(|v| v.level_index(row.level.trim()))
                    .is_none()
            {
                continue;
            }
            let vi = schema
                .variable_index(row.variable.trim())
                .ok_or_else(|| MatrixError::UnknownVariable {
                    line,
                    variable: row.variable.clone(),
                })?;
            let li = schema.variables()[vi]
                .level_index(row.level.trim())
                .ok_or_else(|| MatrixError::UnknownLevel {
                    line,
                    variable: row.variable.clone(),
                    level: row.level.clone(),
                })?;
            let raw = [
                row.care,
                row.equality,
                row.proportionality,
                row.loyalty,
                row.authority,
                row.purity,
            ];
            let mut entries = [0u8; 6];
            for (f, (&value, slot)) in Foundation::ALL.into_iter().zip(raw.iter().zip(entries.iter_mut())) {
                if !(LIKERT_MIN as i64..=LIKERT_MAX as i64).contains(&value) {
                    return Err(MatrixError::Entry {
                        line,
                        foundation: f,
                        value,
                    });
                }
                *slot = value as u8;
            }
            if slots[vi][li].replace(entries).is_some() {
                return Err(MatrixError::Duplicate {
                    line,
                    variable: row.variable,
                    level: row.level,
                });
            }
        }
        let mut rows = Vec::with_capacity(slots.len());
        for (v, levels) in schema.variables().iter().zip(slots) {
            let mut out = Vec::with_capacity(levels.len());
            for (l, slot) in v.levels.iter().zip(levels) {
                out.push(slot.ok_or_else(|| MatrixError::MissingRow {
                    variable: v.name.clone(),
                    level: l.id.clone(),
                })?);
            }
            rows.push(out);
        }
        Ok(Self {
            variables: schema.variables().iter().map(|v| v.name.clone()).collect(),
            rows,
        })
    }

    pub fn load(schema: &CulturalSchema, path: &Path) -> Result<Self, MatrixError> {
        Self::from_csv(schema, std::fs::File::open(path)?)
    }

    /// Illustrative matrix for the default schema, restricted to the levels
    /// `schema` keeps. Not an expert-validated mapping.
    pub fn demo(schema: &CulturalSchema) -> Result<Self, MatrixError> {
        Self::parse(schema, DEMO_MATRIX.as_bytes(), true)
    }

    /// Constant matrix, mostly for tests.
    pub fn constant(schema: &CulturalSchema, value: u8) -> Self {
        assert!((LIKERT_MIN..=LIKERT_MAX).contains(&value));
        Self {
            variables: schema.variables().iter().map(|v| v.name.clone()).collect(),
            rows: schema
                .variables()
                .iter()
                .map(|v| vec![[value; 6]; v.levels.len()])
                .collect(),
        }
    }

    pub fn entry(&self, variable: usize, level: usize, f: Foundation) -> u8 {
        self.rows[variable][level][f.index()]
    }

    pub fn set_entry(&mut self, variable: usize, level: usize, f: Foundation, value: u8) {
        assert!((LIKERT_MIN..=LIKERT_MAX).contains(&value));
        self.rows[variable][level][f.index()] = value;
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn total_rows(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn variable_indices<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>, MoralError> {
        names
            .iter()
            .map(|n| {
                self.variables
                    .iter()
                    .position(|v| v == n.as_ref())
                    .ok_or_else(|| MoralError::UnknownVariable(n.as_ref().to_string()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MoralError {
    #[error("variable subset is empty")]
    EmptySubset,
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("variable index {0} out of range")]
    VariableIndex(usize),
    #[error("configuration has {got} variables, matrix has {expected}")]
    Arity { expected: usize, got: usize },
    #[error("level {level} of variable {variable} has no matrix row")]
    MissingRow { variable: usize, level: usize },
}

fn check_config(config: &CulturalConfiguration, matrix: &OracleMatrix) -> Result<(), MoralError> {
    let got = config.level_indices().len();
    if got != matrix.rows.len() {
        return Err(MoralError::Arity {
            expected: matrix.rows.len(),
            got,
        });
    }
    Ok(())
}

fn subset_mean(
    config: &CulturalConfiguration,
    matrix: &OracleMatrix,
    subset: &[usize],
    f: Foundation,
) -> Result<f64, MoralError> {
    if subset.is_empty() {
        return Err(MoralError::EmptySubset);
    }
    let mut sum = 0.0;
    for &v in subset {
        let row = matrix.rows.get(v).ok_or(MoralError::VariableIndex(v))?;
        let level = config.level_of(v);
        let entries = row.get(level).ok_or(MoralError::MissingRow { variable: v, level })?;
        sum += entries[f.index()] as f64;
    }
    Ok(sum / subset.len() as f64)
}

/// Mean matrix row over the persona's levels of the variables in `subset`
/// (schema indices). The full variable set gives the default profile.
pub fn mft_inferred_vector(
    config: &CulturalConfiguration,
    matrix: &OracleMatrix,
    subset: &[usize],
) -> Result<MoralVector, MoralError> {
    check_config(config, matrix)?;
    let mut out = [0.0; 6];
    for f in Foundation::ALL {
        out[f.index()] = subset_mean(config, matrix, subset, f)?;
    }
    Ok(MoralVector::from_array(config.id(), Origin::Mft, out))
}

/// Like [`mft_inferred_vector`] with a separate subset per foundation, e.g.
/// the selected core sets.
pub fn mft_core_set_vector(
    config: &CulturalConfiguration,
    matrix: &OracleMatrix,
    subsets: &BTreeMap<Foundation, Vec<usize>>,
) -> Result<MoralVector, MoralError> {
    check_config(config, matrix)?;
    let mut out = [0.0; 6];
    for f in Foundation::ALL {
        let subset = subsets.get(&f).map(Vec::as_slice).unwrap_or(&[]);
        out[f.index()] = subset_mean(config, matrix, subset, f)?;
    }
    Ok(MoralVector::from_array(config.id(), Origin::Mft, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn json(answers: &[u8]) -> String {
        let body: Vec<String> = answers
            .iter()
            .enumerate()
            .map(|(i, a)| format!("\"{}\": {a}", i + 1))
            .collect();
        format!("{{\"answers\": {{{}}}}}", body.join(", "))
    }

    #[test]
    fn bundled_partition() {
        let m = ItemMap::bundled();
        assert_eq!(m.foundation_of(1), Foundation::Care);
        assert_eq!(m.foundation_of(13), Foundation::Care);
        assert_eq!(m.foundation_of(36), Foundation::Purity);
        assert_eq!(m.foundation_of(8), Foundation::Equality);
        assert_eq!(MfqItems::placeholder().texts().len(), 36);
    }

    #[test]
    fn item_map_must_be_six_by_six() {
        let mut pairs: Vec<(u32, Foundation)> = (1..=36).map(|i| (i, Foundation::ALL[(i as usize - 1) % 6])).collect();
        pairs[0].1 = Foundation::Equality;
        assert!(matches!(ItemMap::new(&pairs), Err(ItemMapError::Unbalanced { .. })));
        pairs.pop();
        pairs[0].1 = Foundation::Care;
        assert_eq!(ItemMap::new(&pairs), Err(ItemMapError::Missing(36)));
        pairs.push((1, Foundation::Purity));
        assert_eq!(ItemMap::new(&pairs), Err(ItemMapError::Duplicate(1)));
    }

    #[test]
    fn constant_answers_give_constant_scores() {
        let a = parse_mfq_answers(&json(&[3; 36])).unwrap();
        assert_eq!(ItemMap::bundled().score(&a), [3.0; 6]);
    }

    #[test]
    fn care_mean_of_six() {
        let mut a = [1u8; 36];
        for (k, v) in [5, 5, 5, 4, 4, 4].into_iter().enumerate() {
            a[k * 6] = v;
        }
        assert_eq!(ItemMap::bundled().score(&a)[0], 4.5);
    }

    #[test]
    fn answer_parsing() {
        let mut a = [2u8; 36];
        a[35] = 5;
        assert_eq!(
            parse_mfq_answers(&format!("```json\n{}\n```", json(&a))).unwrap(),
            a.to_vec()
        );
        assert!(matches!(parse_mfq_answers(&json(&a[..35])), Err(MfqAnswerError::Missing(m)) if m == vec![36]));
        a[4] = 6;
        assert!(matches!(
            parse_mfq_answers(&json(&a)),
            Err(MfqAnswerError::OutOfRange { item: 5, .. })
        ));
        assert!(matches!(
            parse_mfq_answers("I would say 3"),
            Err(MfqAnswerError::NoJson)
        ));
        assert!(matches!(
            parse_mfq_answers("{\"answers\": {\"1\": 3,}}"),
            Err(MfqAnswerError::Json(_))
        ));
        assert!(matches!(
            parse_mfq_answers("{\"answers\": {\"37\": 3}}"),
            Err(MfqAnswerError::UnexpectedKey(_))
        ));
        assert!(matches!(
            parse_mfq_answers("{\"answers\": {\"1\": 2.5}}"),
            Err(MfqAnswerError::OutOfRange { item: 1, .. })
        ));
    }

    #[test]
    fn demo_matrix_covers_default_schema() {
        let s = CulturalSchema::default_schema();
        let m = OracleMatrix::demo(&s).unwrap();
        assert_eq!(m.total_rows(), 32);
        let r = s.variable_index("religiosity").unwrap();
        assert_eq!(m.entry(r, 0, Foundation::Purity), 5);
    }

    #[test]
    fn matrix_validation() {
        let s = CulturalSchema::default_schema();
        let header = "variable,level,care,equality,proportionality,loyalty,authority,purity\n";
        let short: String = DEMO_MATRIX.lines().take(32).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            OracleMatrix::from_csv(&s, short.as_bytes()),
            Err(MatrixError::MissingRow { .. })
        ));
        let bad = format!("{header}religiosity,very_important,6,1,1,1,1,1\n");
        assert!(matches!(
            OracleMatrix::from_csv(&s, bad.as_bytes()),
            Err(MatrixError::Entry { value: 6, .. })
        ));
        let dup = format!("{header}happiness,very_happy,1,1,1,1,1,1\nhappiness,very_happy,1,1,1,1,1,1\n");
        assert!(matches!(
            OracleMatrix::from_csv(&s, dup.as_bytes()),
            Err(MatrixError::Duplicate { line: 3, .. })
        ));
        let unk = format!("{header}happiness,ecstatic,1,1,1,1,1,1\n");
        assert!(matches!(
            OracleMatrix::from_csv(&s, unk.as_bytes()),
            Err(MatrixError::UnknownLevel { .. })
        ));
    }

    #[test]
    fn inferred_vector_examples() {
        let s = CulturalSchema::default_schema();
        let c = s.decode(ConfigId(12345)).unwrap();
        let five = OracleMatrix::constant(&s, 5);
        let all: Vec<usize> = (0..s.len()).collect();
        assert!(mft_inferred_vector(&c, &five, &all)
            .unwrap()
            .scores
            .values()
            .all(|&x| x == 5.0));

        let m = OracleMatrix::demo(&s).unwrap();
        let r = s.variable_index("religiosity").unwrap();
        let v = mft_inferred_vector(&c, &m, &[r]).unwrap();
        for f in Foundation::ALL {
            assert_eq!(v.get(f), m.entry(r, c.level_of(r), f) as f64);
        }

        let mut two = OracleMatrix::constant(&s, 1);
        two.set_entry(0, c.level_of(0), Foundation::Loyalty, 2);
        two.set_entry(1, c.level_of(1), Foundation::Loyalty, 4);
        assert_eq!(
            mft_inferred_vector(&c, &two, &[0, 1]).unwrap().get(Foundation::Loyalty),
            3.0
        );

        assert_eq!(mft_inferred_vector(&c, &m, &[]), Err(MoralError::EmptySubset));
        assert_eq!(mft_inferred_vector(&c, &m, &[10]), Err(MoralError::VariableIndex(10)));
    }

    #[test]
    fn core_set_vector_uses_per_foundation_subsets() {
        let s = CulturalSchema::default_schema();
        let m = OracleMatrix::demo(&s).unwrap();
        let c = s.decode(ConfigId(777)).unwrap();
        let r = s.variable_index("religiosity").unwrap();
        let all: Vec<usize> = (0..s.len()).collect();
        let mut subsets: BTreeMap<Foundation, Vec<usize>> =
            Foundation::ALL.into_iter().map(|f| (f, all.clone())).collect();
        subsets.insert(Foundation::Purity, vec![r]);
        let v = mft_core_set_vector(&c, &m, &subsets).unwrap();
        let d = mft_inferred_vector(&c, &m, &all).unwrap();
        assert_eq!(
            v.get(Foundation::Purity),
            m.entry(r, c.level_of(r), Foundation::Purity) as f64
        );
        assert_eq!(v.get(Foundation::Care), d.get(Foundation::Care));
        subsets.remove(&Foundation::Care);
        assert_eq!(mft_core_set_vector(&c, &m, &subsets), Err(MoralError::EmptySubset));
    }

    proptest! {
        #[test]
        fn scores_in_range_and_item_order_free(answers in proptest::collection::vec(1u8..=5, 36), seed in any::<u64>()) {
            let map = ItemMap::bundled();
            let s = map.score(&answers);
            prop_assert!(s.iter().all(|x| (1.0..=5.0).contains(x)));
            // rotate the items of one foundation among themselves
            let f = (seed % 6) as usize;
            let mut perm = answers.clone();
            let idx: Vec<usize> = (0..6).map(|k| f + 6 * k).collect();
            let shift = (seed / 6 % 6) as usize;
            for (k, &i) in idx.iter().enumerate() {
                perm[i] = answers[idx[(k + shift) % 6]];
            }
            prop_assert_eq!(map.score(&perm), s);
        }

        #[test]
        fn inferred_vector_subset_order_free(id in 0u64..93_312, mut subset in proptest::collection::btree_set(0usize..10, 1..10)) {
            let s = CulturalSchema::default_schema();
            let m = OracleMatrix::demo(&s).unwrap();
            let c = s.decode(ConfigId(id)).unwrap();
            let fwd: Vec<usize> = std::mem::take(&mut subset).into_iter().collect();
            let rev: Vec<usize> = fwd.iter().rev().copied().collect();
            let a = mft_inferred_vector(&c, &m, &fwd).unwrap();
            let b = mft_inferred_vector(&c, &m, &rev).unwrap();
            for f in Foundation::ALL {
                prop_assert!((a.get(f) - b.get(f)).abs() < 1e-12);
                prop_assert!((1.0..=5.0).contains(&a.get(f)));
            }
        }
    }
}
