//! Cultural-map coordinates: indicator elicitation, standardized PCA with
//! varimax rotation, and the fixed affine rescale onto the map axes.

mod factor;

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cultural_space::ConfigId;
use crate::elicit::ask_with_repair;
use crate::llm_gateway::{ChatRequest, Gateway, GatewayError, RequestClass};
use crate::persona_forge::{PersonaProfile, RecordStatus};

pub use factor::{
    pca_varimax, rescale_to_iw, standardize, varimax, varimax_criterion, FactorError, Factorization, Standardized,
    IW_OFFSET, IW_SCALE,
};

const BUNDLED_INDICATORS: &str = include_str!("../../data/indicators.toml");

/// Indicator that fixes the sign and identity of the horizontal component.
pub const PC1_ANCHOR: &str = "justif_homosexuality";
/// Indicator that fixes the sign of the vertical component (loads negative).
pub const PC2_ANCHOR: &str = "importance_god";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Indicator {
    pub name: String,
    pub question: String,
    pub scale: String,
    pub min: i64,
    pub max: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSchema {
    #[serde(rename = "indicator")]
    pub indicators: Vec<Indicator>,
}

#[derive(Debug, Error)]
pub enum IndicatorSchemaError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("indicator file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("indicator `{0}` listed twice")]
    Duplicate(String),
    #[error("indicator `{0}` has min >= max")]
    EmptyScale(String),
    #[error("indicator battery must contain `{0}`")]
    MissingAnchor(&'static str),
}

impl IndicatorSchema {
    pub fn bundled() -> Self {
        Self::from_toml_str(BUNDLED_INDICATORS).expect("bundled indicator file is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, IndicatorSchemaError> {
        let schema: Self = toml::from_str(text)?;
        let mut seen = std::collections::BTreeSet::new();
        for ind in &schema.indicators {
            if !seen.insert(ind.name.as_str()) {
                return Err(IndicatorSchemaError::Duplicate(ind.name.clone()));
            }
            if ind.min >= ind.max {
                return Err(IndicatorSchemaError::EmptyScale(ind.name.clone()));
            }
        }
        for anchor in [PC1_ANCHOR, PC2_ANCHOR] {
            if !seen.contains(anchor) {
                return Err(IndicatorSchemaError::MissingAnchor(anchor));
            }
        }
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, IndicatorSchemaError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.indicators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicators.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.indicators.iter().map(|i| i.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.indicators.iter().position(|i| i.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorVector {
    pub config_id: ConfigId,
    pub values: BTreeMap<String, f64>,
}

impl IndicatorVector {
    /// Values in battery order; `None` if any indicator is missing.
    pub fn row(&self, schema: &IndicatorSchema) -> Option<Vec<f64>> {
        schema
            .indicators
            .iter()
            .map(|i| self.values.get(&i.name).copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnswerError {
    #[error("expected {expected} answers, found {found}")]
    Count { expected: usize, found: usize },
    #[error("answer {value} to `{indicator}` outside [{min}, {max}]")]
    OutOfScale {
        indicator: String,
        value: i64,
        min: i64,
        max: i64,
    },
}

/// Persisted elicitation outcome; failed records are excluded from projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorRecord {
    pub config_id: ConfigId,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: u32,
    pub raw_text: String,
}

impl IndicatorRecord {
    pub fn vector(&self) -> Option<IndicatorVector> {
        match (self.status, &self.values) {
            (RecordStatus::Ok, Some(values)) => Some(IndicatorVector {
                config_id: self.config_id,
                values: values.clone(),
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IWPoint {
    pub config_id: ConfigId,
    pub pc1: f64,
    pub pc2: f64,
    pub z1: f64,
    pub z2: f64,
}

impl IWPoint {
    pub fn new(config_id: ConfigId, pc1: f64, pc2: f64) -> Self {
        let (z1, z2) = rescale_to_iw(pc1, pc2);
        Self {
            config_id,
            pc1,
            pc2,
            z1,
            z2,
        }
    }
}

/// Sign and order adjustments applied after rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SignOrientation {
    pub swapped: bool,
    pub flipped_pc1: bool,
    pub flipped_pc2: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub indicators: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Indicators with zero variance; standardized to all zeros.
    pub degenerate: Vec<String>,
    /// All eigenvalues of the correlation matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// Rows follow `indicators`; columns are (PC1, PC2).
    pub rotated_loadings: Vec<[f64; 2]>,
    /// Rotated orthonormal component directions, same layout as the loadings.
    pub rotated_axes: Vec<[f64; 2]>,
    pub variance_explained: [f64; 2],
    pub unrotated_variance_explained: [f64; 2],
    pub orientation: SignOrientation,
    pub varimax_sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IwProjection {
    pub model: FactorModel,
    pub points: Vec<IWPoint>,
}

pub const IVS_SYSTEM: &str = "You are given a detailed persona profile describing a person's \
background, attitudes, and values. Assume the role of this person when answering the following \
questions.";

pub fn render_ivs_system(persona: &PersonaProfile) -> String {
    format!("{IVS_SYSTEM}\n\nPersona profile:\n{}", persona.raw_text.trim())
}

pub fn render_ivs_prompt(schema: &IndicatorSchema) -> String {
    let mut out = String::from(
        "Task:\nAnswer the following questions as this person would, selecting the option that \
         best reflects their beliefs and attitudes. Each question corresponds to a cultural value \
         indicator used in the Inglehart-Welzel cultural map.\n\nQuestions:\n",
    );
    for (i, ind) in schema.indicators.iter().enumerate() {
        out.push_str(&format!("{}. {} ({})\n", i + 1, ind.question, ind.scale));
    }
    out.push_str(
        "\nOutput format:\nProvide one answer per question, following the original WVS response \
         scales (e.g., binary choices, Likert-type scales, or 1-10 justifiability ratings). Do not \
         include explanations or additional text.\n",
    );
    out
}

fn strip_marker(line: &str) -> &str {
    let s = line.trim().trim_start_matches(['*', '#', '>', '•']).trim_start();
    let s = s
        .strip_prefix(['Q', 'q'])
        .filter(|r| r.starts_with(|c: char| c.is_ascii_digit()))
        .unwrap_or(s);
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        if let Some(rest) = s[digits..].strip_prefix(['.', ')', ':']) {
            return rest.trim_start();
        }
    }
    s
}

fn first_integer(s: &str) -> Option<i64> {
    let chars: Vec<(usize, char)> = s.char_indices().collect();
    let k = chars.iter().position(|(_, c)| c.is_ascii_digit())?;
    let i = chars[k].0;
    let end = s[i..].find(|c: char| !c.is_ascii_digit()).map_or(s.len(), |e| i + e);
    let v: i64 = s[i..end].parse().ok()?;
    let neg = k > 0 && matches!(chars[k - 1].1, '-' | '−');
    Some(if neg { -v } else { v })
}

/// One integer per line (after any numbering); a single line of separated
/// integers is also accepted.
pub fn parse_ivs_answers(schema: &IndicatorSchema, text: &str) -> Result<BTreeMap<String, f64>, AnswerError> {
    let per_line: Vec<i64> = text.lines().filter_map(|l| first_integer(strip_marker(l))).collect();
    let answers = if per_line.len() == schema.len() {
        per_line
    } else {
        let inline: Vec<i64> = text
            .replace('−', "-")
            .split(|c: char| c.is_whitespace() || matches!(c, ',' | ';'))
            .filter_map(|tok| {
                let tok = tok.trim_matches(|c: char| !(c.is_ascii_digit() || c == '-'));
                tok.parse::<i64>().ok()
            })
            .collect();
        if inline.len() == schema.len() && text.lines().filter(|l| !l.trim().is_empty()).count() == 1 {
            inline
        } else {
            return Err(AnswerError::Count {
                expected: schema.len(),
                found: per_line.len(),
            });
        }
    };
    let mut out = BTreeMap::new();
    for (ind, &v) in schema.indicators.iter().zip(&answers) {
        if v < ind.min || v > ind.max {
            return Err(AnswerError::OutOfScale {
                indicator: ind.name.clone(),
                value: v,
                min: ind.min,
                max: ind.max,
            });
        }
        out.insert(ind.name.clone(), v as f64);
    }
    Ok(out)
}

fn ivs_repair(err: &AnswerError, schema: &IndicatorSchema) -> String {
    format!(
        "Your previous answer could not be used ({err}). Reply with exactly {} lines, one per \
         question in order, each containing only the integer answer within the stated scale.",
        schema.len()
    )
}

pub fn elicit_indicators(
    persona: &PersonaProfile,
    schema: &IndicatorSchema,
    gateway: &Gateway,
    max_reasks: u32,
) -> Result<IndicatorRecord, GatewayError> {
    let req = gateway
        .prepare(ChatRequest::new(render_ivs_system(persona), render_ivs_prompt(schema)))
        .with_context(RequestClass::Ivs, persona.config_id, None);
    let asked = ask_with_repair(
        gateway,
        &req,
        max_reasks,
        |t| parse_ivs_answers(schema, t),
        |e| ivs_repair(e, schema),
    )?;
    Ok(match asked.result {
        Ok(values) => IndicatorRecord {
            config_id: persona.config_id,
            status: RecordStatus::Ok,
            values: Some(values),
            error: None,
            attempts: asked.attempts,
            raw_text: asked.last_text,
        },
        Err(e) => IndicatorRecord {
            config_id: persona.config_id,
            status: RecordStatus::Failed,
            values: None,
            error: Some(e),
            attempts: asked.attempts,
            raw_text: asked.last_text,
        },
    })
}

/// Fits the two-factor model on the persona responses and projects every
/// persona. Vectors are taken in the given order.
pub fn project(schema: &IndicatorSchema, vectors: &[IndicatorVector]) -> Result<IwProjection, FactorError> {
    let rows: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.row(schema).ok_or(FactorError::MissingValues(v.config_id)))
        .collect::<Result<_, _>>()?;
    let std = standardize(&rows)?;
    let fact = pca_varimax(&std.data, 2)?;
    let a1 = schema.index_of(PC1_ANCHOR).expect("validated anchor");
    let a2 = schema.index_of(PC2_ANCHOR).expect("validated anchor");

    let p = schema.len();
    let mut load: Vec<[f64; 2]> = (0..p).map(|i| [fact.loadings[(i, 0)], fact.loadings[(i, 1)]]).collect();
    let mut axes: Vec<[f64; 2]> = (0..p).map(|i| [fact.axes[(i, 0)], fact.axes[(i, 1)]]).collect();
    let mut scores: Vec<[f64; 2]> = (0..rows.len())
        .map(|r| [fact.scores[(r, 0)], fact.scores[(r, 1)]])
        .collect();
    let mut var = [fact.variance_explained[0], fact.variance_explained[1]];
    let mut orient = SignOrientation::default();

    if load[a1][1].abs() > load[a1][0].abs() {
        orient.swapped = true;
        for row in load.iter_mut().chain(axes.iter_mut()).chain(scores.iter_mut()) {
            row.swap(0, 1);
        }
        var.swap(0, 1);
    }
    orient.flipped_pc1 = load[a1][0] < 0.0;
    orient.flipped_pc2 = load[a2][1] > 0.0;
    for row in load.iter_mut().chain(axes.iter_mut()).chain(scores.iter_mut()) {
        if orient.flipped_pc1 {
            row[0] = -row[0];
        }
        if orient.flipped_pc2 {
            row[1] = -row[1];
        }
    }

    let points = vectors
        .iter()
        .zip(&scores)
        .map(|(v, s)| IWPoint::new(v.config_id, s[0], s[1]))
        .collect();
    let degenerate = schema
        .indicators
        .iter()
        .zip(&std.degenerate)
        .filter(|(_, &d)| d)
        .map(|(i, _)| i.name.clone())
        .collect();
    Ok(IwProjection {
        model: FactorModel {
            indicators: schema.names().into_iter().map(String::from).collect(),
            means: std.means,
            stds: std.stds,
            degenerate,
            eigenvalues: fact.eigenvalues.clone(),
            rotated_loadings: load,
            rotated_axes: axes,
            variance_explained: var,
            unrotated_variance_explained: [fact.eigenvalues[0] / p as f64, fact.eigenvalues[1] / p as f64],
            orientation: orient,
            varimax_sweeps: fact.sweeps,
        },
        points,
    })
}

pub fn write_points_csv(path: &Path, points: &[IWPoint]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryPoint {
    pub country: String,
    pub z1: f64,
    pub z2: f64,
}

/// Optional externally sourced overlay with header `country,z1,z2`.
pub fn load_overlay(path: &Path) -> Result<Vec<CountryPoint>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}
