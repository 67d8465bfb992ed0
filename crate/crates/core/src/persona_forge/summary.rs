use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tokenize::count_tokens;
use super::PersonaProfile;

const OCCUPATION_TABLE: &str = include_str!("../../data/occupation_macros.toml");

pub const GENDER_WOMAN: &str = "Woman";
pub const GENDER_MAN: &str = "Man";
pub const GENDER_NON_BINARY: &str = "Non-binary / gender-neutral";
pub const GENDER_AGENDER: &str = "Agender";
pub const GENDER_GENDERQUEER: &str = "Genderqueer";
pub const GENDER_OTHER: &str = "Unspecified / prefer not to say / Other";

/// Buckets a free-form gender label into the fixed label set.
pub fn normalize_gender(raw: &str) -> &'static str {
    let lower = raw.to_lowercase();
    if lower.contains("non-binary")
        || lower.contains("nonbinary")
        || lower.contains("non binary")
        || lower.contains("gender-neutral")
        || lower.contains("gender neutral")
    {
        return GENDER_NON_BINARY;
    }
    if lower.contains("genderqueer") {
        return GENDER_GENDERQUEER;
    }
    if lower.contains("agender") {
        return GENDER_AGENDER;
    }
    let first = lower
        .split(|c: char| !c.is_alphabetic())
        .find(|w| !w.is_empty())
        .unwrap_or("");
    match first {
        "woman" | "female" | "f" | "w" | "girl" | "lady" => GENDER_WOMAN,
        "man" | "male" | "m" | "boy" => GENDER_MAN,
        "trans" | "transgender" => match lower.split_whitespace().nth(1) {
            Some("woman" | "female") => GENDER_WOMAN,
            Some("man" | "male") => GENDER_MAN,
            _ => GENDER_OTHER,
        },
        _ => GENDER_OTHER,
    }
}

/// Decade band label, e.g. 34 -> "30-39".
pub fn age_band(age: u32) -> String {
    let lo = age / 10 * 10;
    format!("{}-{}", lo, lo + 9)
}

#[derive(Debug, Deserialize)]
struct MacroEntry {
    name: String,
    keywords: Vec<String>,
}

#[derive(Debug, Deserialize)]
pub struct OccupationTable {
    fallback: String,
    #[serde(rename = "macro")]
    macros: Vec<MacroEntry>,
}

impl OccupationTable {
    pub fn bundled() -> Self {
        toml::from_str(OCCUPATION_TABLE).expect("bundled occupation table is valid")
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.macros
            .iter()
            .map(|m| m.name.as_str())
            .chain(std::iter::once(self.fallback.as_str()))
    }

    /// Total: unmatched strings map to the fallback category.
    pub fn classify(&self, occupation: &str) -> &str {
        let lower = occupation.to_lowercase();
        for entry in &self.macros {
            if entry.keywords.iter().any(|k| keyword_matches(&lower, k)) {
                return &entry.name;
            }
        }
        &self.fallback
    }
}

/// Keyword occurs at a word start; keywords of three letters or fewer must
/// match a whole word.
fn keyword_matches(text: &str, keyword: &str) -> bool {
    let whole = keyword.len() <= 3;
    let mut from = 0;
    while let Some(pos) = text[from..].find(keyword) {
        let start = from + pos;
        let end = start + keyword.len();
        let before_ok = text[..start].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = !whole || text[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        from = start + keyword.chars().next().map_or(1, char::len_utf8);
    }
    false
}

pub fn occupation_macro<'t>(table: &'t OccupationTable, occupation: &str) -> &'t str {
    table.classify(occupation)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LexicalStat {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl LexicalStat {
    fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LexicalStats {
    pub chars: LexicalStat,
    pub words: LexicalStat,
    pub tokens: LexicalStat,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DemographicSummary {
    pub persona_count: usize,
    pub gender_shares: BTreeMap<String, f64>,
    pub age_band_shares: BTreeMap<String, f64>,
    pub occupation_macro_shares: BTreeMap<String, f64>,
    pub country_shares: BTreeMap<String, f64>,
    pub lexical_stats: LexicalStats,
}

fn shares(counts: BTreeMap<String, usize>, n: usize) -> BTreeMap<String, f64> {
    counts.into_iter().map(|(k, c)| (k, c as f64 / n as f64)).collect()
}

/// Bio followed by the mapping entries in variable-name order.
pub fn profile_text(p: &PersonaProfile) -> String {
    let mut text = p.bio.clone();
    for entry in p.variable_mapping.values() {
        text.push('\n');
        text.push_str(entry);
    }
    text
}

pub fn demographic_summary(personas: &[PersonaProfile], table: &OccupationTable) -> DemographicSummary {
    let n = personas.len();
    if n == 0 {
        return DemographicSummary::default();
    }
    let mut gender = BTreeMap::new();
    let mut bands = BTreeMap::new();
    let mut macros = BTreeMap::new();
    let mut countries = BTreeMap::new();
    let (mut chars, mut words, mut tokens) = (Vec::new(), Vec::new(), Vec::new());
    for p in personas {
        *gender
            .entry(normalize_gender(&p.metadata.gender_label).to_string())
            .or_insert(0) += 1;
        *bands.entry(age_band(p.metadata.age)).or_insert(0) += 1;
        *macros
            .entry(table.classify(&p.metadata.occupation_raw).to_string())
            .or_insert(0) += 1;
        *countries
            .entry(p.metadata.country_region.trim().to_string())
            .or_insert(0) += 1;
        let text = profile_text(p);
        chars.push(text.chars().count() as f64);
        words.push(text.split_whitespace().count() as f64);
        tokens.push(count_tokens(&text) as f64);
    }
    DemographicSummary {
        persona_count: n,
        gender_shares: shares(gender, n),
        age_band_shares: shares(bands, n),
        occupation_macro_shares: shares(macros, n),
        country_shares: shares(countries, n),
        lexical_stats: LexicalStats {
            chars: LexicalStat::of(&chars),
            words: LexicalStat::of(&words),
            tokens: LexicalStat::of(&tokens),
        },
    }
}
