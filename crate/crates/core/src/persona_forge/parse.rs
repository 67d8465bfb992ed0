use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cultural_space::{ConfigId, CulturalSchema};

use super::{PersonaMetadata, PersonaProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeBounds {
    pub min: u32,
    pub max: u32,
}

impl Default for AgeBounds {
    fn default() -> Self {
        Self { min: 15, max: 100 }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("missing section: {0}")]
    MissingSection(&'static str),
    #[error("missing metadata field: {0}")]
    MissingField(&'static str),
    #[error("unreadable age `{0}`")]
    InvalidAge(String),
    #[error("age {age} outside [{min}, {max}]")]
    AgeOutOfBounds { age: u32, min: u32, max: u32 },
    #[error("cultural variable mapping lacks entries for: {0}")]
    MissingMapping(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Metadata,
    Bio,
    Mapping,
}

/// Strips list markers, numbering and emphasis from the start of a line and
/// all `**`/`__` emphasis elsewhere.
fn clean_line(line: &str) -> String {
    let mut s = line.replace("**", "").replace("__", "");
    loop {
        let trimmed = s.trim_start();
        let stripped = trimmed
            .trim_start_matches(['#', '*', '-', '•', '>', '_', '–'])
            .trim_start();
        let stripped = strip_numbering(stripped);
        if stripped.len() == s.len() {
            break;
        }
        s = stripped.to_string();
    }
    s.trim().to_string()
}

fn strip_numbering(s: &str) -> &str {
    let inner = s.strip_prefix('(').unwrap_or(s);
    let digits = inner.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return s;
    }
    let rest = &inner[digits..];
    match rest.chars().next() {
        Some('.' | ')' | ':') => rest[1..].trim_start(),
        _ => s,
    }
}

/// Lowercases and folds `_`/`-` to spaces for label matching.
fn fold(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            '_' | '-' | '–' | '—' => ' ',
            c => c.to_ascii_lowercase(),
        })
        .collect()
}

fn heading(line: &str) -> Option<(Section, String)> {
    const HEADINGS: [(&str, Section); 8] = [
        ("profile metadata", Section::Metadata),
        ("metadata", Section::Metadata),
        ("short bio", Section::Bio),
        ("biography", Section::Bio),
        ("bio", Section::Bio),
        ("cultural variable mapping", Section::Mapping),
        ("cultural mapping", Section::Mapping),
        ("variable mapping", Section::Mapping),
    ];
    let lower = line.to_lowercase();
    for (head, section) in HEADINGS {
        if let Some(rest) = lower.strip_prefix(head) {
            // reject prefixes of longer words ("biology", "metadata-driven")
            if rest.chars().next().is_some_and(|c| c.is_alphanumeric() || c == '-') {
                continue;
            }
            let tail =
                line[head.len()..].trim_start_matches(|c: char| c == ':' || c == '-' || c == '–' || c.is_whitespace());
            return Some((section, tail.trim().to_string()));
        }
    }
    None
}

fn split_field(line: &str) -> Option<(String, String)> {
    let (key, value) = line.split_once(':')?;
    Some((key.trim().to_lowercase(), value.trim().to_string()))
}

pub fn parse_age(value: &str) -> Option<u32> {
    if let Some(digits) = value.split(|c: char| !c.is_ascii_digit()).find(|s| !s.is_empty()) {
        return digits.parse().ok();
    }
    parse_number_words(value)
}

fn parse_number_words(value: &str) -> Option<u32> {
    const UNITS: [&str; 20] = [
        "zero",
        "one",
        "two",
        "three",
        "four",
        "five",
        "six",
        "seven",
        "eight",
        "nine",
        "ten",
        "eleven",
        "twelve",
        "thirteen",
        "fourteen",
        "fifteen",
        "sixteen",
        "seventeen",
        "eighteen",
        "nineteen",
    ];
    const TENS: [&str; 8] = [
        "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
    ];
    let mut total = None;
    for word in value
        .to_lowercase()
        .split(|c: char| !c.is_ascii_alphabetic())
        .filter(|w| !w.is_empty())
    {
        if let Some(t) = TENS.iter().position(|&t| t == word) {
            if total.is_some() {
                break;
            }
            total = Some(20 + 10 * t as u32);
        } else if let Some(u) = UNITS.iter().position(|&u| u == word) {
            let u = u as u32;
            total = match total {
                None => Some(u),
                Some(t) if t >= 20 && t % 10 == 0 && (1..10).contains(&u) => Some(t + u),
                Some(_) => break,
            };
            if u >= 10 || total.is_some_and(|t| t % 10 != 0) {
                break;
            }
        } else if word == "hundred" {
            total = Some(total.unwrap_or(1) * 100);
            break;
        } else if total.is_some() {
            break;
        }
    }
    total
}

/// Parses a generated persona. Sections may come in any order; all three
/// must be present and the mapping must cover every schema variable.
pub fn parse_persona(
    schema: &CulturalSchema,
    config_id: ConfigId,
    raw_text: &str,
    bounds: AgeBounds,
) -> Result<PersonaProfile, ParseError> {
    let mut section = None;
    let mut seen = [false; 3];
    let mut fields: BTreeMap<&'static str, String> = BTreeMap::new();
    let mut bio_lines: Vec<String> = Vec::new();
    let mut mapping: BTreeMap<usize, String> = BTreeMap::new();
    let mut current_var: Option<usize> = None;

    // candidate spellings per variable, longest first so "social trust" wins over "trust"
    let mut spellings: Vec<(String, usize)> = Vec::new();
    for (i, var) in schema.variables().iter().enumerate() {
        for s in std::iter::once(&var.label)
            .chain(std::iter::once(&var.name))
            .chain(&var.aliases)
        {
            spellings.push((fold(s), i));
        }
    }
    spellings.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));

    for raw in raw_text.lines() {
        let line = clean_line(raw);
        if line.is_empty() {
            continue;
        }
        if let Some((sec, tail)) = heading(&line) {
            section = Some(sec);
            seen[sec as usize] = true;
            current_var = None;
            if tail.is_empty() {
                continue;
            }
            absorb_line(
                sec,
                &tail,
                &mut fields,
                &mut bio_lines,
                &mut mapping,
                &mut current_var,
                &spellings,
            );
            continue;
        }
        if let Some(sec) = section {
            absorb_line(
                sec,
                &line,
                &mut fields,
                &mut bio_lines,
                &mut mapping,
                &mut current_var,
                &spellings,
            );
        }
    }

    if !seen[Section::Metadata as usize] {
        return Err(ParseError::MissingSection("profile metadata"));
    }
    if !seen[Section::Bio as usize] {
        return Err(ParseError::MissingSection("short bio"));
    }
    if !seen[Section::Mapping as usize] {
        return Err(ParseError::MissingSection("cultural variable mapping"));
    }

    let take = |key: &'static str, fields: &mut BTreeMap<&'static str, String>| {
        fields
            .remove(key)
            .filter(|v| !v.is_empty())
            .ok_or(ParseError::MissingField(key))
    };
    let name = take("name", &mut fields)?;
    let age_raw = take("age", &mut fields)?;
    let age = parse_age(&age_raw).ok_or(ParseError::InvalidAge(age_raw))?;
    if age < bounds.min || age > bounds.max {
        return Err(ParseError::AgeOutOfBounds {
            age,
            min: bounds.min,
            max: bounds.max,
        });
    }
    let occupation_raw = take("occupation", &mut fields)?;
    let country_region = take("country/region", &mut fields)?;
    let gender_label = fields
        .remove("gender")
        .filter(|g| !g.is_empty())
        .unwrap_or_else(|| "unspecified".to_string());

    let bio = bio_lines.join(" ");
    if bio.is_empty() {
        return Err(ParseError::MissingSection("short bio"));
    }

    let missing: Vec<&str> = schema
        .variables()
        .iter()
        .enumerate()
        .filter(|(i, _)| mapping.get(i).is_none_or(|t| t.trim().is_empty()))
        .map(|(_, v)| v.name.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(ParseError::MissingMapping(missing.join(", ")));
    }

    Ok(PersonaProfile {
        config_id,
        metadata: PersonaMetadata {
            name,
            age,
            gender_label,
            occupation_raw,
            country_region,
        },
        bio,
        variable_mapping: mapping
            .into_iter()
            .map(|(i, text)| (schema.variables()[i].name.clone(), text))
            .collect(),
        raw_text: raw_text.to_string(),
    })
}

fn absorb_line(
    section: Section,
    line: &str,
    fields: &mut BTreeMap<&'static str, String>,
    bio: &mut Vec<String>,
    mapping: &mut BTreeMap<usize, String>,
    current: &mut Option<usize>,
    spellings: &[(String, usize)],
) {
    match section {
        Section::Metadata => {
            let Some((key, value)) = split_field(line) else {
                return;
            };
            let slot = match key.as_str() {
                "name" | "full name" => "name",
                "age" => "age",
                "gender" | "gender (optional)" | "sex" => "gender",
                "occupation" | "profession" | "job" => "occupation",
                "country/region" | "country / region" | "country" | "region" | "location" | "country or region" => {
                    "country/region"
                }
                _ => return,
            };
            fields.entry(slot).or_insert(value);
        }
        Section::Bio => bio.push(line.to_string()),
        Section::Mapping => {
            let folded = fold(line);
            let hit = spellings.iter().find(|(s, _)| {
                folded.starts_with(s.as_str()) && !folded[s.len()..].starts_with(|c: char| c.is_alphanumeric())
            });
            match hit {
                Some((spelling, var)) => {
                    // fold() maps chars one-to-one, so skip by char count
                    let cut = line
                        .char_indices()
                        .nth(spelling.chars().count())
                        .map_or(line.len(), |(i, _)| i);
                    let text = mapping_text(&line[cut..]);
                    *current = Some(*var);
                    append(mapping.entry(*var).or_default(), text);
                }
                None => {
                    if let Some(var) = current {
                        append(mapping.entry(*var).or_default(), line);
                    }
                }
            }
        }
    }
}

/// Text after the variable name: skips a parenthesized level and separators.
fn mapping_text(rest: &str) -> &str {
    let mut rest = rest.trim_start();
    if rest.starts_with('(') {
        if let Some(end) = rest.find(')') {
            rest = &rest[end + 1..];
        }
    }
    rest.trim_start_matches(|c: char| matches!(c, ':' | '-' | '–' | '—' | '.') || c.is_whitespace())
}

fn append(buf: &mut String, text: &str) {
    let text = text.trim();
    if text.is_empty() {
        return;
    }
    if !buf.is_empty() {
        buf.push(' ');
    }
    buf.push_str(text);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persona_forge::tests::FIXTURE;

    fn parse(text: &str) -> Result<PersonaProfile, ParseError> {
        parse_persona(
            &CulturalSchema::default_schema(),
            ConfigId(0),
            text,
            AgeBounds::default(),
        )
    }

    #[test]
    fn fixture_parses_fully() {
        let p = parse(FIXTURE).unwrap();
        assert_eq!(p.metadata.name, "Amara Okafor");
        assert_eq!(p.metadata.age, 34);
        assert_eq!(p.metadata.gender_label, "Woman");
        assert_eq!(p.metadata.occupation_raw, "Secondary school teacher");
        assert_eq!(p.metadata.country_region, "Nigeria");
        assert!(p.bio.starts_with("Amara teaches mathematics"));
        assert!(p.bio.ends_with("savings circle."));
        assert_eq!(p.variable_mapping.len(), 10);
        assert!(p.variable_mapping["social_trust"].starts_with("She lends money"));
        assert!(p.variable_mapping["tolerance_diversity"].contains("migrants"));
    }

    #[test]
    fn parse_is_idempotent() {
        let p = parse(FIXTURE).unwrap();
        assert_eq!(parse(&p.raw_text).unwrap(), p);
    }

    #[test]
    fn sections_in_other_order_are_accepted() {
        let meta_end = FIXTURE.find("**2. Short bio").unwrap();
        let bio_end = FIXTURE.find("**3. Cultural").unwrap();
        let reordered = format!(
            "{}\n{}\n{}",
            &FIXTURE[bio_end..],
            &FIXTURE[meta_end..bio_end],
            &FIXTURE[..meta_end]
        );
        assert_eq!(
            parse(&reordered).unwrap().variable_mapping,
            parse(FIXTURE).unwrap().variable_mapping
        );
    }

    #[test]
    fn plain_headings_and_snake_case_names() {
        let text = "Profile metadata:\nName: Jan\nAge: 41\nOccupation: farmer\nCountry: Poland\n\
                    Short bio: Jan farms rye.\nCultural variable mapping:\n"
            .to_string()
            + &CulturalSchema::default_schema()
                .variables()
                .iter()
                .map(|v| format!("- {} - reflects in daily life.\n", v.name))
                .collect::<String>();
        let p = parse(&text).unwrap();
        assert_eq!(p.metadata.gender_label, "unspecified");
        assert_eq!(p.bio, "Jan farms rye.");
        assert_eq!(p.variable_mapping["child_rearing_value"], "reflects in daily life.");
    }

    #[test]
    fn missing_mapping_section_is_an_error() {
        let cut = FIXTURE.split("**3. Cultural").next().unwrap();
        assert_eq!(parse(cut), Err(ParseError::MissingSection("cultural variable mapping")));
    }

    #[test]
    fn incomplete_mapping_is_an_error() {
        let cut: String = FIXTURE
            .lines()
            .filter(|l| !l.contains("Happiness"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert_eq!(parse(&cut), Err(ParseError::MissingMapping("happiness".into())));
    }

    #[test]
    fn age_in_words_uses_fallback() {
        let text = FIXTURE.replace("**Age:** 34", "**Age:** thirty-four");
        assert_eq!(parse(&text).unwrap().metadata.age, 34);
        let text = FIXTURE.replace("**Age:** 34", "**Age:** unknown");
        assert!(matches!(parse(&text), Err(ParseError::InvalidAge(_))));
        let text = FIXTURE.replace("**Age:** 34", "**Age:** 7");
        assert!(matches!(parse(&text), Err(ParseError::AgeOutOfBounds { .. })));
    }

    #[test]
    fn number_word_table() {
        for (text, want) in [
            ("thirty-four", Some(34)),
            ("Thirty four years old", Some(34)),
            ("forty", Some(40)),
            ("nineteen", Some(19)),
            ("sixty-nine", Some(69)),
            ("mid 30s", Some(30)),
            ("about 52 years", Some(52)),
            ("old", None),
        ] {
            assert_eq!(parse_age(text), want, "{text}");
        }
    }
}
