//! Probe-survey elicitation per persona, grouping by self-reported
//! demographic triple, and distributional alignment against human reference
//! distributions.

mod align;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cultural_space::ConfigId;
use crate::elicit::ask_with_repair;
use crate::llm_gateway::{ChatRequest, Gateway, GatewayError, RequestClass};
use crate::persona_forge::{PersonaProfile, RecordStatus};

pub use align::{
    alignment_report, build_group_distributions, emd, load_reference, write_group_table, write_summary_table,
    write_top_groups_table, Aggregate, AlignmentReport, CategoricalDistribution, DistributionError, Emd,
    GroupAlignment, GroupDistributions, PairEmd, ReferenceError, ReferenceSet, HIGH_ALIGNMENT, MODERATE_ALIGNMENT,
};

const BUNDLED_BANK: &str = include_str!("../../data/wvb_probe_bank.toml");

macro_rules! closed_options {
    ($name:ident { $($variant:ident => $label:literal, $code:literal;)+ }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $label)] $variant,)+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn label(self) -> &'static str {
                match self { $($name::$variant => $label,)+ }
            }

            /// Short code used in compact group names.
            pub fn code(self) -> &'static str {
                match self { $($name::$variant => $code,)+ }
            }

            pub fn parse(s: &str) -> Option<Self> {
                let s = s.trim().trim_matches(|c: char| "\"'`[]().,;*".contains(c)).trim();
                Self::ALL.iter().copied().find(|o| o.label().eq_ignore_ascii_case(s))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }
    };
}

closed_options!(Continent {
    Africa => "Africa", "AF";
    Asia => "Asia", "AS";
    Europe => "Europe", "E";
    NorthAmerica => "North America", "N-A";
    SouthAmerica => "South America", "S-A";
    Oceania => "Oceania", "OC";
});

closed_options!(ResidentialArea {
    Urban => "Urban", "U";
    Rural => "Rural", "R";
});

closed_options!(Education {
    Primary => "Primary or No Education", "P";
    LowerSecondary => "Lower Secondary", "LS";
    UpperSecondary => "Upper to Post Secondary", "UPS";
    Tertiary => "Tertiary", "T";
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DemographicTriple {
    pub continent: Continent,
    pub residential_area: ResidentialArea,
    pub education: Education,
}

impl DemographicTriple {
    pub fn all() -> impl Iterator<Item = DemographicTriple> {
        Continent::ALL.iter().flat_map(|&c| {
            ResidentialArea::ALL.iter().flat_map(move |&r| {
                Education::ALL.iter().map(move |&e| DemographicTriple {
                    continent: c,
                    residential_area: r,
                    education: e,
                })
            })
        })
    }

    /// `(E | U | T)` style name.
    pub fn code(&self) -> String {
        format!(
            "({} | {} | {})",
            self.continent.code(),
            self.residential_area.code(),
            self.education.code()
        )
    }
}

impl fmt::Display for DemographicTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.continent, self.residential_area, self.education)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TripleError {
    #[error("no `{0}` line in the demographic reply")]
    MissingField(&'static str),
    #[error("`{value}` is not a valid {field} option")]
    InvalidOption { field: &'static str, value: String },
}

const FIELD_KEYS: [(&str, &[&str]); 3] = [
    ("continent", &["continent", "region"]),
    (
        "residential area",
        &["residential area", "residential", "area", "settlement"],
    ),
    ("education", &["education", "education level"]),
];

/// Reads `Key: value` lines; keys and options match case-insensitively.
pub fn parse_triple(text: &str) -> Result<DemographicTriple, TripleError> {
    let mut values: [Option<String>; 3] = [None, None, None];
    for line in text.lines() {
        let line = line
            .trim()
            .trim_start_matches(['-', '–', '*', '•', ' '])
            .replace("**", "");
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim().to_lowercase();
        for (slot, (_, keys)) in FIELD_KEYS.iter().enumerate() {
            if values[slot].is_none() && keys.contains(&key.as_str()) {
                values[slot] = Some(value.trim().to_string());
            }
        }
    }
    let get = |i: usize| values[i].clone().ok_or(TripleError::MissingField(FIELD_KEYS[i].0));
    let (c, r, e) = (get(0)?, get(1)?, get(2)?);
    let invalid = |field, value: String| TripleError::InvalidOption { field, value };
    Ok(DemographicTriple {
        continent: Continent::parse(&c).ok_or_else(|| invalid("continent", c))?,
        residential_area: ResidentialArea::parse(&r).ok_or_else(|| invalid("residential area", r))?,
        education: Education::parse(&e).ok_or_else(|| invalid("education", e))?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeQuestion {
    pub id: String,
    pub text: String,
    pub k: u32,
    pub scale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionBank {
    #[serde(rename = "question")]
    pub questions: Vec<ProbeQuestion>,
}

#[derive(Debug, Error)]
pub enum BankError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("question bank: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("question `{0}` listed twice")]
    Duplicate(String),
    #[error("question `{0}` needs k >= 2")]
    TooFewCategories(String),
    #[error("question bank is empty")]
    Empty,
}

impl QuestionBank {
    pub fn bundled() -> Self {
        Self::from_toml_str(BUNDLED_BANK).expect("bundled question bank is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, BankError> {
        let bank: Self = toml::from_str(text)?;
        if bank.questions.is_empty() {
            return Err(BankError::Empty);
        }
        let mut seen = std::collections::BTreeSet::new();
        for q in &bank.questions {
            if !seen.insert(&q.id) {
                return Err(BankError::Duplicate(q.id.clone()));
            }
            if q.k < 2 {
                return Err(BankError::TooFewCategories(q.id.clone()));
            }
        }
        Ok(bank)
    }

    pub fn load(path: &Path) -> Result<Self, BankError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ProbeQuestion> {
        self.questions.iter().find(|q| q.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WVBResponseVector {
    pub config_id: ConfigId,
    pub triple: DemographicTriple,
    /// Keyed by question id.
    pub answers: BTreeMap<String, u32>,
}

/// Persisted elicitation outcome; failed records are excluded from alignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WvbRecord {
    pub config_id: ConfigId,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triple: Option<DemographicTriple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<BTreeMap<String, u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Total backend calls including re-asks.
    pub attempts: u32,
}

impl WvbRecord {
    pub fn response(&self) -> Option<WVBResponseVector> {
        match (self.status, &self.triple, &self.answers) {
            (RecordStatus::Ok, Some(triple), Some(answers)) => Some(WVBResponseVector {
                config_id: self.config_id,
                triple: *triple,
                answers: answers.clone(),
            }),
            _ => None,
        }
    }

    fn failed(config_id: ConfigId, error: String, attempts: u32) -> Self {
        Self {
            config_id,
            status: RecordStatus::Failed,
            triple: None,
            answers: None,
            error: Some(error),
            attempts,
        }
    }
}

pub fn render_wvb_system(persona: &PersonaProfile) -> String {
    format!(
        "You are the following person:\n {}\n\nAnswer the following survey questions as this person \
         would answer, based on their values and worldview. It is very important to respond EXACTLY \
         as requested. Be terse.",
        persona.raw_text.trim()
    )
}

pub fn render_demographics_prompt() -> String {
    let list = |opts: Vec<&str>| opts.join(", ");
    format!(
        "Before answering, report your demographics by selecting exactly one option from each list:\n \
         - Continent: [{}]\n \
         - Residential area: [{}]\n \
         - Education: [{}]\n\
         Return the three fields in a structured form (one line each).",
        list(Continent::ALL.iter().map(|c| c.label()).collect()),
        list(ResidentialArea::ALL.iter().map(|c| c.label()).collect()),
        list(Education::ALL.iter().map(|c| c.label()).collect()),
    )
}

pub fn render_question_prompt(q: &ProbeQuestion) -> String {
    format!(
        "Question: {} Answer on a scale from 1 to {} ({}).\n\nReturn only a single integer on the \
         response scale specified in the question prompt.",
        q.text, q.k, q.scale
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnswerError {
    #[error("expected a single integer, found {0}")]
    NotSingle(usize),
    #[error("answer {value} outside 1..={k}")]
    OutOfScale { value: i64, k: u32 },
}

pub fn parse_single_integer(text: &str, k: u32) -> Result<u32, AnswerError> {
    let ints: Vec<i64> = text
        .split(|c: char| !(c.is_ascii_digit() || c == '-'))
        .filter(|t| !t.is_empty() && t.trim_start_matches('-').chars().all(|c| c.is_ascii_digit()) && t != &"-")
        .filter_map(|t| t.parse().ok())
        .collect();
    match ints.as_slice() {
        [v] if (1..=k as i64).contains(v) => Ok(*v as u32),
        [v] => Err(AnswerError::OutOfScale { value: *v, k }),
        other => Err(AnswerError::NotSingle(other.len())),
    }
}

/// Demographics first, then each question in bank order within one growing
/// conversation. Accepted replies join the history; repair exchanges do not.
pub fn elicit_wvb(
    persona: &PersonaProfile,
    bank: &QuestionBank,
    gateway: &Gateway,
    max_reasks: u32,
) -> Result<WvbRecord, GatewayError> {
    let id = persona.config_id;
    let mut req = gateway
        .prepare(ChatRequest::new(
            render_wvb_system(persona),
            render_demographics_prompt(),
        ))
        .with_context(RequestClass::Wvb, id, Some("demographics".into()));
    let asked = ask_with_repair(gateway, &req, max_reasks, parse_triple, |e| {
        format!(
            "That reply could not be used ({e}). Reply with exactly three lines: `Continent: <option>`, \
             `Residential area: <option>`, `Education: <option>`, choosing options verbatim from the lists."
        )
    })?;
    let mut attempts = asked.attempts;
    let triple = match asked.result {
        Ok(t) => t,
        Err(e) => return Ok(WvbRecord::failed(id, format!("demographics: {e}"), attempts)),
    };
    req.prior_replies.push(asked.last_text);

    let mut answers = BTreeMap::new();
    for q in &bank.questions {
        req.user_turns.push(render_question_prompt(q));
        req = req.with_context(RequestClass::Wvb, id, Some(q.id.clone()));
        let asked = ask_with_repair(
            gateway,
            &req,
            max_reasks,
            |t| parse_single_integer(t, q.k),
            |e| {
                format!(
                    "That reply could not be used ({e}). Return only one integer from 1 to {}.",
                    q.k
                )
            },
        )?;
        attempts += asked.attempts;
        match asked.result {
            Ok(v) => {
                answers.insert(q.id.clone(), v);
                req.prior_replies.push(asked.last_text);
            }
            Err(e) => return Ok(WvbRecord::failed(id, format!("{}: {e}", q.id), attempts)),
        }
    }
    Ok(WvbRecord {
        config_id: id,
        status: RecordStatus::Ok,
        triple: Some(triple),
        answers: Some(answers),
        error: None,
        attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::{Backend, BackendError, RetryPolicy};
    use std::sync::{Arc, Mutex};

    #[test]
    fn bundled_bank_has_36_questions() {
        let bank = QuestionBank::bundled();
        assert_eq!(bank.len(), 36);
        assert!(bank.questions.iter().all(|q| q.k >= 2));
    }

    #[test]
    fn forty_eight_triples() {
        assert_eq!(DemographicTriple::all().count(), 48);
    }

    #[test]
    fn triple_parsing() {
        let t = parse_triple("Continent: Europe\nResidential area: Urban\nEducation: Tertiary").unwrap();
        assert_eq!(t.code(), "(E | U | T)");
        assert_eq!(t.to_string(), "Europe Urban Tertiary");
        let t = parse_triple(
            "- **Continent:** north america\n- Residential Area: [Rural]\n- Education: Upper to Post Secondary.",
        )
        .unwrap();
        assert_eq!(t.continent, Continent::NorthAmerica);
        assert_eq!(t.education, Education::UpperSecondary);
        assert_eq!(
            parse_triple("Continent: Antarctica\nResidential area: Urban\nEducation: Tertiary"),
            Err(TripleError::InvalidOption {
                field: "continent",
                value: "Antarctica".into()
            })
        );
        assert_eq!(parse_triple("Europe"), Err(TripleError::MissingField("continent")));
    }

    #[test]
    fn single_integer_answers() {
        assert_eq!(parse_single_integer("3", 4), Ok(3));
        assert_eq!(parse_single_integer("Answer: 10.", 10), Ok(10));
        assert_eq!(
            parse_single_integer("0", 4),
            Err(AnswerError::OutOfScale { value: 0, k: 4 })
        );
        assert_eq!(parse_single_integer("2 or 3", 4), Err(AnswerError::NotSingle(2)));
        assert_eq!(parse_single_integer("none", 4), Err(AnswerError::NotSingle(0)));
    }

    struct Echo {
        log: Mutex<Vec<ChatRequest>>,
        bad_continent_first: bool,
    }

    impl Backend for Echo {
        fn id(&self) -> String {
            "echo".into()
        }
        fn send(&self, req: &ChatRequest) -> Result<String, BackendError> {
            let mut log = self.log.lock().unwrap();
            log.push(req.clone());
            let last = req.user_turns.last().unwrap();
            Ok(if last.starts_with("Before answering") {
                if self.bad_continent_first {
                    "Continent: Antarctica\nResidential area: Urban\nEducation: Tertiary".into()
                } else {
                    "Continent: Asia\nResidential area: Rural\nEducation: Tertiary".into()
                }
            } else if last.starts_with("That reply") && req.user_turns.len() == 2 && req.prior_replies.len() == 1 {
                "Continent: Asia\nResidential area: Rural\nEducation: Tertiary".into()
            } else {
                "2".into()
            })
        }
    }

    fn persona() -> PersonaProfile {
        PersonaProfile {
            config_id: ConfigId(9),
            metadata: crate::persona_forge::PersonaMetadata {
                name: "n".into(),
                age: 40,
                gender_label: "Man".into(),
                occupation_raw: "farmer".into(),
                country_region: "Vietnam".into(),
            },
            bio: "b".into(),
            variable_mapping: BTreeMap::new(),
            raw_text: "persona".into(),
        }
    }

    #[test]
    fn one_conversation_with_growing_history() {
        let backend = Arc::new(Echo {
            log: Mutex::new(Vec::new()),
            bad_continent_first: false,
        });
        let gw = Gateway::new(backend.clone()).with_retry(RetryPolicy::no_delay(0));
        let bank = QuestionBank::bundled();
        let rec = elicit_wvb(&persona(), &bank, &gw, 2).unwrap();
        let resp = rec.response().unwrap();
        assert_eq!(resp.answers.len(), 36);
        assert_eq!(resp.triple.continent, Continent::Asia);
        assert_eq!(rec.attempts, 37);
        let log = backend.log.lock().unwrap();
        assert_eq!(log.len(), 37);
        assert_eq!(log[36].user_turns.len(), 37);
        assert_eq!(log[36].prior_replies.len(), 36);
        assert!(log[36].user_turns[36].contains(&bank.questions[35].text));
    }

    #[test]
    fn invalid_continent_reasks() {
        let backend = Arc::new(Echo {
            log: Mutex::new(Vec::new()),
            bad_continent_first: true,
        });
        let gw = Gateway::new(backend.clone()).with_retry(RetryPolicy::no_delay(0));
        let bank = QuestionBank::bundled();
        let rec = elicit_wvb(&persona(), &bank, &gw, 2).unwrap();
        assert_eq!(rec.status, RecordStatus::Ok);
        assert_eq!(rec.attempts, 38);
        // the repair exchange is dropped from the history
        {
            let log = backend.log.lock().unwrap();
            assert_eq!(log[2].user_turns.len(), 2);
            assert!(log[2].prior_replies[0].contains("Asia"));
        }

        let rec = elicit_wvb(&persona(), &bank, &gw, 0).unwrap();
        assert_eq!(rec.status, RecordStatus::Failed);
        assert!(rec.error.unwrap().contains("Antarctica"));
    }
}
