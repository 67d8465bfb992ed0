//! Persona generation: prompt rendering, response parsing with re-asks, and
//! demographic summaries over the generated set.

mod parse;
mod prompt;
mod summary;
pub mod tokenize;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cultural_space::{ConfigId, CulturalConfiguration, CulturalSchema};
use crate::llm_gateway::{ChatRequest, Gateway, GatewayError, RequestClass};

pub use parse::{parse_persona, AgeBounds, ParseError};
pub use prompt::{render_persona_prompt, repair_instruction};
pub use summary::{
    age_band, demographic_summary, normalize_gender, occupation_macro, DemographicSummary, LexicalStat, LexicalStats,
    OccupationTable, GENDER_AGENDER, GENDER_GENDERQUEER, GENDER_MAN, GENDER_NON_BINARY, GENDER_OTHER, GENDER_WOMAN,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaMetadata {
    pub name: String,
    pub age: u32,
    pub gender_label: String,
    pub occupation_raw: String,
    pub country_region: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub config_id: ConfigId,
    pub metadata: PersonaMetadata,
    pub bio: String,
    /// One entry per schema variable, keyed by variable name.
    pub variable_mapping: BTreeMap<String, String>,
    pub raw_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Failed,
}

/// Persisted outcome of one generation, one JSON line per configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaRecord {
    pub config_id: ConfigId,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<PersonaMetadata>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bio: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<BTreeMap<String, String>>,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: u32,
}

impl PersonaRecord {
    pub fn profile(&self) -> Option<PersonaProfile> {
        match (self.status, &self.metadata, &self.bio, &self.mapping) {
            (RecordStatus::Ok, Some(metadata), Some(bio), Some(mapping)) => Some(PersonaProfile {
                config_id: self.config_id,
                metadata: metadata.clone(),
                bio: bio.clone(),
                variable_mapping: mapping.clone(),
                raw_text: self.raw_text.clone(),
            }),
            _ => None,
        }
    }

    fn from_profile(profile: PersonaProfile, attempts: u32) -> Self {
        Self {
            config_id: profile.config_id,
            status: RecordStatus::Ok,
            metadata: Some(profile.metadata),
            bio: Some(profile.bio),
            mapping: Some(profile.variable_mapping),
            raw_text: profile.raw_text,
            error: None,
            attempts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationOptions {
    pub max_reasks: u32,
    pub age_bounds: AgeBounds,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            max_reasks: 2,
            age_bounds: AgeBounds::default(),
        }
    }
}

/// Generates and parses one persona. Parse failures after all re-asks yield a
/// `Failed` record; only gateway failures are errors.
pub fn generate_persona(
    schema: &CulturalSchema,
    config: &CulturalConfiguration,
    gateway: &Gateway,
    opts: &GenerationOptions,
) -> Result<PersonaRecord, GatewayError> {
    let prompt = render_persona_prompt(schema, config);
    let mut req =
        gateway
            .prepare(ChatRequest::new("", prompt))
            .with_context(RequestClass::PersonaGen, config.id(), None);
    let mut attempts = 0;
    loop {
        attempts += 1;
        let text = gateway.complete(&req)?.text;
        match parse_persona(schema, config.id(), &text, opts.age_bounds) {
            Ok(profile) => return Ok(PersonaRecord::from_profile(profile, attempts)),
            Err(err) if attempts > opts.max_reasks => {
                return Ok(PersonaRecord {
                    config_id: config.id(),
                    status: RecordStatus::Failed,
                    metadata: None,
                    bio: None,
                    mapping: None,
                    raw_text: text,
                    error: Some(err.to_string()),
                    attempts,
                })
            }
            Err(err) => {
                // re-ask from the original prompt with only the latest bad reply
                req.user_turns.truncate(1);
                req.prior_replies.clear();
                req.prior_replies.push(text);
                req.user_turns.push(repair_instruction(&err, schema));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::{Backend, BackendError, RetryPolicy};
    use std::sync::{Arc, Mutex};

    pub(crate) const FIXTURE: &str = include_str!("../../tests/fixtures/persona_ok.txt");

    struct Scripted(Mutex<Vec<String>>);

    impl Backend for Scripted {
        fn id(&self) -> String {
            "scripted".into()
        }
        fn send(&self, _req: &ChatRequest) -> Result<String, BackendError> {
            let mut queue = self.0.lock().unwrap();
            if queue.len() > 1 {
                Ok(queue.remove(0))
            } else {
                Ok(queue[0].clone())
            }
        }
    }

    fn gateway(replies: &[&str]) -> Gateway {
        Gateway::new(Arc::new(Scripted(Mutex::new(
            replies.iter().map(|s| s.to_string()).collect(),
        ))))
        .with_retry(RetryPolicy::no_delay(0))
    }

    fn config() -> (CulturalSchema, CulturalConfiguration) {
        let schema = CulturalSchema::default_schema();
        let c = schema.decode(ConfigId(0)).unwrap();
        (schema, c)
    }

    #[test]
    fn well_formed_reply_parses_on_first_attempt() {
        let (schema, c) = config();
        let rec = generate_persona(&schema, &c, &gateway(&[FIXTURE]), &Default::default()).unwrap();
        assert_eq!(rec.status, RecordStatus::Ok);
        assert_eq!(rec.attempts, 1);
        assert_eq!(rec.mapping.as_ref().unwrap().len(), 10);
    }

    #[test]
    fn reask_recovers_from_bad_first_reply() {
        let (schema, c) = config();
        let rec = generate_persona(&schema, &c, &gateway(&["garbage", FIXTURE]), &Default::default()).unwrap();
        assert_eq!(rec.status, RecordStatus::Ok);
        assert_eq!(rec.attempts, 2);
    }

    #[test]
    fn missing_mapping_fails_after_retries() {
        let (schema, c) = config();
        let cut = FIXTURE.split("Cultural variable mapping").next().unwrap();
        let rec = generate_persona(&schema, &c, &gateway(&[cut]), &Default::default()).unwrap();
        assert_eq!(rec.status, RecordStatus::Failed);
        assert_eq!(rec.attempts, 3);
        assert!(rec.error.as_ref().unwrap().contains("mapping"));
        assert!(rec.profile().is_none());
    }
}
