//! Deterministic offline backend. Every reply is drawn from an RNG keyed by
//! the script seed, the request context and the full prompt, so identical
//! requests always get identical text and the pipeline runs without a model.
//!
//! Answers follow simple drivers from the persona's configuration levels so
//! that downstream statistics have structure to find.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, ChatRequest, RequestClass};
use crate::cultural_space::{CulturalConfiguration, CulturalSchema};
use crate::iw_mapper::IndicatorSchema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub seed: u64,
    /// Probability that a reply is deliberately unusable.
    pub malformed_rate: f64,
    pub classes: BTreeSet<RequestClass>,
}

impl MockScript {
    /// Covers every request class with well-formed replies.
    pub fn full(seed: u64) -> Self {
        Self {
            seed,
            malformed_rate: 0.0,
            classes: [
                RequestClass::PersonaGen,
                RequestClass::Ivs,
                RequestClass::Wvb,
                RequestClass::Mfq,
            ]
            .into(),
        }
    }

    pub fn with_malformed_rate(mut self, rate: f64) -> Self {
        self.malformed_rate = rate.clamp(0.0, 1.0);
        self
    }
}

pub struct MockBackend {
    script: MockScript,
    schema: CulturalSchema,
    indicators: IndicatorSchema,
}

impl MockBackend {
    pub fn new(script: MockScript, schema: CulturalSchema) -> Self {
        Self {
            script,
            schema,
            indicators: IndicatorSchema::bundled(),
        }
    }

    pub fn with_indicators(mut self, indicators: IndicatorSchema) -> Self {
        self.indicators = indicators;
        self
    }

    fn rng(&self, req: &ChatRequest) -> ChaCha8Rng {
        let ctx = req.context.as_ref().expect("checked by caller");
        let mut h = Sha256::new();
        h.update(self.script.seed.to_le_bytes());
        h.update(format!("{:?}", ctx.class));
        h.update(ctx.config_id.0.to_le_bytes());
        h.update(ctx.item.as_deref().unwrap_or(""));
        h.update(req.cache_key(""));
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    /// Position of the persona's level of `variable` in [0, 1], or `None`
    /// when the schema lacks the variable.
    fn position(&self, config: &CulturalConfiguration, variable: &str) -> Option<f64> {
        let vi = self.schema.variable_index(variable)?;
        let var = &self.schema.variables()[vi];
        let li = config.level_of(vi);
        // child rearing levels are not listed in ordinal order
        if variable == "child_rearing_value" {
            return Some(match var.levels[li].id.as_str() {
                "obedience_faith" => 0.0,
                "neutral" => 0.5,
                _ => 1.0,
            });
        }
        Some(var.ordinal_fraction(li))
    }
}

const FIRST_NAMES: [&str; 12] = [
    "Amara", "Lucas", "Mei", "Omar", "Sofia", "Tariq", "Ingrid", "Mateo", "Aiko", "Daniel", "Leila", "Ravi",
];
const LAST_NAMES: [&str; 10] = [
    "Okafor", "Silva", "Chen", "Haddad", "Rossi", "Nguyen", "Larsen", "Garcia", "Tanaka", "Mensah",
];
const OCCUPATIONS: [&str; 12] = [
    "Secondary school teacher",
    "Software developer",
    "Registered nurse",
    "Sales representative",
    "Social worker",
    "Accountant",
    "Farmer",
    "Civil engineer",
    "Shop owner",
    "University lecturer",
    "Bus driver",
    "Marketing manager",
];
const COUNTRIES: [&str; 10] = [
    "Nigeria", "Brazil", "China", "Lebanon", "Italy", "Vietnam", "Norway", "Mexico", "Japan", "Canada",
];
const CONTINENTS: [(&str, u32); 6] = [
    ("Europe", 30),
    ("North America", 25),
    ("Asia", 20),
    ("Africa", 10),
    ("South America", 10),
    ("Oceania", 5),
];

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

fn weighted<'a, R: Rng>(rng: &mut R, xs: &[(&'a str, u32)]) -> &'a str {
    let total: u32 = xs.iter().map(|x| x.1).sum();
    let mut r = rng.gen_range(0..total);
    for &(v, w) in xs {
        if r < w {
            return v;
        }
        r -= w;
    }
    xs[xs.len() - 1].0
}

/// Rounds `x + noise` into `[min, max]`.
fn noisy<R: Rng>(rng: &mut R, x: f64, sd: f64, min: i64, max: i64) -> i64 {
    let n = if sd > 0.0 {
        Normal::new(0.0, sd).expect("positive sd").sample(rng)
    } else {
        0.0
    };
    ((x + n).round() as i64).clamp(min, max)
}

impl MockBackend {
    fn persona(&self, rng: &mut ChaCha8Rng, config: &CulturalConfiguration, malformed: bool) -> String {
        let name = format!("{} {}", pick(rng, &FIRST_NAMES), pick(rng, &LAST_NAMES));
        let age = 22 + (rng.gen_range(0..30) + rng.gen_range(0..30)) / 2 + rng.gen_range(0..10);
        let gender = match rng.gen_range(0..100) {
            0..=47 => "Woman",
            48..=96 => "Man",
            _ => "Non-binary",
        };
        let occupation = pick(rng, &OCCUPATIONS);
        let country = pick(rng, &COUNTRIES);
        let mut out = format!(
            "**1. Profile metadata**\n- **Name:** {name}\n- **Age:** {age}\n- **Gender:** {gender}\n\
             - **Occupation:** {occupation}\n- **Country/Region:** {country}\n\n**2. Short bio:**\n\
             {name} works as a {} in {country}. Their days are split between work, family and a few close friends.\n\n\
             **3. Cultural variable mapping**\n",
            occupation.to_lowercase()
        );
        let assignments: Vec<_> = config.assignments(&self.schema).collect();
        let keep = if malformed {
            assignments.len() / 2
        } else {
            assignments.len()
        };
        for (i, (var, level)) in assignments.into_iter().take(keep).enumerate() {
            out.push_str(&format!(
                "{}. **{} ({}):** This shows in how they talk about {}.\n",
                i + 1,
                capitalize(&var.label),
                level.label,
                var.label
            ));
        }
        out
    }

    fn ivs(&self, rng: &mut ChaCha8Rng, config: &CulturalConfiguration, malformed: bool) -> String {
        if malformed {
            return "I would rather not answer these questions.".into();
        }
        // (indicator, driving variable, does the ordinal position raise the value)
        const DRIVERS: [(&str, &str, bool); 10] = [
            ("happiness", "happiness", true),
            ("interpersonal_trust", "social_trust", true),
            ("respect_authority", "religiosity", true),
            ("petition_signing", "political_participation", true),
            ("importance_god", "religiosity", false),
            ("justif_homosexuality", "tolerance_diversity", false),
            ("justif_abortion", "moral_acceptability", true),
            ("national_pride", "national_pride", true),
            ("post_materialism", "materialism_orientation", true),
            ("autonomy_index", "child_rearing_value", true),
        ];
        let mut lines = Vec::new();
        for (i, ind) in self.indicators.indicators.iter().enumerate() {
            let range = (ind.max - ind.min) as f64;
            let driver = DRIVERS.iter().find(|d| d.0 == ind.name);
            let frac = driver
                .and_then(|d| self.position(config, d.1).map(|p| if d.2 { p } else { 1.0 - p }))
                .unwrap_or_else(|| rng.gen_range(0.0..=1.0));
            let v = noisy(rng, ind.min as f64 + frac * range, 0.12 * range, ind.min, ind.max);
            lines.push(format!("{}. {v}", i + 1));
        }
        lines.join("\n")
    }

    fn wvb(&self, rng: &mut ChaCha8Rng, req: &ChatRequest, config: &CulturalConfiguration, malformed: bool) -> String {
        let item = req.context.as_ref().and_then(|c| c.item.as_deref()).unwrap_or("");
        if item == "demographics" {
            if malformed {
                return "Somewhere on Earth, in a house.".into();
            }
            let urban = rng.gen_bool(0.7);
            let education = weighted(
                rng,
                &[
                    ("Primary or No Education", 10),
                    ("Lower Secondary", 15),
                    ("Upper to Post Secondary", 35),
                    ("Tertiary", 40),
                ],
            );
            return format!(
                "Continent: {}\nResidential area: {}\nEducation: {education}",
                weighted(rng, &CONTINENTS),
                if urban { "Urban" } else { "Rural" }
            );
        }
        let last = req.user_turns.last().map(String::as_str).unwrap_or("");
        let k = scale_top(last).unwrap_or(4);
        if malformed {
            return format!("Probably {} or {}.", 1, k);
        }
        let digest = Sha256::digest(item.as_bytes());
        let vars = self.schema.variables();
        let var = &vars[digest[0] as usize % vars.len()].name;
        let up = digest[1] % 2 == 0;
        let frac = self
            .position(config, var)
            .map(|p| if up { p } else { 1.0 - p })
            .unwrap_or(0.5);
        let v = noisy(rng, 1.0 + frac * (k - 1) as f64, 0.25 * k as f64, 1, k as i64);
        v.to_string()
    }

    fn mfq(&self, rng: &mut ChaCha8Rng, config: &CulturalConfiguration, malformed: bool) -> String {
        // foundation order care, equality, proportionality, loyalty, authority, purity;
        // item i belongs to foundation (i - 1) % 6
        const DRIVERS: [(&str, bool, f64); 6] = [
            ("tolerance_diversity", false, 4.2),
            ("materialism_orientation", true, 2.4),
            ("materialism_orientation", false, 4.4),
            ("national_pride", false, 3.5),
            ("religiosity", false, 3.9),
            ("religiosity", false, 3.3),
        ];
        let mut answers = Vec::with_capacity(36);
        for i in 0..36 {
            let (var, up, centre) = DRIVERS[i % 6];
            let p = self
                .position(config, var)
                .map(|p| if up { p } else { 1.0 - p })
                .unwrap_or(0.5);
            answers.push(noisy(rng, centre + 1.6 * (p - 0.5), 0.6, 1, 5));
        }
        let n = if malformed { 35 } else { 36 };
        let body: Vec<String> = answers[..n]
            .iter()
            .enumerate()
            .map(|(i, a)| format!("\"{}\": {a}", i + 1))
            .collect();
        format!("{{\"answers\": {{{}}}}}", body.join(", "))
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Reads `k` from "... scale from 1 to k ...".
fn scale_top(prompt: &str) -> Option<u32> {
    let at = prompt.find("from 1 to ")? + "from 1 to ".len();
    let digits: String = prompt[at..].chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok().filter(|&k| k >= 2)
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        format!("mock:{}", self.script.seed)
    }

    fn send(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let ctx = req
            .context
            .as_ref()
            .ok_or_else(|| BackendError::Rejected("mock needs a request context".into()))?;
        if !self.script.classes.contains(&ctx.class) {
            return Err(BackendError::Rejected(format!(
                "mock script does not cover {:?}",
                ctx.class
            )));
        }
        let config = self
            .schema
            .decode(ctx.config_id)
            .map_err(|e| BackendError::Rejected(format!("mock: {e}")))?;
        let mut rng = self.rng(req);
        let malformed = rng.gen_bool(self.script.malformed_rate);
        Ok(match ctx.class {
            RequestClass::PersonaGen => self.persona(&mut rng, &config, malformed),
            RequestClass::Ivs => self.ivs(&mut rng, &config, malformed),
            RequestClass::Wvb => self.wvb(&mut rng, req, &config, malformed),
            RequestClass::Mfq => self.mfq(&mut rng, &config, malformed),
        })
    }
}
