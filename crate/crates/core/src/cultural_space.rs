//! Cultural-variable schema and the configuration space it spans.
//!
//! A [`CulturalSchema`] is an ordered list of categorical variables. Every
//! [`CulturalConfiguration`] assigns one level to each variable and is
//! identified by a mixed-radix [`ConfigId`]: variables are digits in schema
//! order, the last variable varying fastest.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const DEFAULT_SCHEMA: &str = include_str!("../data/default_schema.toml");

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("failed to read schema file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed schema file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("schema declares no variables")]
    NoVariables,
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("variable `{0}` has no levels")]
    EmptyLevels(String),
    #[error("variable `{variable}` declares level `{level}` twice")]
    DuplicateLevel { variable: String, level: String },
    #[error("configuration space does not fit in 64 bits")]
    TooLarge,
    #[error("configuration id {id} out of range (space size {size})")]
    IdOutOfRange { id: u64, size: u64 },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unknown level `{level}` for variable `{variable}`")]
    UnknownLevel { variable: String, level: String },
    #[error("configuration has {got} assignments, schema has {expected} variables")]
    Arity { expected: usize, got: usize },
}

/// Stable persistence key of a configuration within one schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfigId(pub u64);

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Level {
    pub id: String,
    /// Human phrasing used in prompts and reports.
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CulturalVariable {
    pub name: String,
    pub label: String,
    #[serde(default)]
    pub concept: String,
    #[serde(default)]
    pub axis_note: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    #[serde(rename = "level")]
    pub levels: Vec<Level>,
}

impl CulturalVariable {
    pub fn level_index(&self, id: &str) -> Option<usize> {
        self.levels.iter().position(|l| l.id == id)
    }

    /// Ordinal position of a level mapped onto [0, 1]; single-level variables map to 0.5.
    pub fn ordinal_fraction(&self, index: usize) -> f64 {
        if self.levels.len() < 2 {
            0.5
        } else {
            index as f64 / (self.levels.len() - 1) as f64
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct SchemaFile {
    #[serde(rename = "variable", default)]
    variables: Vec<CulturalVariable>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CulturalSchema {
    variables: Vec<CulturalVariable>,
    /// `strides[i]` is the place value of variable `i` in the mixed-radix id.
    strides: Vec<u64>,
    size: u64,
}

impl CulturalSchema {
    pub fn new(variables: Vec<CulturalVariable>) -> Result<Self, SchemaError> {
        if variables.is_empty() {
            return Err(SchemaError::NoVariables);
        }
        let mut names = HashSet::new();
        for var in &variables {
            if !names.insert(var.name.as_str()) {
                return Err(SchemaError::DuplicateVariable(var.name.clone()));
            }
            if var.levels.is_empty() {
                return Err(SchemaError::EmptyLevels(var.name.clone()));
            }
            let mut ids = HashSet::new();
            for level in &var.levels {
                if !ids.insert(level.id.as_str()) {
                    return Err(SchemaError::DuplicateLevel {
                        variable: var.name.clone(),
                        level: level.id.clone(),
                    });
                }
            }
        }
        let mut strides = vec![0u64; variables.len()];
        let mut acc: u64 = 1;
        for (i, var) in variables.iter().enumerate().rev() {
            strides[i] = acc;
            acc = acc.checked_mul(var.levels.len() as u64).ok_or(SchemaError::TooLarge)?;
        }
        Ok(Self {
            variables,
            strides,
            size: acc,
        })
    }

    /// The bundled ten-variable schema.
    pub fn default_schema() -> Self {
        Self::from_toml_str(DEFAULT_SCHEMA).expect("bundled schema is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SchemaError> {
        let file: SchemaFile = toml::from_str(text)?;
        Self::new(file.variables)
    }

    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&SchemaFile {
            variables: self.variables.clone(),
        })
        .expect("schema serializes")
    }

    /// Content hash over the canonical serialization.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn variables(&self) -> &[CulturalVariable] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn variable(&self, name: &str) -> Option<&CulturalVariable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Number of configurations (product of level counts).
    pub fn space_size(&self) -> u64 {
        self.size
    }

    pub fn total_levels(&self) -> usize {
        self.variables.iter().map(|v| v.levels.len()).sum()
    }

    pub fn decode(&self, id: ConfigId) -> Result<CulturalConfiguration, SchemaError> {
        if id.0 >= self.size {
            return Err(SchemaError::IdOutOfRange {
                id: id.0,
                size: self.size,
            });
        }
        let mut rest = id.0;
        let levels = self
            .strides
            .iter()
            .map(|&stride| {
                let digit = rest / stride;
                rest %= stride;
                digit as usize
            })
            .collect();
        Ok(CulturalConfiguration { id, levels })
    }

    pub fn encode(&self, config: &CulturalConfiguration) -> Result<ConfigId, SchemaError> {
        self.encode_levels(&config.levels)
    }

    fn encode_levels(&self, levels: &[usize]) -> Result<ConfigId, SchemaError> {
        if levels.len() != self.variables.len() {
            return Err(SchemaError::Arity {
                expected: self.variables.len(),
                got: levels.len(),
            });
        }
        let mut id = 0u64;
        for ((&level, var), &stride) in levels.iter().zip(&self.variables).zip(&self.strides) {
            if level >= var.levels.len() {
                return Err(SchemaError::UnknownLevel {
                    variable: var.name.clone(),
                    level: level.to_string(),
                });
            }
            id += level as u64 * stride;
        }
        Ok(ConfigId(id))
    }

    /// Builds a configuration from `(variable, level)` identifier pairs; every
    /// variable must appear exactly once.
    pub fn configuration_from_pairs<'a, I>(&self, pairs: I) -> Result<CulturalConfiguration, SchemaError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut levels: Vec<Option<usize>> = vec![None; self.variables.len()];
        for (name, level) in pairs {
            let vi = self
                .variable_index(name)
                .ok_or_else(|| SchemaError::UnknownVariable(name.to_string()))?;
            let li = self.variables[vi]
                .level_index(level)
                .ok_or_else(|| SchemaError::UnknownLevel {
                    variable: name.to_string(),
                    level: level.to_string(),
                })?;
            if levels[vi].replace(li).is_some() {
                return Err(SchemaError::DuplicateVariable(name.to_string()));
            }
        }
        let got = levels.iter().filter(|l| l.is_some()).count();
        let levels: Vec<usize> = levels.into_iter().collect::<Option<_>>().ok_or(SchemaError::Arity {
            expected: self.variables.len(),
            got,
        })?;
        let id = self.encode_levels(&levels)?;
        Ok(CulturalConfiguration { id, levels })
    }

    /// All configurations in ascending id order.
    pub fn configurations(&self) -> Configurations<'_> {
        Configurations {
            schema: self,
            next: 0,
            digits: vec![0; self.variables.len()],
        }
    }
}

/// One level per schema variable, stored as level indices in schema order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CulturalConfiguration {
    id: ConfigId,
    levels: Vec<usize>,
}

impl CulturalConfiguration {
    pub fn id(&self) -> ConfigId {
        self.id
    }

    pub fn level_indices(&self) -> &[usize] {
        &self.levels
    }

    pub fn level_of(&self, variable_index: usize) -> usize {
        self.levels[variable_index]
    }

    pub fn assignments<'s>(
        &'s self,
        schema: &'s CulturalSchema,
    ) -> impl Iterator<Item = (&'s CulturalVariable, &'s Level)> + 's {
        schema
            .variables
            .iter()
            .zip(&self.levels)
            .map(|(var, &li)| (var, &var.levels[li]))
    }
}

/// Odometer over the configuration space.
pub struct Configurations<'a> {
    schema: &'a CulturalSchema,
    next: u64,
    digits: Vec<usize>,
}

impl Iterator for Configurations<'_> {
    type Item = CulturalConfiguration;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.schema.size {
            return None;
        }
        let out = CulturalConfiguration {
            id: ConfigId(self.next),
            levels: self.digits.clone(),
        };
        self.next += 1;
        for (digit, var) in self.digits.iter_mut().zip(&self.schema.variables).rev() {
            *digit += 1;
            if *digit < var.levels.len() {
                break;
            }
            *digit = 0;
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let rest = (self.schema.size - self.next) as usize;
        (rest, Some(rest))
    }
}

impl ExactSizeIterator for Configurations<'_> {}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CulturalSchema {
        CulturalSchema::from_toml_str(
            r#"
            [[variable]]
            name = "A"
            label = "A"
            [[variable.level]]
            id = "x"
            label = "x"
            [[variable.level]]
            id = "y"
            label = "y"

            [[variable]]
            name = "B"
            label = "B"
            [[variable.level]]
            id = "u"
            label = "u"
            [[variable.level]]
            id = "v"
            label = "v"
            [[variable.level]]
            id = "w"
            label = "w"
            "#,
        )
        .unwrap()
    }

    #[test]
    fn default_schema_matches_reference_table() {
        let schema = CulturalSchema::default_schema();
        let names: Vec<_> = schema.variables().iter().map(|v| v.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "religiosity",
                "child_rearing_value",
                "moral_acceptability",
                "social_trust",
                "political_participation",
                "national_pride",
                "happiness",
                "gender_equality",
                "materialism_orientation",
                "tolerance_diversity"
            ]
        );
        let counts: Vec<_> = schema.variables().iter().map(|v| v.levels.len()).collect();
        assert_eq!(counts, [4, 3, 3, 2, 3, 4, 4, 3, 3, 3]);
        assert_eq!(schema.total_levels(), 32);
        assert_eq!(schema.space_size(), 93_312);
    }

    #[test]
    fn tiny_schema_enumerates_cartesian_product() {
        let schema = tiny();
        let all: Vec<_> = schema.configurations().collect();
        assert_eq!(all.len(), 6);
        let first: Vec<_> = all[0]
            .assignments(&schema)
            .map(|(v, l)| (v.name.as_str(), l.id.as_str()))
            .collect();
        assert_eq!(first, [("A", "x"), ("B", "u")]);
        // last variable varies fastest
        let second: Vec<_> = all[1].assignments(&schema).map(|(_, l)| l.id.as_str()).collect();
        assert_eq!(second, ["x", "v"]);
        for (i, c) in all.iter().enumerate() {
            assert_eq!(c.id(), ConfigId(i as u64));
        }
    }

    #[test]
    fn single_level_schema_has_one_configuration() {
        let schema = CulturalSchema::from_toml_str(
            "[[variable]]\nname='only'\nlabel='only'\n[[variable.level]]\nid='one'\nlabel='one'\n",
        )
        .unwrap();
        assert_eq!(schema.configurations().count(), 1);
    }

    #[test]
    fn two_by_two_schema_has_product_four() {
        let text = "[[variable]]\nname='a'\nlabel='a'\n[[variable.level]]\nid='p'\nlabel='p'\n[[variable.level]]\nid='q'\nlabel='q'\n\
                    [[variable]]\nname='b'\nlabel='b'\n[[variable.level]]\nid='p'\nlabel='p'\n[[variable.level]]\nid='q'\nlabel='q'\n";
        assert_eq!(CulturalSchema::from_toml_str(text).unwrap().space_size(), 4);
    }

    #[test]
    fn codec_boundaries() {
        let schema = CulturalSchema::default_schema();
        let zero = schema.decode(ConfigId(0)).unwrap();
        assert!(zero.level_indices().iter().all(|&l| l == 0));
        let last = schema.decode(ConfigId(93_311)).unwrap();
        for (var, &li) in schema.variables().iter().zip(last.level_indices()) {
            assert_eq!(li, var.levels.len() - 1);
        }
        assert!(matches!(
            schema.decode(ConfigId(93_312)),
            Err(SchemaError::IdOutOfRange { .. })
        ));
    }

    #[test]
    fn pairs_roundtrip_and_validation() {
        let schema = tiny();
        let c = schema.configuration_from_pairs([("A", "y"), ("B", "w")]).unwrap();
        assert_eq!(c.id(), ConfigId(5));
        assert!(matches!(
            schema.configuration_from_pairs([("A", "z"), ("B", "w")]),
            Err(SchemaError::UnknownLevel { .. })
        ));
        assert!(matches!(
            schema.configuration_from_pairs([("A", "x")]),
            Err(SchemaError::Arity { .. })
        ));
    }

    #[test]
    fn validation_errors() {
        let dup = "[[variable]]\nname='a'\nlabel='a'\n[[variable.level]]\nid='p'\nlabel='p'\n\
                   [[variable]]\nname='a'\nlabel='a'\n[[variable.level]]\nid='p'\nlabel='p'\n";
        assert!(matches!(
            CulturalSchema::from_toml_str(dup),
            Err(SchemaError::DuplicateVariable(_))
        ));
        let empty = "[[variable]]\nname='a'\nlabel='a'\nlevel=[]\n";
        assert!(matches!(
            CulturalSchema::from_toml_str(empty),
            Err(SchemaError::EmptyLevels(_))
        ));
        assert!(matches!(
            CulturalSchema::from_toml_str("variable = 3"),
            Err(SchemaError::Parse(_))
        ));
    }

    #[test]
    fn fingerprint_is_stable() {
        assert_eq!(
            CulturalSchema::default_schema().fingerprint(),
            CulturalSchema::default_schema().fingerprint()
        );
        assert_ne!(CulturalSchema::default_schema().fingerprint(), tiny().fingerprint());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]
            #[test]
            fn encode_decode_roundtrip(id in 0u64..93_312) {
                let schema = CulturalSchema::default_schema();
                let c = schema.decode(ConfigId(id)).unwrap();
                prop_assert_eq!(schema.encode(&c).unwrap(), ConfigId(id));
            }
        }
    }
}
