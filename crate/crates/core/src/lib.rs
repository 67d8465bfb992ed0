//! Culturally conditioned persona generation and alignment audits against
//! survey-derived references.

pub mod cultural_space;
mod elicit;
pub mod iw_mapper;
pub mod llm_gateway;
pub mod moral_profiler;
pub mod pattern_miner;
pub mod persona_forge;
pub mod pipeline;
pub mod wvb_aligner;

pub use cultural_space::{ConfigId, CulturalConfiguration, CulturalSchema, CulturalVariable, Level, SchemaError};
pub use iw_mapper::{IWPoint, IndicatorSchema, IndicatorVector};
pub use llm_gateway::{Gateway, GatewayError};
pub use moral_profiler::{Foundation, MoralVector, OracleMatrix};
pub use pattern_miner::{AggregatedPattern, Itemset, MinerParams};
pub use persona_forge::PersonaProfile;
pub use pipeline::{Pipeline, PipelineError, PipelineManifest, Stage};
pub use wvb_aligner::{DemographicTriple, QuestionBank, WVBResponseVector};
