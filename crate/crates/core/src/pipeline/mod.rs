//! Stage orchestration. A run lives in the directory holding its manifest:
//! a copy of the schema, one JSONL store per elicitation, stage outputs and
//! a `reports/` bundle. Stages resume from whatever their stores hold.

mod demo;
mod reports;
mod store;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cultural_space::{ConfigId, CulturalConfiguration, CulturalSchema};
use crate::iw_mapper::{elicit_indicators, project, write_points_csv, IWPoint, IndicatorRecord, IndicatorSchema};
use crate::llm_gateway::{
    parallel_map, Backend, Gateway, GatewayError, HttpBackend, HttpConfig, MockBackend, MockScript, ResponseCache,
    RetryPolicy,
};
use crate::moral_profiler::{
    elicit_mfq_scores, greedy_core_set_selection, mft_core_set_vector, mft_inferred_vector, CoreSetResult, Foundation,
    ItemMap, MfqItems, MfqRecord, MoralVector, OracleMatrix, SelectionParams,
};
use crate::pattern_miner::{
    filter_and_aggregate, grid_assign, mine_cells, AggregatedPattern, CellMining, GridError, MineError, MinerParams,
};
use crate::persona_forge::{generate_persona, AgeBounds, GenerationOptions, PersonaProfile, PersonaRecord};
use crate::wvb_aligner::{
    alignment_report, build_group_distributions, elicit_wvb, load_reference, AlignmentReport, QuestionBank,
    ReferenceSet, WvbRecord,
};

pub use demo::{demo_reference, write_reference_csv};
pub use reports::{
    write_age_gender_table, write_countries_table, write_lexical_table, write_occupation_table, write_svg_scatter,
    REPORT_FILES,
};
pub use store::{write_atomic, JsonlStore, StoreError};

/// Marker for the bundled demo data in place of a file path.
pub const DEMO_SOURCE: &str = "demo";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Generate,
    ElicitIw,
    Project,
    Mine,
    ElicitWvb,
    Align,
    ElicitMfq,
    MoralMap,
    SelectCore,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Generate,
        Stage::ElicitIw,
        Stage::Project,
        Stage::Mine,
        Stage::ElicitWvb,
        Stage::Align,
        Stage::ElicitMfq,
        Stage::MoralMap,
        Stage::SelectCore,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::ElicitIw => "elicit-iw",
            Stage::Project => "project",
            Stage::Mine => "mine",
            Stage::ElicitWvb => "elicit-wvb",
            Stage::Align => "align",
            Stage::ElicitMfq => "elicit-mfq",
            Stage::MoralMap => "moral-map",
            Stage::SelectCore => "select-core",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.name() == s)
    }

    /// Stages whose outputs this stage reads. The report reads whatever is
    /// complete beyond generation.
    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Generate => &[],
            Stage::ElicitIw | Stage::ElicitWvb | Stage::ElicitMfq | Stage::Report => &[Stage::Generate],
            Stage::Project => &[Stage::ElicitIw],
            Stage::Mine => &[Stage::Project],
            Stage::Align => &[Stage::ElicitWvb],
            Stage::MoralMap => &[Stage::ElicitMfq],
            Stage::SelectCore => &[Stage::MoralMap],
        }
    }

    /// This stage and everything downstream of it, always including the
    /// report since it reads every section.
    pub fn downstream(self) -> Vec<Stage> {
        let mut out = vec![self, Stage::Report];
        let mut i = 0;
        while i < out.len() {
            let s = out[i];
            for t in Stage::ALL {
                if t.prerequisites().contains(&s) && !out.contains(&t) {
                    out.push(t);
                }
            }
            i += 1;
        }
        out.sort();
        out.dedup();
        out
    }

    fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Generate => &["personas.jsonl"],
            Stage::ElicitIw => &["indicators.jsonl"],
            Stage::Project => &["iw_points.jsonl", "iw_points.csv", "iw_model.json"],
            Stage::Mine => &["cells.jsonl", "patterns.json"],
            Stage::ElicitWvb => &["wvb.jsonl"],
            Stage::Align => &["alignment.json", "alignment_pairs.jsonl"],
            Stage::ElicitMfq => &["mfq.jsonl"],
            Stage::MoralMap => &["mft.jsonl"],
            Stage::SelectCore => &["core_sets.json", "mft_core.jsonl"],
            Stage::Report => &[],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageState {
    Pending,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStatus {
    pub state: StageState,
    pub total: usize,
    pub ok: usize,
    pub failed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl StageStatus {
    fn pending() -> Self {
        Self {
            state: StageState::Pending,
            total: 0,
            ok: 0,
            failed: 0,
            message: None,
        }
    }

    fn complete(total: usize, ok: usize, failed: usize) -> Self {
        Self {
            state: StageState::Complete,
            total,
            ok,
            failed,
            message: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_tag: String,
    pub salt: String,
    /// Mock only.
    pub malformed_rate: f64,
    pub max_retries: u32,
    /// Persist responses in `cache/`.
    pub cache: bool,
}

impl BackendConfig {
    pub fn mock() -> Self {
        Self {
            kind: BackendKind::Mock,
            model_tag: "mock".into(),
            salt: String::new(),
            malformed_rate: 0.0,
            max_retries: 2,
            cache: false,
        }
    }

    pub fn http(model_tag: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            model_tag: model_tag.into(),
            salt: String::new(),
            malformed_rate: 0.0,
            max_retries: 5,
            cache: true,
        }
    }
}

/// External data files. `None` means the bundled default where one exists;
/// `reference` and `oracle_matrix` also accept [`DEMO_SOURCE`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub indicators: Option<PathBuf>,
    pub question_bank: Option<PathBuf>,
    pub reference: Option<String>,
    pub oracle_matrix: Option<String>,
    pub item_map: Option<PathBuf>,
    pub mfq_items: Option<PathBuf>,
    pub overlay: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub seed: u64,
    /// Seeded random subset of the configuration space; all when `None`.
    pub sample: Option<usize>,
    pub max_reasks: u32,
    pub age_bounds: AgeBounds,
    pub miner: MinerParams,
    pub selection: SelectionParams,
    pub series_bin: usize,
    pub top_groups: usize,
    /// Aggregated patterns flagged in the scatter data.
    pub scatter_patterns: usize,
}

impl Params {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            sample: None,
            max_reasks: 2,
            age_bounds: AgeBounds::default(),
            miner: MinerParams::default(),
            selection: SelectionParams {
                seed,
                ..SelectionParams::default()
            },
            series_bin: 300,
            top_groups: 5,
            scatter_patterns: 6,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Validation(m));
        let m = &self.miner;
        if !(m.min_support > 0.0 && m.min_support <= 1.0) {
            return bad(format!("min_support {} outside (0, 1]", m.min_support));
        }
        if !(m.rho > 0.0 && m.rho <= 1.0) {
            return bad(format!("rho {} outside (0, 1]", m.rho));
        }
        if !(m.cell_side.is_finite() && m.cell_side > 0.0) {
            return bad(format!("cell side {} must be positive", m.cell_side));
        }
        if m.min_cells == 0 {
            return bad("min_cells must be at least 1".into());
        }
        let s = &self.selection;
        if s.runs == 0 || !(s.train_fraction > 0.0 && s.train_fraction < 1.0) || s.epsilon.is_nan() || s.epsilon < 0.0 {
            return bad(format!("invalid selection parameters {s:?}"));
        }
        if self.series_bin == 0 {
            return bad("series bin must be positive".into());
        }
        if self.sample == Some(0) {
            return bad("sample must be positive".into());
        }
        if self.age_bounds.min > self.age_bounds.max {
            return bad("age bounds inverted".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub run_id: String,
    pub schema_hash: String,
    pub backend: BackendConfig,
    pub params: Params,
    pub inputs: Inputs,
    pub stages: BTreeMap<Stage, StageStatus>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error("stage {stage} needs {missing} to be complete")]
    Prerequisite { stage: Stage, missing: Stage },
    #[error(transparent)]
    Backend(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Failed(String),
}

impl PipelineError {
    /// 2 validation, 3 backend exhaustion, 4 prerequisite, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Backend(GatewayError::Cache(_)) => 1,
            PipelineError::Backend(GatewayError::InvalidRequest(_)) => 1,
            PipelineError::Backend(_) => 3,
            PipelineError::Prerequisite { .. } => 4,
            PipelineError::Store(_) | PipelineError::Failed(_) => 1,
        }
    }
}

fn failed(context: &str, e: impl fmt::Display) -> PipelineError {
    PipelineError::Failed(format!("{context}: {e}"))
}

fn invalid(context: &str, e: impl fmt::Display) -> PipelineError {
    PipelineError::Validation(format!("{context}: {e}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestInit {
    pub run_id: Option<String>,
    pub backend: BackendConfig,
    pub params: Params,
    pub inputs: Inputs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub workers: usize,
    /// Accept failed prerequisites that persisted at least one record.
    pub allow_partial: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 4,
            allow_partial: false,
        }
    }
}

/// Core-set outcome per foundation, with the variables actually used for
/// the recomputed inferred vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreSetEntry {
    pub foundation: Foundation,
    pub subset: Vec<String>,
    /// The core set was empty or selection failed, so all variables are used.
    pub fallback_full_set: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<CoreSetResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

trait Keyed {
    fn key(&self) -> ConfigId;
}

macro_rules! keyed {
    ($($t:ty),+) => {$(impl Keyed for $t { fn key(&self) -> ConfigId { self.config_id } })+};
}
keyed!(
    PersonaRecord,
    IndicatorRecord,
    WvbRecord,
    MfqRecord,
    MoralVector,
    IWPoint
);

const SCHEMA_FILE: &str = "schema.toml";

#[derive(Debug)]
pub struct Pipeline {
    manifest_path: PathBuf,
    dir: PathBuf,
    pub manifest: PipelineManifest,
    schema: CulturalSchema,
}

impl Pipeline {
    /// Starts a new run next to `manifest_path`, copying the schema into it.
    pub fn create(manifest_path: &Path, schema: CulturalSchema, init: ManifestInit) -> Result<Self, PipelineError> {
        if manifest_path.exists() {
            return Err(PipelineError::Validation(format!(
                "{} already exists",
                manifest_path.display()
            )));
        }
        init.params.validate()?;
        if !(0.0..=1.0).contains(&init.backend.malformed_rate) {
            return Err(PipelineError::Validation("malformed rate outside [0, 1]".into()));
        }
        let dir = manifest_dir(manifest_path);
        let hash = schema.fingerprint();
        let run_id = init
            .run_id
            .unwrap_or_else(|| format!("run-{}-{}", init.params.seed, &hash[..12]));
        let manifest = PipelineManifest {
            run_id,
            schema_hash: hash,
            backend: init.backend,
            params: init.params,
            inputs: init.inputs,
            stages: Stage::ALL.into_iter().map(|s| (s, StageStatus::pending())).collect(),
        };
        let p = Self {
            manifest_path: manifest_path.to_path_buf(),
            dir,
            manifest,
            schema,
        };
        write_atomic(&p.dir.join(SCHEMA_FILE), p.schema.to_toml_string().as_bytes())
            .map_err(|e| failed("writing schema copy", e))?;
        p.save()?;
        Ok(p)
    }

    pub fn open(manifest_path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(manifest_path).map_err(|e| invalid(&manifest_path.display().to_string(), e))?;
        let manifest: PipelineManifest = serde_json::from_str(&text)
            .map_err(|e| failed(&format!("corrupt manifest {}", manifest_path.display()), e))?;
        let dir = manifest_dir(manifest_path);
        let schema = CulturalSchema::load(&dir.join(SCHEMA_FILE)).map_err(|e| failed("run schema copy", e))?;
        if schema.fingerprint() != manifest.schema_hash {
            return Err(PipelineError::Failed(format!(
                "schema copy in {} does not match the manifest hash",
                dir.display()
            )));
        }
        Ok(Self {
            manifest_path: manifest_path.to_path_buf(),
            dir,
            manifest,
            schema,
        })
    }

    pub fn save(&self) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        bytes.push(b'\n');
        write_atomic(&self.manifest_path, &bytes).map_err(|e| failed("writing manifest", e))
    }

    pub fn schema(&self) -> &CulturalSchema {
        &self.schema
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.dir.join("reports")
    }

    pub fn status(&self, stage: Stage) -> &StageStatus {
        &self.manifest.stages[&stage]
    }

    fn store(&self, name: &str) -> JsonlStore {
        JsonlStore::new(self.dir.join(name))
    }

    /// Marks `stage` and its downstream stages pending and deletes their outputs.
    pub fn reset(&mut self, stage: Stage) -> Result<(), PipelineError> {
        for s in stage.downstream() {
            for f in s.outputs() {
                self.store(f).remove()?;
            }
            if s == Stage::Report {
                let dir = self.reports_dir();
                if dir.exists() {
                    fs::remove_dir_all(&dir).map_err(|e| failed("clearing reports", e))?;
                }
            }
            self.manifest.stages.insert(s, StageStatus::pending());
        }
        self.save()
    }

    fn check_prerequisites(&self, stage: Stage, opts: &RunOptions) -> Result<(), PipelineError> {
        for &p in stage.prerequisites() {
            let st = self.status(p);
            let ok =
                st.state == StageState::Complete || (opts.allow_partial && st.state == StageState::Failed && st.ok > 0);
            if !ok {
                return Err(PipelineError::Prerequisite { stage, missing: p });
            }
        }
        Ok(())
    }

    /// Runs one stage. A complete stage is left as is.
    pub fn run_stage(&mut self, stage: Stage, opts: &RunOptions) -> Result<StageStatus, PipelineError> {
        if self.status(stage).state == StageState::Complete {
            log::info!("{stage} already complete");
            return Ok(self.status(stage).clone());
        }
        self.check_prerequisites(stage, opts)?;
        log::info!("running {stage}");
        let outcome = match stage {
            Stage::Generate => self.generate(opts),
            Stage::ElicitIw => self.elicit_iw(opts),
            Stage::Project => self.project_stage(),
            Stage::Mine => self.mine(),
            Stage::ElicitWvb => self.elicit_wvb_stage(opts),
            Stage::Align => self.align(),
            Stage::ElicitMfq => self.elicit_mfq(opts),
            Stage::MoralMap => self.moral_map(),
            Stage::SelectCore => self.select_core(),
            Stage::Report => reports::emit_reports(self),
        };
        let status = match outcome {
            Ok(st) => st,
            Err((partial, e)) => {
                let mut st = partial.unwrap_or_else(StageStatus::pending);
                st.state = StageState::Failed;
                st.message = Some(e.to_string());
                self.manifest.stages.insert(stage, st);
                self.save()?;
                return Err(e);
            }
        };
        self.manifest.stages.insert(stage, status.clone());
        self.save()?;
        Ok(status)
    }

    /// Every stage in order, stopping at the first error.
    pub fn run_all(&mut self, opts: &RunOptions) -> Result<(), PipelineError> {
        for s in Stage::ALL {
            self.run_stage(s, opts)?;
        }
        Ok(())
    }

    // ---- inputs ----

    pub fn configurations(&self) -> Vec<CulturalConfiguration> {
        let size = self.schema.space_size();
        let ids: Vec<u64> = match self.manifest.params.sample {
            Some(n) if (n as u64) < size => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.manifest.params.seed);
                let mut ids: Vec<u64> = rand::seq::index::sample(&mut rng, size as usize, n)
                    .into_iter()
                    .map(|i| i as u64)
                    .collect();
                ids.sort_unstable();
                ids
            }
            _ => (0..size).collect(),
        };
        ids.into_iter()
            .map(|i| self.schema.decode(ConfigId(i)).expect("id within space"))
            .collect()
    }

    pub fn indicator_schema(&self) -> Result<IndicatorSchema, PipelineError> {
        match &self.manifest.inputs.indicators {
            Some(p) => IndicatorSchema::load(p).map_err(|e| invalid("indicator schema", e)),
            None => Ok(IndicatorSchema::bundled()),
        }
    }

    pub fn question_bank(&self) -> Result<QuestionBank, PipelineError> {
        match &self.manifest.inputs.question_bank {
            Some(p) => QuestionBank::load(p).map_err(|e| invalid("question bank", e)),
            None => Ok(QuestionBank::bundled()),
        }
    }

    pub fn reference(&self) -> Result<ReferenceSet, PipelineError> {
        match self.manifest.inputs.reference.as_deref() {
            None => Err(PipelineError::Validation(format!(
                "align needs a reference file (or `{DEMO_SOURCE}` for synthetic data)"
            ))),
            Some(DEMO_SOURCE) => {
                log::warn!("aligning against synthetic demo reference distributions");
                Ok(demo_reference(&self.question_bank()?, self.manifest.params.seed))
            }
            Some(p) => {
                let f = fs::File::open(p).map_err(|e| invalid(p, e))?;
                load_reference(f).map_err(|e| invalid("reference", e))
            }
        }
    }

    pub fn oracle_matrix(&self) -> Result<OracleMatrix, PipelineError> {
        match self.manifest.inputs.oracle_matrix.as_deref() {
            None => Err(PipelineError::Validation(format!(
                "moral mapping needs an oracle matrix file (or `{DEMO_SOURCE}` for the illustrative one)"
            ))),
            Some(DEMO_SOURCE) => {
                log::warn!("using the illustrative demo oracle matrix");
                OracleMatrix::demo(&self.schema).map_err(|e| invalid("demo oracle matrix", e))
            }
            Some(p) => OracleMatrix::load(&self.schema, Path::new(p)).map_err(|e| invalid("oracle matrix", e)),
        }
    }

    pub fn item_map(&self) -> Result<ItemMap, PipelineError> {
        match &self.manifest.inputs.item_map {
            Some(p) => ItemMap::load(p).map_err(|e| invalid("item map", e)),
            None => Ok(ItemMap::bundled()),
        }
    }

    pub fn mfq_items(&self) -> Result<MfqItems, PipelineError> {
        match &self.manifest.inputs.mfq_items {
            Some(p) => MfqItems::load(p).map_err(|e| invalid("questionnaire items", e)),
            None => Ok(MfqItems::placeholder()),
        }
    }

    fn gateway(&self) -> Result<Gateway, PipelineError> {
        let b = &self.manifest.backend;
        let backend: Arc<dyn Backend> = match b.kind {
            BackendKind::Mock => Arc::new(
                MockBackend::new(
                    MockScript::full(self.manifest.params.seed).with_malformed_rate(b.malformed_rate),
                    self.schema.clone(),
                )
                .with_indicators(self.indicator_schema()?),
            ),
            BackendKind::Http => {
                let cfg = HttpConfig::from_env().map_err(PipelineError::Validation)?;
                Arc::new(HttpBackend::new(cfg).map_err(PipelineError::Validation)?)
            }
        };
        let retry = match b.kind {
            BackendKind::Mock => RetryPolicy::no_delay(b.max_retries),
            BackendKind::Http => RetryPolicy {
                max_retries: b.max_retries,
                ..RetryPolicy::default()
            },
        };
        let mut g = Gateway::new(backend)
            .with_retry(retry)
            .with_salt(b.salt.clone())
            .with_model_tag(b.model_tag.clone());
        if b.cache {
            g = g.with_cache(ResponseCache::open(&self.dir.join("cache")).map_err(|e| failed("opening cache", e))?);
        }
        Ok(g)
    }

    // ---- loaded outputs ----

    fn load<R: DeserializeOwned>(&self, name: &str) -> Result<Vec<R>, PipelineError> {
        Ok(self.store(name).load()?)
    }

    fn load_json<R: DeserializeOwned>(&self, name: &str) -> Result<R, PipelineError> {
        let path = self.dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| failed(&path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| failed(&format!("corrupt {}", path.display()), e))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("serializes");
        bytes.push(b'\n');
        write_atomic(&self.dir.join(name), &bytes).map_err(|e| failed(name, e))
    }

    pub fn personas(&self) -> Result<Vec<PersonaProfile>, PipelineError> {
        Ok(self
            .load::<PersonaRecord>("personas.jsonl")?
            .iter()
            .filter_map(PersonaRecord::profile)
            .collect())
    }

    pub fn points(&self) -> Result<Vec<IWPoint>, PipelineError> {
        self.load("iw_points.jsonl")
    }

    pub fn patterns(&self) -> Result<Vec<AggregatedPattern>, PipelineError> {
        self.load_json("patterns.json")
    }

    pub fn alignment(&self) -> Result<AlignmentReport, PipelineError> {
        let mut report: AlignmentReport = self.load_json("alignment.json")?;
        report.pairs = self.load("alignment_pairs.jsonl")?;
        Ok(report)
    }

    pub fn mfq_vectors(&self) -> Result<Vec<MoralVector>, PipelineError> {
        Ok(self
            .load::<MfqRecord>("mfq.jsonl")?
            .iter()
            .filter_map(MfqRecord::vector)
            .collect())
    }

    pub fn mft_vectors(&self) -> Result<Vec<MoralVector>, PipelineError> {
        self.load("mft.jsonl")
    }

    pub fn mft_core_vectors(&self) -> Result<Vec<MoralVector>, PipelineError> {
        self.load("mft_core.jsonl")
    }

    pub fn core_sets(&self) -> Result<Vec<CoreSetEntry>, PipelineError> {
        self.load_json("core_sets.json")
    }

    // ---- stages ----

    /// Shared resumable loop: items already in the store are skipped, new
    /// records are appended chunk by chunk, and the finished store is
    /// rewritten in config-id order.
    fn elicit_all<I, R, K, F>(
        &self,
        store_name: &str,
        items: &[I],
        key: K,
        is_ok: fn(&R) -> bool,
        workers: usize,
        f: F,
    ) -> StageResult
    where
        I: Sync,
        R: Serialize + DeserializeOwned + Keyed + Send,
        K: Fn(&I) -> ConfigId,
        F: Fn(&I) -> Result<R, GatewayError> + Sync + Send,
    {
        let store = self.store(store_name);
        let wanted: HashSet<ConfigId> = items.iter().map(&key).collect();
        let mut records: Vec<R> = store.load().map_err(|e| (None, e.into()))?;
        let mut done: HashSet<ConfigId> = records.iter().map(Keyed::key).collect();
        let todo: Vec<&I> = items.iter().filter(|i| !done.contains(&key(i))).collect();
        log::info!("{store_name}: {} stored, {} to do", done.len(), todo.len());
        let chunk = workers.max(1) * 4;
        let status_of = |records: &[R]| {
            let mut st = StageStatus::pending();
            st.total = items.len();
            for r in records.iter().filter(|r| wanted.contains(&r.key())) {
                if is_ok(r) {
                    st.ok += 1;
                } else {
                    st.failed += 1;
                }
            }
            st
        };
        for batch in todo.chunks(chunk) {
            let results = parallel_map(batch, workers, |i| f(i));
            let mut fresh = Vec::with_capacity(results.len());
            let mut error = None;
            for r in results {
                match r {
                    Ok(rec) => fresh.push(rec),
                    Err(e) => {
                        error.get_or_insert(e);
                    }
                }
            }
            store.append(&fresh).map_err(|e| (None, e.into()))?;
            done.extend(fresh.iter().map(Keyed::key));
            records.extend(fresh);
            if let Some(e) = error {
                return Err((Some(status_of(&records)), e.into()));
            }
        }
        records.sort_by_key(Keyed::key);
        records.dedup_by_key(|r| r.key());
        store.rewrite(&records).map_err(|e| (None, e.into()))?;
        let mut st = status_of(&records);
        st.state = StageState::Complete;
        Ok(st)
    }

    fn generate(&self, opts: &RunOptions) -> StageResult {
        let gateway = self.gateway().map_err(|e| (None, e))?;
        let gen = GenerationOptions {
            max_reasks: self.manifest.params.max_reasks,
            age_bounds: self.manifest.params.age_bounds,
        };
        let configs = self.configurations();
        self.elicit_all(
            "personas.jsonl",
            &configs,
            |c| c.id(),
            |r: &PersonaRecord| r.profile().is_some(),
            opts.workers,
            |c| generate_persona(&self.schema, c, &gateway, &gen),
        )
    }

    fn elicit_iw(&self, opts: &RunOptions) -> StageResult {
        let gateway = self.gateway().map_err(|e| (None, e))?;
        let ind = self.indicator_schema().map_err(|e| (None, e))?;
        let personas = self.personas().map_err(|e| (None, e))?;
        let n = self.manifest.params.max_reasks;
        self.elicit_all(
            "indicators.jsonl",
            &personas,
            |p| p.config_id,
            |r: &IndicatorRecord| r.vector().is_some(),
            opts.workers,
            |p| elicit_indicators(p, &ind, &gateway, n),
        )
    }

    fn elicit_wvb_stage(&self, opts: &RunOptions) -> StageResult {
        let gateway = self.gateway().map_err(|e| (None, e))?;
        let bank = self.question_bank().map_err(|e| (None, e))?;
        let personas = self.personas().map_err(|e| (None, e))?;
        let n = self.manifest.params.max_reasks;
        self.elicit_all(
            "wvb.jsonl",
            &personas,
            |p| p.config_id,
            |r: &WvbRecord| r.response().is_some(),
            opts.workers,
            |p| elicit_wvb(p, &bank, &gateway, n),
        )
    }

    fn elicit_mfq(&self, opts: &RunOptions) -> StageResult {
        let gateway = self.gateway().map_err(|e| (None, e))?;
        let items = self.mfq_items().map_err(|e| (None, e))?;
        let map = self.item_map().map_err(|e| (None, e))?;
        let personas = self.personas().map_err(|e| (None, e))?;
        let n = self.manifest.params.max_reasks;
        self.elicit_all(
            "mfq.jsonl",
            &personas,
            |p| p.config_id,
            |r: &MfqRecord| r.vector().is_some(),
            opts.workers,
            |p| elicit_mfq_scores(p, &items, &map, &gateway, n),
        )
    }

    fn project_stage(&self) -> StageResult {
        let run = || -> Result<StageStatus, PipelineError> {
            let ind = self.indicator_schema()?;
            let mut vectors: Vec<_> = self
                .load::<IndicatorRecord>("indicators.jsonl")?
                .iter()
                .filter_map(IndicatorRecord::vector)
                .collect();
            vectors.sort_by_key(|v| v.config_id);
            let proj = project(&ind, &vectors).map_err(|e| failed("projection", e))?;
            self.store("iw_points.jsonl").rewrite(&proj.points)?;
            write_points_csv(&self.dir.join("iw_points.csv"), &proj.points).map_err(|e| failed("iw_points.csv", e))?;
            self.write_json("iw_model.json", &proj.model)?;
            log::info!(
                "projected {} personas; rotated variance explained {:.3}",
                proj.points.len(),
                proj.model.variance_explained.iter().sum::<f64>()
            );
            Ok(StageStatus::complete(vectors.len(), proj.points.len(), 0))
        };
        run().map_err(|e| (None, e))
    }

    fn mine(&self) -> StageResult {
        let run = || -> Result<StageStatus, PipelineError> {
            let m = self.manifest.params.miner;
            let points = self.points()?;
            let cells = grid_assign(&points, m.cell_side).map_err(|e| match e {
                GridError::InvalidSide(_) => invalid("grid", e),
                _ => failed("grid", e),
            })?;
            let mined: Vec<CellMining> = mine_cells(&self.schema, &cells, m.min_support).map_err(|e| match e {
                MineError::InvalidSupport(_) => invalid("mining", e),
                _ => failed("mining", e),
            })?;
            self.store("cells.jsonl").rewrite(&mined)?;
            let patterns = filter_and_aggregate(&mined, m.rho, m.min_cells, m.singletons_in_max);
            self.write_json("patterns.json", &patterns)?;
            log::info!("{} cells, {} aggregated patterns", cells.len(), patterns.len());
            Ok(StageStatus::complete(cells.len(), patterns.len(), 0))
        };
        run().map_err(|e| (None, e))
    }

    fn align(&self) -> StageResult {
        let run = || -> Result<StageStatus, PipelineError> {
            let bank = self.question_bank()?;
            let reference = self.reference()?;
            let responses: Vec<_> = self
                .load::<WvbRecord>("wvb.jsonl")?
                .iter()
                .filter_map(WvbRecord::response)
                .collect();
            let groups = build_group_distributions(&bank, &responses);
            let mut report = alignment_report(&groups, &reference).map_err(|e| failed("alignment", e))?;
            self.store("alignment_pairs.jsonl").rewrite(&report.pairs)?;
            let pairs = std::mem::take(&mut report.pairs);
            self.write_json("alignment.json", &report)?;
            log::info!(
                "{} groups scored, {} pairs; weighted 1 - mean EMD {:.3}",
                report.groups.len(),
                pairs.len(),
                report.weighted.score
            );
            Ok(StageStatus::complete(
                groups.counts.len(),
                report.groups.len(),
                report.unscored_groups.len(),
            ))
        };
        run().map_err(|e| (None, e))
    }

    fn moral_map(&self) -> StageResult {
        let run = || -> Result<StageStatus, PipelineError> {
            let matrix = self.oracle_matrix()?;
            let all: Vec<usize> = (0..self.schema.len()).collect();
            let mfq = self.mfq_vectors()?;
            let mft = mfq
                .iter()
                .map(|m| {
                    let c = self.schema.decode(m.config_id).map_err(|e| failed("decode", e))?;
                    mft_inferred_vector(&c, &matrix, &all).map_err(|e| failed("inferred vector", e))
                })
                .collect::<Result<Vec<_>, _>>()?;
            self.store("mft.jsonl").rewrite(&mft)?;
            Ok(StageStatus::complete(mfq.len(), mft.len(), 0))
        };
        run().map_err(|e| (None, e))
    }

    fn select_core(&self) -> StageResult {
        let run = || -> Result<StageStatus, PipelineError> {
            let matrix = self.oracle_matrix()?;
            let mfq = self.mfq_vectors()?;
            let configs = mfq
                .iter()
                .map(|m| self.schema.decode(m.config_id).map_err(|e| failed("decode", e)))
                .collect::<Result<Vec<_>, _>>()?;
            let params = self.manifest.params.selection;
            let all: Vec<String> = matrix.variables().to_vec();
            let mut entries = Vec::new();
            for f in Foundation::ALL {
                let entry = match greedy_core_set_selection(f, &mfq, &configs, &matrix, &params) {
                    Ok(r) if !r.core_set.is_empty() => CoreSetEntry {
                        foundation: f,
                        subset: r.core_set.clone(),
                        fallback_full_set: false,
                        result: Some(r),
                        error: None,
                    },
                    Ok(r) => {
                        log::warn!("{f}: empty core set; inferred vector keeps all variables");
                        CoreSetEntry {
                            foundation: f,
                            subset: all.clone(),
                            fallback_full_set: true,
                            result: Some(r),
                            error: None,
                        }
                    }
                    Err(e) => {
                        log::warn!("{f}: selection failed ({e}); inferred vector keeps all variables");
                        CoreSetEntry {
                            foundation: f,
                            subset: all.clone(),
                            fallback_full_set: true,
                            result: None,
                            error: Some(e.to_string()),
                        }
                    }
                };
                entries.push(entry);
            }
            let subsets: BTreeMap<Foundation, Vec<usize>> = entries
                .iter()
                .map(|e| {
                    let idx = matrix.variable_indices(&e.subset).map_err(|x| failed("core set", x))?;
                    Ok((e.foundation, idx))
                })
                .collect::<Result<_, PipelineError>>()?;
            let core = configs
                .iter()
                .map(|c| mft_core_set_vector(c, &matrix, &subsets).map_err(|e| failed("core-set vector", e)))
                .collect::<Result<Vec<_>, _>>()?;
            self.write_json("core_sets.json", &entries)?;
            self.store("mft_core.jsonl").rewrite(&core)?;
            let failed_n = entries.iter().filter(|e| e.result.is_none()).count();
            Ok(StageStatus::complete(entries.len(), entries.len() - failed_n, failed_n))
        };
        run().map_err(|e| (None, e))
    }
}

type StageResult = Result<StageStatus, (Option<StageStatus>, PipelineError)>;

fn manifest_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
