//! Onboarding and the query path: embed, retrieve, build, generate,
//! sanitize, execute.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use insight_core::embedding::{EmbedError, Embedder};
use insight_core::gateway::{DecodingParams, GenerationError, Generator};
use insight_core::index::{ExampleEntry, NewEntry, VectorIndex};
use insight_core::prompt::{
    build_prompt, AssembledPrompt, DemoSource, NLQuestion, PromptError, PromptTemplate, SchemaDescriptor, Strategy,
    TemplateRegistry, DEFAULT_K,
};
use insight_core::result::{normalize_result, ResultTable};
use insight_core::sql::SanitizationVerdict;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetDir, ExampleRecord};
use crate::engine::{EngineError, QueryEngine};
use crate::generation::{generate, self_consistent_generate, ConsensusError, GeneratedSql};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryDefaults {
    pub strategy: Strategy,
    pub k: usize,
    pub n: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for QueryDefaults {
    fn default() -> Self {
        Self { strategy: Strategy::ContextualFewShot, k: DEFAULT_K, n: 1, temperature: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnboardRequest {
    pub dataset_id: String,
    pub schema: SchemaDescriptor,
    pub template: PromptTemplate,
    pub examples: Vec<ExampleRecord>,
    pub db_file: PathBuf,
}

impl From<DatasetDir> for OnboardRequest {
    fn from(d: DatasetDir) -> Self {
        Self {
            dataset_id: d.schema.dataset_id.clone(),
            schema: d.schema,
            template: d.template,
            examples: d.examples,
            db_file: d.db_path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnboardSummary {
    pub dataset_id: String,
    pub entries_added: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleDiagnostic {
    /// Zero-based position in the request.
    pub index: usize,
    pub question: String,
    pub problem: String,
}

#[derive(Debug, thiserror::Error)]
pub enum OnboardError {
    #[error("dataset `{0}` already exists")]
    Conflict(String),
    #[error("invalid onboarding request: {0}")]
    Invalid(String),
    #[error("{} example(s) failed validation", .0.len())]
    Examples(Vec<ExampleDiagnostic>),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub dataset_id: String,
    pub question: String,
    #[serde(default)]
    pub strategy: Option<Strategy>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub n: Option<usize>,
    /// Overrides the configured decoding seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl QueryRequest {
    pub fn new(dataset_id: impl Into<String>, question: impl Into<String>) -> Self {
        Self { dataset_id: dataset_id.into(), question: question.into(), strategy: None, k: None, n: None, seed: None }
    }
}

/// Milliseconds per step; a step that did not run is absent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieve: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub build: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sanitize: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub execute: Option<f64>,
}

impl Timings {
    /// Everything except generation.
    pub fn overhead(&self) -> f64 {
        [self.embed, self.retrieve, self.build, self.sanitize, self.execute].iter().flatten().sum()
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub sql: String,
    pub table: ResultTable,
    pub demonstrations_used: Vec<String>,
    pub timings: Timings,
    pub warnings: Vec<String>,
    pub strategy: Strategy,
    pub model_id: String,
    pub prompt_tokens: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error("generated SQL rejected by the sanitizer")]
    Rejected { sql: String, verdict: SanitizationVerdict, timings: Timings },
    #[error("execution exceeded {timeout_ms} ms")]
    Timeout { sql: String, timeout_ms: u64 },
    #[error("execution failed: {message}")]
    Execution { sql: String, message: String },
}

impl QueryError {
    /// The statement the backend produced, when the failure came after generation.
    pub fn sql(&self) -> Option<&str> {
        match self {
            QueryError::Rejected { sql, .. } | QueryError::Timeout { sql, .. } | QueryError::Execution { sql, .. } => Some(sql),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub index_entries: usize,
    pub datasets: usize,
}

/// Everything onboarding mutates, kept under one lock so readers never see
/// a dataset with entries but no template.
#[derive(Debug)]
struct Catalog {
    index: VectorIndex,
    templates: TemplateRegistry,
    datasets: BTreeMap<String, DatasetInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub schema: SchemaDescriptor,
    pub db_file: PathBuf,
}

/// A prompt ready for generation plus what went into it.
#[derive(Debug, Clone)]
pub struct PreparedPrompt {
    pub prompt: AssembledPrompt,
    pub demonstrations: Vec<String>,
    pub timings: Timings,
}

pub struct Pipeline {
    embedder: Arc<dyn Embedder>,
    generator: Arc<dyn Generator>,
    engine: QueryEngine,
    defaults: QueryDefaults,
    catalog: RwLock<Catalog>,
}

impl Pipeline {
    pub fn new(embedder: Arc<dyn Embedder>, generator: Arc<dyn Generator>, engine: QueryEngine, defaults: QueryDefaults) -> Self {
        let catalog = Catalog {
            index: VectorIndex::new(embedder.dim()),
            templates: TemplateRegistry::new(),
            datasets: BTreeMap::new(),
        };
        Self { embedder, generator, engine, defaults, catalog: RwLock::new(catalog) }
    }

    pub fn engine(&self) -> &QueryEngine {
        &self.engine
    }

    pub fn generator(&self) -> &Arc<dyn Generator> {
        &self.generator
    }

    pub fn defaults(&self) -> QueryDefaults {
        self.defaults
    }

    pub fn health(&self) -> Health {
        let c = self.catalog.read().unwrap();
        Health { status: "ok".into(), index_entries: c.index.len(), datasets: c.datasets.len() }
    }

    pub fn has_dataset(&self, dataset_id: &str) -> bool {
        self.catalog.read().unwrap().datasets.contains_key(dataset_id)
    }

    pub fn dataset_ids(&self) -> Vec<String> {
        self.catalog.read().unwrap().datasets.keys().cloned().collect()
    }

    pub fn index_len(&self, dataset_id: &str) -> usize {
        self.catalog.read().unwrap().index.dataset_len(dataset_id)
    }

    /// Validates every example by sanitizing and executing it, embeds the
    /// questions, then publishes entries, template and schema together.
    pub fn onboard(&self, req: OnboardRequest) -> Result<OnboardSummary, OnboardError> {
        let id = req.dataset_id.clone();
        if id.is_empty() {
            return Err(OnboardError::Invalid("dataset_id is empty".into()));
        }
        if req.schema.dataset_id != id || req.template.dataset_id != id {
            return Err(OnboardError::Invalid(format!(
                "schema ({}) and template ({}) must both name dataset `{id}`",
                req.schema.dataset_id, req.template.dataset_id
            )));
        }
        req.schema.validate().map_err(|e| OnboardError::Invalid(e.to_string()))?;
        req.template.validate().map_err(|e| OnboardError::Invalid(e.to_string()))?;
        if self.has_dataset(&id) {
            return Err(OnboardError::Conflict(id));
        }
        if !req.db_file.is_file() {
            return Err(OnboardError::Invalid(format!("database file {} does not exist", req.db_file.display())));
        }

        let mut problems = Vec::new();
        for (index, ex) in req.examples.iter().enumerate() {
            let problem = if ex.question.trim().is_empty() {
                Some("question is empty".to_string())
            } else {
                match self.engine.execute_file(&ex.sql, &id, &req.db_file, self.engine.options()) {
                    Ok(_) => None,
                    Err(EngineError::Rejected(v)) => Some(format!(
                        "sanitizer rejected the SQL: {}",
                        v.violations.iter().map(|x| format!("{:?} {}", x.rule, x.detail)).collect::<Vec<_>>().join("; ")
                    )),
                    Err(e) => Some(e.to_string()),
                }
            };
            if let Some(problem) = problem {
                problems.push(ExampleDiagnostic { index, question: ex.question.clone(), problem });
            }
        }
        if !problems.is_empty() {
            return Err(OnboardError::Examples(problems));
        }

        let questions: Vec<&str> = req.examples.iter().map(|e| e.question.as_str()).collect();
        let vectors = self.embedder.embed_batch(&questions)?;
        let entries: Vec<NewEntry> = req
            .examples
            .iter()
            .zip(vectors)
            .map(|(e, embedding)| NewEntry {
                dataset_id: id.clone(),
                question: e.question.clone(),
                sql: e.sql.clone(),
                embedding,
                tags: e.tags.clone(),
            })
            .collect();

        let mut c = self.catalog.write().unwrap();
        if c.datasets.contains_key(&id) {
            return Err(OnboardError::Conflict(id));
        }
        let added = c
            .index
            .add_all(entries)
            .map_err(|(i, e)| OnboardError::Examples(vec![ExampleDiagnostic {
                index: i,
                question: req.examples[i].question.clone(),
                problem: e.to_string(),
            }]))?
            .len();
        c.index.register_dataset(&id);
        c.templates.register(req.template).expect("template validated above");
        c.datasets.insert(id.clone(), DatasetInfo { schema: req.schema, db_file: req.db_file.clone() });
        self.engine.register(&id, req.db_file);
        Ok(OnboardSummary { dataset_id: id, entries_added: added })
    }

    /// Steps 1 to 4: embed, retrieve and assemble the prompt.
    pub fn prepare(&self, req: &QueryRequest) -> Result<PreparedPrompt, QueryError> {
        let strategy = req.strategy.unwrap_or(self.defaults.strategy);
        let k = req.k.unwrap_or(self.defaults.k);
        let mut timings = Timings::default();
        let c = self.catalog.read().unwrap();
        let info = c.datasets.get(&req.dataset_id).ok_or_else(|| QueryError::UnknownDataset(req.dataset_id.clone()))?;
        let question = NLQuestion::new(req.question.clone(), req.dataset_id.clone())?;

        let statics: Vec<ExampleEntry>;
        let ranked: Vec<&ExampleEntry>;
        let source = match strategy {
            Strategy::ContextualFewShot if k > 0 => {
                let t = Instant::now();
                let query = self.embedder.embed_text(&question.text).map_err(PromptError::from)?;
                timings.embed = Some(ms_since(t));
                let t = Instant::now();
                ranked = c
                    .index
                    .search(&query, k, &req.dataset_id)
                    .map_err(PromptError::from)?
                    .into_iter()
                    .map(|h| h.entry)
                    .collect();
                timings.retrieve = Some(ms_since(t));
                DemoSource::Ranked(&ranked)
            }
            Strategy::FewShot => {
                statics = c.index.dataset_entries(&req.dataset_id).take(k).cloned().collect();
                DemoSource::Static(&statics)
            }
            _ => DemoSource::None,
        };
        let t = Instant::now();
        let prompt = build_prompt(&c.templates, &question, &info.schema, strategy, k, source)?;
        timings.build = Some(ms_since(t));
        let demonstrations = prompt
            .demonstration_ids
            .iter()
            .filter_map(|id| c.index.get(*id))
            .map(|e| e.question.clone())
            .collect();
        Ok(PreparedPrompt { prompt, demonstrations, timings })
    }

    pub fn answer(&self, req: &QueryRequest) -> Result<QueryResponse, QueryError> {
        self.answer_with(req, self.generator.as_ref())
    }

    /// The full query path against an explicit backend.
    pub fn answer_with(&self, req: &QueryRequest, backend: &dyn Generator) -> Result<QueryResponse, QueryError> {
        let PreparedPrompt { prompt, demonstrations, mut timings } = self.prepare(req)?;
        let n = req.n.unwrap_or(self.defaults.n).max(1);
        let params = DecodingParams {
            temperature: self.defaults.temperature,
            seed: req.seed.unwrap_or(self.defaults.seed),
            ..DecodingParams::default()
        };

        let t = Instant::now();
        let generated: GeneratedSql = if n == 1 {
            generate(backend, &prompt, &params)?
        } else {
            let ds = req.dataset_id.as_str();
            let exec = |sql: &str| self.engine.execute(sql, ds).ok().map(|t| normalize_result(&t, false));
            self_consistent_generate(backend, &prompt, n, &params, self.engine.guard(), &exec)?.chosen
        };
        timings.generate = Some(ms_since(t));

        let t = Instant::now();
        let verdict = self.engine.guard().sanitize(&generated.sql);
        timings.sanitize = Some(ms_since(t));
        if !verdict.allowed {
            return Err(QueryError::Rejected { sql: generated.sql, verdict, timings });
        }

        let t = Instant::now();
        let table = match self.engine.execute(&generated.sql, &req.dataset_id) {
            Ok(table) => table,
            Err(EngineError::Timeout { timeout_ms, .. }) => return Err(QueryError::Timeout { sql: generated.sql, timeout_ms }),
            Err(e) => return Err(QueryError::Execution { sql: generated.sql, message: e.to_string() }),
        };
        timings.execute = Some(ms_since(t));

        Ok(QueryResponse {
            sql: generated.sql,
            table,
            demonstrations_used: demonstrations,
            timings,
            warnings: prompt.warnings.iter().map(ToString::to_string).collect(),
            strategy: prompt.strategy,
            model_id: generated.model_id,
            prompt_tokens: prompt.token_count(),
        })
    }

    /// Writes the index, templates and dataset registry under `dir`.
    pub fn save_state(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let c = self.catalog.read().unwrap();
        fs::write(dir.join(INDEX_FILE), c.index.encode())?;
        let templates: Vec<&PromptTemplate> = c.templates.iter().collect();
        fs::write(dir.join(TEMPLATES_FILE), serde_json::to_vec_pretty(&templates)?)?;
        fs::write(dir.join(DATASETS_FILE), serde_json::to_vec_pretty(&c.datasets)?)?;
        Ok(())
    }

    /// Replaces the catalog with one saved by [`Pipeline::save_state`].
    pub fn load_state(&self, dir: &Path) -> Result<(), StateError> {
        let index = VectorIndex::decode(&fs::read(dir.join(INDEX_FILE))?).map_err(|e| StateError::Format(e.to_string()))?;
        if index.dim() != self.embedder.dim() {
            return Err(StateError::Format(format!("index dimension {} but embedder dimension {}", index.dim(), self.embedder.dim())));
        }
        let templates: Vec<PromptTemplate> = serde_json::from_slice(&fs::read(dir.join(TEMPLATES_FILE))?)?;
        let datasets: BTreeMap<String, DatasetInfo> = serde_json::from_slice(&fs::read(dir.join(DATASETS_FILE))?)?;
        let mut registry = TemplateRegistry::new();
        for t in templates {
            registry.register(t).map_err(|e| StateError::Format(e.to_string()))?;
        }
        let mut index = index;
        for (id, info) in &datasets {
            if !registry.contains(id) {
                return Err(StateError::Format(format!("dataset `{id}` has no template")));
            }
            index.register_dataset(id);
            self.engine.register(id, info.db_file.clone());
        }
        *self.catalog.write().unwrap() = Catalog { index, templates: registry, datasets };
        Ok(())
    }
}

pub const INDEX_FILE: &str = "index.bin";
pub const TEMPLATES_FILE: &str = "templates.json";
pub const DATASETS_FILE: &str = "datasets.json";

#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("corrupt state: {0}")]
    Format(String),
}
