//! Schema rendering, per-dataset instruction templates and prompt assembly.
//!
//! Every assembled prompt has the same section order: system instructions
//! (the text starts with them), the schema block, the optional
//! demonstrations block and finally the user question. Demonstrations are
//! rendered as `Q: ...` / `SQL: ...` pairs, preceded by a `-- tags:` comment
//! when the example carries tags.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbedError, Embedder};
use crate::index::{ExampleEntry, IndexError, VectorIndex};

pub const DEFAULT_K: usize = 4;

pub const SCHEMA_MARKER: &str = "### Database Schema";
pub const DEMONSTRATIONS_MARKER: &str = "### Demonstrations";
pub const QUESTION_MARKER: &str = "### Question";
pub const TAGS_PREFIX: &str = "-- tags: ";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("no prompt template registered for dataset `{0}`")]
    TemplateMissing(String),
    #[error("few-shot prompting requires static examples")]
    StaticExamplesMissing,
    #[error("contextual few-shot prompting requires an embedder and an index")]
    RetrievalMissing,
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("question must not be empty")]
    EmptyQuestion,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub sql_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDescriptor {
    pub dataset_id: String,
    pub tables: Vec<TableDef>,
}

impl SchemaDescriptor {
    pub fn validate(&self) -> Result<(), PromptError> {
        let mut tables = BTreeSet::new();
        for t in &self.tables {
            if t.name.is_empty() || !tables.insert(t.name.to_lowercase()) {
                return Err(PromptError::InvalidSchema(format!("duplicate or empty table `{}`", t.name)));
            }
            let mut cols = BTreeSet::new();
            for c in &t.columns {
                if c.name.is_empty() || !cols.insert(c.name.to_lowercase()) {
                    return Err(PromptError::InvalidSchema(format!(
                        "duplicate or empty column `{}` in `{}`",
                        c.name, t.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Canonical `CREATE TABLE` block.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tables.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "CREATE TABLE {} (", t.name);
            for (j, c) in t.columns.iter().enumerate() {
                let sep = if j + 1 == t.columns.len() { "" } else { "," };
                let _ = writeln!(out, "  {} {}{}", c.name, c.sql_type, sep);
            }
            out.push_str(");\n");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub dataset_id: String,
    pub system_instructions: String,
    #[serde(default)]
    pub demonstration_header: String,
    #[serde(default)]
    pub question_prefix: String,
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.dataset_id.is_empty() {
            return Err(PromptError::InvalidTemplate("dataset_id is empty".into()));
        }
        if self.system_instructions.trim().is_empty() {
            return Err(PromptError::InvalidTemplate("system_instructions is empty".into()));
        }
        Ok(())
    }
}

/// Instruction templates keyed by dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces any template already registered for the dataset.
    pub fn register(&mut self, template: PromptTemplate) -> Result<(), PromptError> {
        template.validate()?;
        self.templates.insert(template.dataset_id.clone(), template);
        Ok(())
    }

    pub fn get(&self, dataset_id: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(dataset_id)
            .ok_or_else(|| PromptError::TemplateMissing(dataset_id.into()))
    }

    pub fn contains(&self, dataset_id: &str) -> bool {
        self.templates.contains_key(dataset_id)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NLQuestion {
    pub text: String,
    pub dataset_id: String,
}

impl NLQuestion {
    pub fn new(text: impl Into<String>, dataset_id: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(PromptError::EmptyQuestion);
        }
        Ok(Self { text, dataset_id: dataset_id.into() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "ZS")]
    ZeroShot,
    #[serde(rename = "FS")]
    FewShot,
    #[serde(rename = "CFS")]
    ContextualFewShot,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "ZS",
            Strategy::FewShot => "FS",
            Strategy::ContextualFewShot => "CFS",
        }
    }
}

impl core::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ZS" => Ok(Strategy::ZeroShot),
            "FS" => Ok(Strategy::FewShot),
            "CFS" => Ok(Strategy::ContextualFewShot),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptWarning {
    /// Fewer examples were available than requested.
    PoolSmallerThanK { requested: usize, available: usize },
    /// No examples were available; the prompt carries no demonstrations.
    DegradedToZeroShot,
}

impl core::fmt::Display for PromptWarning {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            PromptWarning::PoolSmallerThanK { requested, available } => {
                write!(f, "pool holds {available} examples, fewer than k={requested}")
            }
            PromptWarning::DegradedToZeroShot => f.write_str("degraded to zero-shot: example pool is empty"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    pub text: String,
    pub strategy: Strategy,
    pub k_used: usize,
    pub demonstration_ids: Vec<u64>,
    #[serde(default)]
    pub warnings: Vec<PromptWarning>,
}

impl AssembledPrompt {
    /// Whitespace-delimited token count, a proxy for model cost.
    pub fn token_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

/// Where demonstrations come from.
#[derive(Clone, Copy)]
pub enum DemoSource<'a> {
    None,
    Static(&'a [ExampleEntry]),
    Retrieval { embedder: &'a dyn Embedder, index: &'a VectorIndex },
    /// Hits the caller already retrieved, best first.
    Ranked(&'a [&'a ExampleEntry]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection<'a> {
    pub entries: Vec<&'a ExampleEntry>,
    pub warning: Option<PromptWarning>,
}

/// Top-`k` pool entries for the question, in retrieval rank order.
pub fn select_demonstrations<'a>(
    question: &NLQuestion,
    k: usize,
    embedder: &dyn Embedder,
    index: &'a VectorIndex,
) -> Result<Selection<'a>, PromptError> {
    let query = embedder.embed_text(&question.text)?;
    let hits = index.search(&query, k, &question.dataset_id)?;
    let warning = shortfall(k, hits.len());
    Ok(Selection { entries: hits.into_iter().map(|h| h.entry).collect(), warning })
}

pub fn shortfall(k: usize, available: usize) -> Option<PromptWarning> {
    match available {
        0 => Some(PromptWarning::DegradedToZeroShot),
        n if n < k => Some(PromptWarning::PoolSmallerThanK { requested: k, available: n }),
        _ => None,
    }
}

pub fn build_prompt(
    templates: &TemplateRegistry,
    question: &NLQuestion,
    schema: &SchemaDescriptor,
    strategy: Strategy,
    k: usize,
    source: DemoSource<'_>,
) -> Result<AssembledPrompt, PromptError> {
    let template = templates.get(&question.dataset_id)?;
    if question.text.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    let mut warnings = Vec::new();
    let demos: Vec<&ExampleEntry> = match (strategy, source) {
        (Strategy::ZeroShot, _) => Vec::new(),
        (_, _) if k == 0 => Vec::new(),
        (Strategy::FewShot, DemoSource::Static(pool)) => {
            if pool.is_empty() {
                warnings.push(PromptWarning::DegradedToZeroShot);
            } else if pool.len() < k {
                warnings.push(PromptWarning::PoolSmallerThanK { requested: k, available: pool.len() });
            }
            pool.iter().take(k).collect()
        }
        (Strategy::FewShot, _) => return Err(PromptError::StaticExamplesMissing),
        (Strategy::ContextualFewShot, DemoSource::Retrieval { embedder, index }) => {
            let sel = select_demonstrations(question, k, embedder, index)?;
            warnings.extend(sel.warning);
            sel.entries
        }
        (Strategy::ContextualFewShot, DemoSource::Ranked(hits)) => {
            warnings.extend(shortfall(k, hits.len()));
            hits.iter().take(k).copied().collect()
        }
        (Strategy::ContextualFewShot, _) => return Err(PromptError::RetrievalMissing),
    };
    Ok(AssembledPrompt {
        text: render(template, schema, &demos, &question.text),
        strategy,
        k_used: demos.len(),
        demonstration_ids: demos.iter().map(|d| d.id).collect(),
        warnings,
    })
}

fn render(template: &PromptTemplate, schema: &SchemaDescriptor, demos: &[&ExampleEntry], question: &str) -> String {
    let mut out = String::new();
    out.push_str(template.system_instructions.trim_end());
    out.push_str("\n\n");
    out.push_str(SCHEMA_MARKER);
    out.push('\n');
    out.push_str(&schema.render());
    if !demos.is_empty() {
        out.push('\n');
        out.push_str(DEMONSTRATIONS_MARKER);
        out.push('\n');
        if !template.demonstration_header.trim().is_empty() {
            out.push_str(template.demonstration_header.trim_end());
            out.push('\n');
        }
        for d in demos {
            out.push('\n');
            if !d.tags.is_empty() {
                out.push_str(TAGS_PREFIX);
                out.push_str(&d.tags.join(", "));
                out.push('\n');
            }
            let _ = writeln!(out, "Q: {}", one_line(&d.question));
            let _ = writeln!(out, "SQL: {}", one_line(&d.sql));
        }
    }
    out.push('\n');
    out.push_str(QUESTION_MARKER);
    out.push('\n');
    if !template.question_prefix.trim().is_empty() {
        out.push_str(template.question_prefix.trim_end());
        out.push('\n');
    }
    let _ = writeln!(out, "Q: {}", one_line(question));
    out.push_str("SQL:");
    out
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The parts of an assembled prompt a model needs to read back.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub question: Option<String>,
    /// Demonstrations as (tags, question, sql).
    pub demonstrations: Vec<(Vec<String>, String, String)>,
}

pub fn parse_prompt(text: &str) -> ParsedPrompt {
    let (body, question_part) = match text.rfind(QUESTION_MARKER) {
        Some(at) => (&text[..at], &text[at..]),
        None => (text, ""),
    };
    let question = question_part
        .lines()
        .find_map(|l| l.strip_prefix("Q: "))
        .map(|q| q.trim().to_string());
    let mut demonstrations = Vec::new();
    if let Some(at) = body.find(DEMONSTRATIONS_MARKER) {
        let mut tags = Vec::new();
        let mut q: Option<String> = None;
        for line in body[at..].lines() {
            if let Some(t) = line.strip_prefix(TAGS_PREFIX) {
                tags = t.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            } else if let Some(text) = line.strip_prefix("Q: ") {
                q = Some(text.trim().to_string());
            } else if let Some(sql) = line.strip_prefix("SQL: ") {
                if let Some(q) = q.take() {
                    demonstrations.push((core::mem::take(&mut tags), q, sql.trim().to_string()));
                }
            }
        }
    }
    ParsedPrompt { question, demonstrations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ReferenceEmbedder;
    use crate::index::NewEntry;
    use alloc::vec;

    fn schema() -> SchemaDescriptor {
        SchemaDescriptor {
            dataset_id: "sales".into(),
            tables: vec![TableDef {
                name: "monthly_sales".into(),
                columns: vec![
                    ColumnDef { name: "region".into(), sql_type: "TEXT".into() },
                    ColumnDef { name: "amount".into(), sql_type: "REAL".into() },
                ],
            }],
        }
    }

    fn registry(instr: &str) -> TemplateRegistry {
        let mut r = TemplateRegistry::new();
        r.register(PromptTemplate {
            dataset_id: "sales".into(),
            system_instructions: instr.into(),
            demonstration_header: "Examples:".into(),
            question_prefix: String::new(),
        })
        .unwrap();
        r
    }

    fn pool(n: usize) -> (ReferenceEmbedder, VectorIndex) {
        let e = ReferenceEmbedder::default();
        let mut idx = VectorIndex::new(256);
        idx.register_dataset("sales");
        let qs = [
            "compare revenue year over year",
            "total sales by region",
            "average monthly amount",
            "count of months with sales",
            "largest single month",
        ];
        for q in qs.iter().take(n) {
            idx.add_entry(NewEntry {
                dataset_id: "sales".into(),
                question: (*q).into(),
                sql: format!("SELECT '{q}'"),
                embedding: e.embed_text(q).unwrap(),
                tags: vec![],
            })
            .unwrap();
        }
        (e, idx)
    }

    #[test]
    fn render_schema_is_create_table() {
        let s = schema();
        assert_eq!(s.render(), "CREATE TABLE monthly_sales (\n  region TEXT,\n  amount REAL\n);\n");
        assert!(s.validate().is_ok());
        let mut dup = s.clone();
        dup.tables[0].columns.push(ColumnDef { name: "REGION".into(), sql_type: "TEXT".into() });
        assert!(dup.validate().is_err());
    }

    #[test]
    fn zero_shot_has_no_demonstrations() {
        let q = NLQuestion::new("total sales", "sales").unwrap();
        let p = build_prompt(&registry("Write SQL."), &q, &schema(), Strategy::ZeroShot, 4, DemoSource::None).unwrap();
        assert!(p.text.starts_with("Write SQL."));
        assert_eq!(p.k_used, 0);
        assert!(p.demonstration_ids.is_empty());
        assert!(!p.text.contains(DEMONSTRATIONS_MARKER));
        assert!(p.text.ends_with("Q: total sales\nSQL:"));
    }

    #[test]
    fn template_missing_and_replacement() {
        let q = NLQuestion::new("total", "nope").unwrap();
        assert_eq!(
            build_prompt(&registry("x"), &q, &schema(), Strategy::ZeroShot, 4, DemoSource::None),
            Err(PromptError::TemplateMissing("nope".into()))
        );
        let mut r = registry("old instructions");
        r.register(PromptTemplate {
            dataset_id: "sales".into(),
            system_instructions: "new instructions".into(),
            demonstration_header: String::new(),
            question_prefix: String::new(),
        })
        .unwrap();
        let q = NLQuestion::new("total", "sales").unwrap();
        let p = build_prompt(&r, &q, &schema(), Strategy::ZeroShot, 4, DemoSource::None).unwrap();
        assert!(p.text.starts_with("new instructions"));
        assert!(r
            .register(PromptTemplate {
                dataset_id: "x".into(),
                system_instructions: " ".into(),
                demonstration_header: String::new(),
                question_prefix: String::new()
            })
            .is_err());
    }

    #[test]
    fn contextual_uses_retrieval_and_degrades() {
        let (e, idx) = pool(5);
        let q = NLQuestion::new("compare revenue year over year", "sales").unwrap();
        let src = DemoSource::Retrieval { embedder: &e, index: &idx };
        let p = build_prompt(&registry("Write SQL."), &q, &schema(), Strategy::ContextualFewShot, 4, src).unwrap();
        assert_eq!(p.k_used, 4);
        assert_eq!(p.demonstration_ids[0], 1);
        assert!(p.warnings.is_empty());

        let (e, idx) = pool(2);
        let src = DemoSource::Retrieval { embedder: &e, index: &idx };
        let p = build_prompt(&registry("Write SQL."), &q, &schema(), Strategy::ContextualFewShot, 4, src).unwrap();
        assert_eq!(p.k_used, 2);
        assert_eq!(p.warnings, vec![PromptWarning::PoolSmallerThanK { requested: 4, available: 2 }]);

        let (e, idx) = pool(0);
        let src = DemoSource::Retrieval { embedder: &e, index: &idx };
        let p = build_prompt(&registry("Write SQL."), &q, &schema(), Strategy::ContextualFewShot, 4, src).unwrap();
        assert_eq!(p.k_used, 0);
        assert_eq!(p.warnings, vec![PromptWarning::DegradedToZeroShot]);
    }

    #[test]
    fn few_shot_requires_static_examples() {
        let q = NLQuestion::new("total", "sales").unwrap();
        assert_eq!(
            build_prompt(&registry("x"), &q, &schema(), Strategy::FewShot, 4, DemoSource::None),
            Err(PromptError::StaticExamplesMissing)
        );
        let (_, idx) = pool(5);
        let stat: Vec<ExampleEntry> = idx.entries().to_vec();
        let p = build_prompt(&registry("x"), &q, &schema(), Strategy::FewShot, 3, DemoSource::Static(&stat)).unwrap();
        assert_eq!(p.demonstration_ids, vec![1, 2, 3]);
    }

    #[test]
    fn contextual_with_zero_k_matches_zero_shot_text() {
        let (e, idx) = pool(5);
        let q = NLQuestion::new("total sales by region", "sales").unwrap();
        let r = registry("Write SQL.");
        let zs = build_prompt(&r, &q, &schema(), Strategy::ZeroShot, 0, DemoSource::None).unwrap();
        let cfs = build_prompt(&r, &q, &schema(), Strategy::ContextualFewShot, 0, DemoSource::Retrieval { embedder: &e, index: &idx })
            .unwrap();
        assert_eq!(zs.text, cfs.text);
    }

    #[test]
    fn parse_round_trip() {
        let (e, mut idx) = pool(0);
        idx.add_entry(NewEntry {
            dataset_id: "sales".into(),
            question: "total sales in north".into(),
            sql: "SELECT SUM(amount) FROM monthly_sales WHERE region = 'north'".into(),
            embedding: e.embed_text("total sales in north").unwrap(),
            tags: vec!["family:total_region".into()],
        })
        .unwrap();
        let q = NLQuestion::new("total sales in south", "sales").unwrap();
        let p = build_prompt(&registry("x"), &q, &schema(), Strategy::ContextualFewShot, 4, DemoSource::Retrieval { embedder: &e, index: &idx })
            .unwrap();
        let parsed = parse_prompt(&p.text);
        assert_eq!(parsed.question.as_deref(), Some("total sales in south"));
        assert_eq!(parsed.demonstrations.len(), 1);
        assert_eq!(parsed.demonstrations[0].0, vec![String::from("family:total_region")]);
        assert_eq!(parsed.demonstrations[0].1, "total sales in north");
    }
}
