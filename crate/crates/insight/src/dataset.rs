//! Dataset directories on disk: schema, template, example pool, fixture data.
//!
//! ```text
//! <dir>/schema.json      SchemaDescriptor
//! <dir>/template.json    PromptTemplate
//! <dir>/examples.jsonl   one {question, sql, tags?} per line
//! <dir>/fixture.db       SQLite file queried read-only
//! <dir>/families.json    optional catalog for the simulated model
//! <dir>/<table>.csv      optional, used by build_fixture_db
//! ```

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use insight_core::gateway::FamilyCatalog;
use insight_core::prompt::{PromptTemplate, SchemaDescriptor};
use rusqlite::types::Value as SqlValue;
use rusqlite::Connection;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const SCHEMA_FILE: &str = "schema.json";
pub const TEMPLATE_FILE: &str = "template.json";
pub const EXAMPLES_FILE: &str = "examples.jsonl";
pub const DB_FILE: &str = "fixture.db";
pub const FAMILIES_FILE: &str = "families.json";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("missing {}", .0.display())]
    Missing(PathBuf),
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("fixture build failed: {0}")]
    Build(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub question: String,
    pub sql: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

/// A fully loaded dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetDir {
    pub root: PathBuf,
    pub schema: SchemaDescriptor,
    pub template: PromptTemplate,
    pub examples: Vec<ExampleRecord>,
    pub db_path: PathBuf,
}

impl DatasetDir {
    pub fn load(root: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let root = root.as_ref().to_path_buf();
        let schema: SchemaDescriptor = read_json(&root.join(SCHEMA_FILE))?;
        let template: PromptTemplate = read_json(&root.join(TEMPLATE_FILE))?;
        let examples = read_jsonl(&root.join(EXAMPLES_FILE))?;
        let db_path = require(root.join(DB_FILE))?;
        Ok(Self { root, schema, template, examples, db_path })
    }

    pub fn dataset_id(&self) -> &str {
        &self.schema.dataset_id
    }

    /// The simulated model's family catalog, if the directory ships one.
    pub fn families(&self) -> Result<Option<FamilyCatalog>, DatasetError> {
        let path = self.root.join(FAMILIES_FILE);
        if path.is_file() {
            read_json(&path).map(Some)
        } else {
            Ok(None)
        }
    }
}

fn require(path: PathBuf) -> Result<PathBuf, DatasetError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(DatasetError::Missing(path))
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(require(path.to_path_buf())?)
        .map_err(|source| DatasetError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Parse { path: path.into(), line: e.line(), message: e.to_string() })
}

/// Reads a JSON Lines file, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = fs::File::open(require(path.to_path_buf())?).map_err(|source| DatasetError::Io { path: path.into(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Creates `out` from `<table>.csv` files next to the schema, one table per
/// schema entry. Column affinity follows the declared SQL type. An existing
/// file at `out` is replaced.
pub fn build_fixture_db(csv_dir: &Path, schema: &SchemaDescriptor, out: &Path) -> Result<usize, DatasetError> {
    let build = |m: String| DatasetError::Build(m);
    if out.exists() {
        fs::remove_file(out).map_err(|source| DatasetError::Io { path: out.into(), source })?;
    }
    let mut conn = Connection::open(out).map_err(|e| build(e.to_string()))?;
    let tx = conn.transaction().map_err(|e| build(e.to_string()))?;
    let mut total = 0;
    for table in &schema.tables {
        let cols: Vec<String> = table.columns.iter().map(|c| format!("\"{}\" {}", c.name, c.sql_type)).collect();
        tx.execute_batch(&format!("CREATE TABLE \"{}\" ({});", table.name, cols.join(", ")))
            .map_err(|e| build(e.to_string()))?;

        let path = csv_dir.join(format!("{}.csv", table.name));
        let mut reader = csv::Reader::from_path(&path).map_err(|e| build(format!("{}: {e}", path.display())))?;
        let headers = reader.headers().map_err(|e| build(e.to_string()))?.clone();
        let order: Vec<usize> = table
            .columns
            .iter()
            .map(|c| {
                headers
                    .iter()
                    .position(|h| h == c.name)
                    .ok_or_else(|| build(format!("{}: no column `{}`", path.display(), c.name)))
            })
            .collect::<Result<_, _>>()?;

        let placeholders = vec!["?"; order.len()].join(", ");
        let mut stmt = tx
            .prepare(&format!("INSERT INTO \"{}\" VALUES ({placeholders})", table.name))
            .map_err(|e| build(e.to_string()))?;
        for (n, record) in reader.records().enumerate() {
            let record = record.map_err(|e| build(e.to_string()))?;
            let values: Vec<SqlValue> = order
                .iter()
                .zip(&table.columns)
                .map(|(&i, col)| typed(record.get(i).unwrap_or(""), &col.sql_type))
                .collect::<Result<_, _>>()
                .map_err(|m| build(format!("{} row {}: {m}", path.display(), n + 2)))?;
            stmt.execute(rusqlite::params_from_iter(values)).map_err(|e| build(e.to_string()))?;
            total += 1;
        }
    }
    tx.commit().map_err(|e| build(e.to_string()))?;
    Ok(total)
}

fn typed(raw: &str, sql_type: &str) -> Result<SqlValue, String> {
    if raw.is_empty() {
        return Ok(SqlValue::Null);
    }
    let ty = sql_type.to_ascii_uppercase();
    if ty.contains("INT") {
        raw.parse().map(SqlValue::Integer).map_err(|_| format!("`{raw}` is not an integer"))
    } else if ty.contains("REAL") || ty.contains("FLOA") || ty.contains("DOUB") || ty.contains("NUM") {
        raw.parse().map(SqlValue::Real).map_err(|_| format!("`{raw}` is not a number"))
    } else {
        Ok(SqlValue::Text(raw.to_string()))
    }
}
