//! Read-only execution of sanitized SQL against per-dataset SQLite files.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;
use std::time::{Duration, Instant};

use insight_core::eval::order_sensitive;
use insight_core::result::{normalize_result, ResultSignature, ResultTable, Value};
use insight_core::sql::{Guard, SanitizationVerdict};
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};

pub const DEFAULT_TIMEOUT_MS: u64 = 5_000;
pub const DEFAULT_ROW_LIMIT: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("statement rejected by the sanitizer")]
    Rejected(SanitizationVerdict),
    #[error("query on `{dataset}` exceeded {timeout_ms} ms")]
    Timeout { dataset: String, timeout_ms: u64 },
    #[error("dataset `{dataset}`: {message}")]
    Sql { dataset: String, message: String },
    #[error("cannot open database for `{dataset}` at {path}: {message}")]
    Open { dataset: String, path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    pub timeout_ms: u64,
    pub row_limit: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self { timeout_ms: DEFAULT_TIMEOUT_MS, row_limit: DEFAULT_ROW_LIMIT }
    }
}

/// Maps dataset ids to database files and runs statements against them.
///
/// Each call opens its own read-only connection with `query_only` set, so
/// connections are never shared between threads. Changes reported by SQLite
/// are accumulated in a write counter that should stay at zero.
#[derive(Debug, Default)]
pub struct QueryEngine {
    datasets: RwLock<HashMap<String, PathBuf>>,
    guard: Guard,
    options: ExecOptions,
    writes: AtomicU64,
}

impl QueryEngine {
    pub fn new(guard: Guard, options: ExecOptions) -> Self {
        Self { datasets: RwLock::default(), guard, options, writes: AtomicU64::new(0) }
    }

    pub fn guard(&self) -> &Guard {
        &self.guard
    }

    pub fn options(&self) -> ExecOptions {
        self.options
    }

    pub fn register(&self, dataset_id: &str, db_path: impl Into<PathBuf>) {
        self.datasets.write().unwrap().insert(dataset_id.to_string(), db_path.into());
    }

    pub fn unregister(&self, dataset_id: &str) {
        self.datasets.write().unwrap().remove(dataset_id);
    }

    pub fn db_path(&self, dataset_id: &str) -> Option<PathBuf> {
        self.datasets.read().unwrap().get(dataset_id).cloned()
    }

    /// Rows changed by any statement this engine ran.
    pub fn write_count(&self) -> u64 {
        self.writes.load(Ordering::SeqCst)
    }

    pub fn execute(&self, sql: &str, dataset_id: &str) -> Result<ResultTable, EngineError> {
        self.execute_with(sql, dataset_id, self.options)
    }

    pub fn execute_with(&self, sql: &str, dataset_id: &str, opts: ExecOptions) -> Result<ResultTable, EngineError> {
        let path = self.db_path(dataset_id).ok_or_else(|| EngineError::UnknownDataset(dataset_id.into()))?;
        self.execute_file(sql, dataset_id, &path, opts)
    }

    /// Runs against a database file that need not be registered yet; the
    /// statement is still sanitized first.
    pub fn execute_file(&self, sql: &str, dataset_id: &str, path: &Path, opts: ExecOptions) -> Result<ResultTable, EngineError> {
        let verdict = self.guard.sanitize(sql);
        if !verdict.allowed {
            return Err(EngineError::Rejected(verdict));
        }
        let conn = open_read_only(path).map_err(|e| EngineError::Open {
            dataset: dataset_id.into(),
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;

        let deadline = Instant::now() + Duration::from_millis(opts.timeout_ms);
        conn.progress_handler(1_000, Some(move || Instant::now() > deadline));
        let result = run(&conn, sql, opts.row_limit);
        conn.progress_handler(0, None::<fn() -> bool>);
        self.writes.fetch_add(conn.total_changes(), Ordering::SeqCst);

        result.map_err(|e| match e {
            rusqlite::Error::SqliteFailure(f, _) if f.code == rusqlite::ErrorCode::OperationInterrupted => {
                EngineError::Timeout { dataset: dataset_id.into(), timeout_ms: opts.timeout_ms }
            }
            other => EngineError::Sql { dataset: dataset_id.into(), message: other.to_string() },
        })
    }

    /// Executes and canonicalizes in one step.
    pub fn signature(&self, sql: &str, dataset_id: &str, order_sensitive: bool) -> Result<ResultSignature, EngineError> {
        Ok(normalize_result(&self.execute(sql, dataset_id)?, order_sensitive))
    }
}

fn open_read_only(path: &Path) -> rusqlite::Result<Connection> {
    if !path.is_file() {
        return Err(rusqlite::Error::InvalidPath(path.to_path_buf()));
    }
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI,
    )?;
    conn.pragma_update(None, "query_only", true)?;
    Ok(conn)
}

fn run(conn: &Connection, sql: &str, row_limit: usize) -> rusqlite::Result<ResultTable> {
    let mut stmt = conn.prepare(sql)?;
    let columns: Vec<String> = stmt.column_names().iter().map(|c| c.to_string()).collect();
    let width = columns.len();
    let mut rows = Vec::new();
    let mut truncated = false;
    let mut cursor = stmt.query([])?;
    while let Some(row) = cursor.next()? {
        if rows.len() == row_limit {
            truncated = true;
            break;
        }
        let mut out = Vec::with_capacity(width);
        for i in 0..width {
            out.push(match row.get_ref(i)? {
                ValueRef::Null => Value::Null,
                ValueRef::Integer(v) => Value::Integer(v),
                ValueRef::Real(v) => Value::Real(v),
                ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(b) => Value::Text(b.iter().map(|x| format!("{x:02x}")).collect()),
            });
        }
        rows.push(out);
    }
    Ok(ResultTable::new(columns, rows, truncated).expect("rows built at column width"))
}

#[derive(Debug, thiserror::Error)]
pub enum GoldFailure {
    #[error("gold query failed: {0}")]
    Execution(EngineError),
    #[error("gold query does not parse: {0}")]
    Parse(insight_core::eval::DecomposeError),
}

/// True iff `pred` yields the same canonical result as `gold`. Order matters
/// only when the gold query has a top-level ORDER BY. A failing prediction is
/// simply a mismatch; a failing gold is an error in the suite.
pub fn execution_match(engine: &QueryEngine, pred: &str, gold: &str, dataset_id: &str) -> Result<bool, GoldFailure> {
    let ordered = order_sensitive(gold).map_err(GoldFailure::Parse)?;
    let gold_sig = engine.signature(gold, dataset_id, ordered).map_err(GoldFailure::Execution)?;
    Ok(engine.signature(pred, dataset_id, ordered).is_ok_and(|s| s == gold_sig))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scratch_db() -> (tempfile::TempDir, QueryEngine) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.db");
        let conn = Connection::open(&path).unwrap();
        conn.execute_batch(
            "CREATE TABLE t (a INTEGER, b TEXT); INSERT INTO t VALUES (1, 'x'), (2, 'y'), (3, NULL);",
        )
        .unwrap();
        let engine = QueryEngine::default();
        engine.register("d", &path);
        (dir, engine)
    }

    #[test]
    fn select_constant() {
        let (_d, e) = scratch_db();
        let t = e.execute("SELECT 1 AS x", "d").unwrap();
        assert_eq!(t.columns(), ["x"]);
        assert_eq!(t.rows(), [vec![Value::Integer(1)]]);
    }

    #[test]
    fn truncation_sets_flag() {
        let (_d, e) = scratch_db();
        let t = e.execute_with("SELECT a FROM t", "d", ExecOptions { row_limit: 2, ..Default::default() }).unwrap();
        assert_eq!(t.row_count(), 2);
        assert!(t.truncated());
        assert!(!e.execute("SELECT a FROM t", "d").unwrap().truncated());
    }

    #[test]
    fn errors_are_classified() {
        let (_d, e) = scratch_db();
        assert!(matches!(e.execute("SELECT 1", "nope"), Err(EngineError::UnknownDataset(_))));
        assert!(matches!(e.execute("DELETE FROM t", "d"), Err(EngineError::Rejected(_))));
        match e.execute("SELECT missing FROM t", "d") {
            Err(EngineError::Sql { dataset, message }) => {
                assert_eq!(dataset, "d");
                assert!(message.contains("missing"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn runaway_query_times_out() {
        let (_d, e) = scratch_db();
        let sql = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT COUNT(*) FROM c";
        let r = e.execute_with(sql, "d", ExecOptions { timeout_ms: 50, ..Default::default() });
        assert!(matches!(r, Err(EngineError::Timeout { .. })), "{r:?}");
    }

    #[test]
    fn guard_bypass_still_cannot_write() {
        // a custom guard with an empty deny list lets the statement through;
        // the read-only connection must still refuse it
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.db");
        Connection::open(&path).unwrap().execute_batch("CREATE TABLE t (a INTEGER);").unwrap();
        let e = QueryEngine::new(Guard::with_deny_list(Vec::<&str>::new()), ExecOptions::default());
        e.register("d", &path);
        assert!(e.execute("WITH x AS (SELECT 1) INSERT INTO t SELECT * FROM x", "d").is_err());
        assert_eq!(e.write_count(), 0);
    }

    #[test]
    fn execution_match_rules() {
        let (_d, e) = scratch_db();
        assert!(execution_match(&e, "SELECT b, a FROM t", "SELECT b, a FROM t", "d").unwrap());
        assert!(execution_match(&e, "SELECT a FROM t ORDER BY a DESC", "SELECT a FROM t", "d").unwrap());
        assert!(!execution_match(&e, "SELECT a FROM t ORDER BY a DESC", "SELECT a FROM t ORDER BY a", "d").unwrap());
        assert!(!execution_match(&e, "SELECT nope FROM t", "SELECT a FROM t", "d").unwrap());
        assert!(execution_match(&e, "SELECT a FROM t", "SELECT nope FROM t", "d").is_err());
    }
}
