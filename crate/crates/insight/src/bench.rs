//! Strategy benchmarks over a question suite and the k-sweep experiment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use insight_core::eval::{classify_difficulty, exact_match, order_sensitive, Difficulty};
use insight_core::gateway::Generator;
use insight_core::prompt::Strategy;
use insight_core::result::{normalize_result, ResultSignature};
use serde::{Deserialize, Serialize};

use crate::dataset::{read_json, read_jsonl, DatasetError};
use crate::pipeline::{Pipeline, QueryError, QueryRequest, Timings};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteItem {
    pub question_id: String,
    pub question: String,
    pub gold_sql: String,
    pub dataset_id: String,
    #[serde(default)]
    pub family_tag: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Suite(#[from] DatasetError),
    #[error("invalid suite: {0}")]
    Invalid(String),
    #[error("gold SQL of `{question_id}` does not execute: {message}")]
    Gold { question_id: String, message: String },
}

pub fn load_suite(path: &Path) -> Result<Vec<SuiteItem>, BenchError> {
    let items: Vec<SuiteItem> = read_jsonl(path)?;
    validate_suite(&items)?;
    Ok(items)
}

pub fn validate_suite(items: &[SuiteItem]) -> Result<(), BenchError> {
    if items.is_empty() {
        return Err(BenchError::Invalid("suite is empty".into()));
    }
    let mut seen = BTreeSet::new();
    for it in items {
        if it.question_id.is_empty() || it.question.trim().is_empty() || it.gold_sql.trim().is_empty() {
            return Err(BenchError::Invalid(format!("item `{}` has an empty field", it.question_id)));
        }
        if !seen.insert(&it.question_id) {
            return Err(BenchError::Invalid(format!("duplicate question_id `{}`", it.question_id)));
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct SpiderItem {
    db_id: String,
    question: String,
    query: String,
}

/// Reads a Spider-style JSON array of `{db_id, question, query}`.
pub fn load_spider(path: &Path) -> Result<Vec<SuiteItem>, BenchError> {
    let raw: Vec<SpiderItem> = read_json(path)?;
    let items: Vec<SuiteItem> = raw
        .into_iter()
        .enumerate()
        .map(|(i, s)| SuiteItem {
            question_id: format!("spider-{i:05}"),
            question: s.question,
            gold_sql: s.query,
            dataset_id: s.db_id,
            family_tag: None,
        })
        .collect();
    validate_suite(&items)?;
    Ok(items)
}

/// A benchmarked configuration: a prompting strategy, optionally wrapped in
/// self-consistency. `SC` wraps zero-shot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BenchStrategy {
    Zs,
    Fs,
    Cfs,
    Sc,
    CfsSc,
}

impl BenchStrategy {
    pub fn label(self) -> &'static str {
        match self {
            BenchStrategy::Zs => "ZS",
            BenchStrategy::Fs => "FS",
            BenchStrategy::Cfs => "CFS",
            BenchStrategy::Sc => "SC",
            BenchStrategy::CfsSc => "CFS w/ SC",
        }
    }

    pub fn prompting(self) -> Strategy {
        match self {
            BenchStrategy::Zs | BenchStrategy::Sc => Strategy::ZeroShot,
            BenchStrategy::Fs => Strategy::FewShot,
            BenchStrategy::Cfs | BenchStrategy::CfsSc => Strategy::ContextualFewShot,
        }
    }

    /// Generations per question.
    pub fn samples(self, n: usize) -> usize {
        match self {
            BenchStrategy::Sc | BenchStrategy::CfsSc => n.max(1),
            _ => 1,
        }
    }
}

impl FromStr for BenchStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_uppercase();
        match norm.as_str() {
            "ZS" => Ok(BenchStrategy::Zs),
            "FS" => Ok(BenchStrategy::Fs),
            "CFS" => Ok(BenchStrategy::Cfs),
            "SC" => Ok(BenchStrategy::Sc),
            "CFSW/SC" | "CFS+SC" | "CFS_SC" | "CFS-SC" => Ok(BenchStrategy::CfsSc),
            _ => Err(format!("unknown strategy `{s}` (expected ZS, FS, CFS, SC or CFS+SC)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub question_id: String,
    pub strategy: String,
    pub backend: String,
    pub exact_match: bool,
    pub execution_match: bool,
    pub difficulty: Difficulty,
    pub sanitizer_rejected: bool,
    pub error: Option<String>,
    pub prompt_tokens: usize,
    pub latency_breakdown_ms: Timings,
}

/// Question seed: the run seed mixed with a hash of the question id, so a
/// question sees the same draws under every strategy.
pub fn question_seed(seed: u64, question_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in question_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

struct Gold {
    signature: ResultSignature,
    ordered: bool,
    difficulty: Difficulty,
}

fn gold_of(pipeline: &Pipeline, item: &SuiteItem) -> Result<Gold, BenchError> {
    let fail = |message: String| BenchError::Gold { question_id: item.question_id.clone(), message };
    let ordered = order_sensitive(&item.gold_sql).map_err(|e| fail(e.to_string()))?;
    let table = pipeline.engine().execute(&item.gold_sql, &item.dataset_id).map_err(|e| fail(e.to_string()))?;
    let difficulty = classify_difficulty(&item.gold_sql).map_err(|e| fail(e.to_string()))?;
    Ok(Gold { signature: normalize_result(&table, ordered), ordered, difficulty })
}

/// Runs one strategy over the suite. Per-question failures are recorded in
/// the outcomes; only a broken gold query aborts.
pub fn run_strategy(
    pipeline: &Pipeline,
    suite: &[SuiteItem],
    strategy: BenchStrategy,
    k: usize,
    n: usize,
    backend: &dyn Generator,
    seed: u64,
) -> Result<Vec<EvalOutcome>, BenchError> {
    let mut out = Vec::with_capacity(suite.len());
    for item in suite {
        let gold = gold_of(pipeline, item)?;
        let req = QueryRequest {
            dataset_id: item.dataset_id.clone(),
            question: item.question.clone(),
            strategy: Some(strategy.prompting()),
            k: Some(k),
            n: Some(strategy.samples(n)),
            seed: Some(question_seed(seed, &item.question_id)),
        };
        let prompt_tokens = pipeline.prepare(&req).map(|p| p.prompt.token_count()).unwrap_or(0);
        let mut o = EvalOutcome {
            question_id: item.question_id.clone(),
            strategy: strategy.label().into(),
            backend: backend.model_id().into(),
            exact_match: false,
            execution_match: false,
            difficulty: gold.difficulty,
            sanitizer_rejected: false,
            error: None,
            prompt_tokens,
            latency_breakdown_ms: Timings::default(),
        };
        match pipeline.answer_with(&req, backend) {
            Ok(resp) => {
                o.execution_match = normalize_result(&resp.table, gold.ordered) == gold.signature;
                o.exact_match = exact_match(&resp.sql, &item.gold_sql).is_ok_and(|v| v.matched);
                o.latency_breakdown_ms = resp.timings;
            }
            Err(e) => {
                if let Some(sql) = e.sql() {
                    o.exact_match = exact_match(sql, &item.gold_sql).is_ok_and(|v| v.matched);
                }
                if let QueryError::Rejected { timings, .. } = &e {
                    o.sanitizer_rejected = true;
                    o.latency_breakdown_ms = *timings;
                }
                o.error = Some(e.to_string());
            }
        }
        out.push(o);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DifficultyCell {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: String,
    pub backend: String,
    pub execution_accuracy: f64,
    pub exact_match_rate: f64,
    pub sanitizer_rejections: usize,
    pub errors: usize,
    pub mean_prompt_tokens: f64,
    pub by_difficulty: BTreeMap<String, DifficultyCell>,
}

impl StrategyRow {
    pub fn from_outcomes(strategy: &str, backend: &str, outcomes: &[EvalOutcome]) -> Self {
        let total = outcomes.len().max(1) as f64;
        let count = |f: fn(&EvalOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count();
        let mut by_difficulty: BTreeMap<String, DifficultyCell> =
            Difficulty::ALL.iter().map(|d| (d.label().to_string(), DifficultyCell::default())).collect();
        for o in outcomes {
            let cell = by_difficulty.get_mut(o.difficulty.label()).expect("all levels present");
            cell.count += 1;
            cell.correct += o.execution_match as usize;
        }
        for cell in by_difficulty.values_mut() {
            cell.accuracy = if cell.count == 0 { 0.0 } else { cell.correct as f64 / cell.count as f64 };
        }
        Self {
            strategy: strategy.into(),
            backend: backend.into(),
            execution_accuracy: count(|o| o.execution_match) as f64 / total,
            exact_match_rate: count(|o| o.exact_match) as f64 / total,
            sanitizer_rejections: count(|o| o.sanitizer_rejected),
            errors: count(|o| o.error.is_some()),
            mean_prompt_tokens: outcomes.iter().map(|o| o.prompt_tokens as f64).sum::<f64>() / total,
            by_difficulty,
        }
    }
}

/// Everything here is a pure function of inputs and seed; wall time is
/// reported separately so the JSON stays reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    pub question_count: usize,
    pub backends: Vec<String>,
    pub rows: Vec<StrategyRow>,
}

impl BenchmarkReport {
    pub fn row(&self, strategy: &str, backend: &str) -> Option<&StrategyRow> {
        self.rows.iter().find(|r| r.strategy == strategy && r.backend == backend)
    }

    pub fn accuracy(&self, strategy: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.strategy == strategy).map(|r| r.execution_accuracy)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Strategies as rows, backends as columns.
    pub fn to_text(&self, wall_time_s: Option<f64>) -> String {
        let mut out = String::new();
        let strategies: Vec<&str> = {
            let mut seen = Vec::new();
            for r in &self.rows {
                if !seen.contains(&r.strategy.as_str()) {
                    seen.push(r.strategy.as_str());
                }
            }
            seen
        };
        let width = strategies.iter().map(|s| s.len()).max().unwrap_or(8).max(8);
        let col = self.backends.iter().map(|b| b.len()).max().unwrap_or(6).max(6);
        let mut table = |title: &str, metric: fn(&StrategyRow) -> f64| {
            let _ = writeln!(out, "{title}");
            let _ = write!(out, "{:<width$}", "Strategy");
            for b in &self.backends {
                let _ = write!(out, "  {b:>col$}");
            }
            out.push('\n');
            for s in &strategies {
                let _ = write!(out, "{s:<width$}");
                for b in &self.backends {
                    match self.row(s, b) {
                        Some(r) => {
                            let _ = write!(out, "  {:>col$}", format!("{:.1}%", metric(r) * 100.0));
                        }
                        None => {
                            let _ = write!(out, "  {:>col$}", "-");
                        }
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        };
        table("Execution accuracy", |r| r.execution_accuracy);
        table("Exact match", |r| r.exact_match_rate);

        if let Some(backend) = self.backends.first() {
            let _ = writeln!(out, "Execution accuracy by difficulty ({backend})");
            let _ = write!(out, "{:<width$}", "Strategy");
            for d in Difficulty::ALL {
                let _ = write!(out, "  {:>12}", d.label());
            }
            out.push('\n');
            for s in &strategies {
                let Some(r) = self.row(s, backend) else { continue };
                let _ = write!(out, "{s:<width$}");
                for d in Difficulty::ALL {
                    let c = &r.by_difficulty[d.label()];
                    let cell = if c.count == 0 { "-".to_string() } else { format!("{:.0}% ({})", c.accuracy * 100.0, c.count) };
                    let _ = write!(out, "  {cell:>12}");
                }
                out.push('\n');
            }
            out.push('\n');
        }
        let _ = write!(out, "k={} n={} seed={} questions={}", self.k, self.n, self.seed, self.question_count);
        if let Some(t) = wall_time_s {
            let _ = write!(out, " wall={t:.2}s");
        }
        out.push('\n');
        out
    }
}

pub struct BenchRun {
    pub report: BenchmarkReport,
    pub outcomes: Vec<EvalOutcome>,
    pub wall_time_s: f64,
}

/// Every strategy against every backend.
pub fn run_benchmark(
    pipeline: &Pipeline,
    suite: &[SuiteItem],
    strategies: &[BenchStrategy],
    backends: &[&dyn Generator],
    k: usize,
    n: usize,
    seed: u64,
) -> Result<BenchRun, BenchError> {
    validate_suite(suite)?;
    let started = Instant::now();
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for &s in strategies {
        for &b in backends {
            let o = run_strategy(pipeline, suite, s, k, n, b, seed)?;
            rows.push(StrategyRow::from_outcomes(s.label(), b.model_id(), &o));
            outcomes.extend(o);
        }
    }
    let report = BenchmarkReport {
        k,
        n,
        seed,
        question_count: suite.len(),
        backends: backends.iter().map(|b| b.model_id().to_string()).collect(),
        rows,
    };
    Ok(BenchRun { report, outcomes, wall_time_s: started.elapsed().as_secs_f64() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub execution_accuracy: f64,
    pub mean_prompt_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,accuracy,mean_prompt_tokens\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.4},{:.2}", r.k, r.execution_accuracy, r.mean_prompt_tokens);
        }
        out
    }

    /// One bar per k, scaled to the [0, 1] accuracy range.
    pub fn sparkline(&self) -> String {
        const BARS: [char; 8] = ['▁', '▂', '▃', '▄', '▅', '▆', '▇', '█'];
        self.rows
            .iter()
            .map(|r| BARS[((r.execution_accuracy.clamp(0.0, 1.0) * 7.0).round()) as usize])
            .collect()
    }
}

/// Contextual few-shot accuracy for each k.
pub fn run_ksweep(pipeline: &Pipeline, suite: &[SuiteItem], ks: &[usize], backend: &dyn Generator, seed: u64) -> Result<SweepResult, BenchError> {
    validate_suite(suite)?;
    if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::Invalid("k values must be non-empty and strictly increasing".into()));
    }
    let mut rows = Vec::new();
    for &k in ks {
        let o = run_strategy(pipeline, suite, BenchStrategy::Cfs, k, 1, backend, seed)?;
        let row = StrategyRow::from_outcomes("CFS", backend.model_id(), &o);
        rows.push(SweepRow { k, execution_accuracy: row.execution_accuracy, mean_prompt_tokens: row.mean_prompt_tokens });
    }
    Ok(SweepResult { rows })
}
