//! Timed generation and execution-signature voting across samples or models.

use std::time::Instant;

use insight_core::gateway::{extract_sql, vote, DecodingParams, GenerationError, Generator};
use insight_core::prompt::AssembledPrompt;
use insight_core::result::ResultSignature;
use insight_core::sql::{Guard, SanitizationVerdict};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedSql {
    pub sql: String,
    pub model_id: String,
    pub latency_ms: u64,
    pub raw_response: String,
}

pub fn generate(backend: &dyn Generator, prompt: &AssembledPrompt, params: &DecodingParams) -> Result<GeneratedSql, GenerationError> {
    let start = Instant::now();
    let raw = backend.complete(&prompt.text, params)?;
    let latency_ms = start.elapsed().as_millis() as u64;
    let sql = extract_sql(&raw).ok_or(GenerationError::Empty)?;
    Ok(GeneratedSql { sql, model_id: backend.model_id().to_string(), latency_ms, raw_response: raw })
}

/// Runs a sanitized statement and returns its canonical signature, or `None`
/// if execution failed.
pub type Executor<'a> = dyn Fn(&str) -> Option<ResultSignature> + Sync + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub model_id: String,
    pub seed: u64,
    pub sql: Option<String>,
    pub error: Option<String>,
    pub verdict: Option<SanitizationVerdict>,
    pub signature: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consensus {
    pub chosen: GeneratedSql,
    pub chosen_index: usize,
    pub group_size: usize,
    pub candidates: Vec<CandidateReport>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConsensusError {
    #[error("ensemble needs at least {0} members")]
    TooFew(usize),
    #[error("every candidate was rejected by the sanitizer")]
    AllRejected(Vec<SanitizationVerdict>),
    #[error("every generation failed; first error: {0}")]
    AllFailed(GenerationError),
}

struct Sample {
    seed: u64,
    generated: Result<GeneratedSql, GenerationError>,
    verdict: Option<SanitizationVerdict>,
    signature: Option<ResultSignature>,
}

fn sample(backend: &dyn Generator, prompt: &AssembledPrompt, params: DecodingParams, guard: &Guard, exec: &Executor<'_>) -> Sample {
    let generated = generate(backend, prompt, &params);
    let (verdict, signature) = match &generated {
        Ok(g) => {
            let v = guard.sanitize(&g.sql);
            let sig = if v.allowed { exec(&g.sql) } else { None };
            (Some(v), sig)
        }
        Err(_) => (None, None),
    };
    Sample { seed: params.seed, generated, verdict, signature }
}

/// Draws `n` samples with seeds `params.seed + i`, executes the ones that
/// pass the guard and returns the earliest member of the largest group of
/// equal result signatures.
pub fn self_consistent_generate(
    backend: &dyn Generator,
    prompt: &AssembledPrompt,
    n: usize,
    params: &DecodingParams,
    guard: &Guard,
    exec: &Executor<'_>,
) -> Result<Consensus, ConsensusError> {
    if n == 0 {
        return Err(ConsensusError::TooFew(1));
    }
    let jobs: Vec<(&dyn Generator, DecodingParams)> = (0..n as u64).map(|i| (backend, params.for_sample(i))).collect();
    decide(run_all(jobs, prompt, guard, exec))
}

/// One sample per backend at the same params; ties go to list order.
pub fn cross_consistent_generate(
    backends: &[&dyn Generator],
    prompt: &AssembledPrompt,
    params: &DecodingParams,
    guard: &Guard,
    exec: &Executor<'_>,
) -> Result<Consensus, ConsensusError> {
    if backends.len() < 2 {
        return Err(ConsensusError::TooFew(2));
    }
    let jobs = backends.iter().map(|b| (*b, params.clone())).collect();
    decide(run_all(jobs, prompt, guard, exec))
}

fn run_all(jobs: Vec<(&dyn Generator, DecodingParams)>, prompt: &AssembledPrompt, guard: &Guard, exec: &Executor<'_>) -> Vec<Sample> {
    if jobs.len() == 1 {
        let (b, p) = jobs.into_iter().next().unwrap();
        return vec![sample(b, prompt, p, guard, exec)];
    }
    // results are collected by position, so completion order is irrelevant
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(b, p)| s.spawn(move || sample(b, prompt, p, guard, exec)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("sample thread panicked")).collect()
    })
}

fn decide(samples: Vec<Sample>) -> Result<Consensus, ConsensusError> {
    let keys: Vec<Option<&str>> = samples.iter().map(|s| s.signature.as_ref().map(|g| g.digest.as_str())).collect();
    let winner = if keys.iter().any(Option::is_some) {
        vote(&keys).expect("non-empty")
    } else if let Some(i) = samples.iter().position(|s| s.verdict.as_ref().is_some_and(|v| v.allowed)) {
        // nothing executed: fall back to the first statement the guard accepted
        i
    } else if samples.iter().any(|s| s.verdict.is_some()) {
        return Err(ConsensusError::AllRejected(samples.into_iter().filter_map(|s| s.verdict).collect()));
    } else {
        let first = samples.into_iter().next().expect("non-empty").generated.unwrap_err();
        return Err(ConsensusError::AllFailed(first));
    };
    let group_size = match keys[winner] {
        Some(k) => keys.iter().filter(|x| **x == Some(k)).count(),
        None => 1,
    };
    let candidates = samples
        .iter()
        .map(|s| CandidateReport {
            model_id: s.generated.as_ref().map(|g| g.model_id.clone()).unwrap_or_default(),
            seed: s.seed,
            sql: s.generated.as_ref().ok().map(|g| g.sql.clone()),
            error: s.generated.as_ref().err().map(ToString::to_string),
            verdict: s.verdict.clone(),
            signature: s.signature.as_ref().map(|g| g.digest.clone()),
        })
        .collect();
    let chosen = samples.into_iter().nth(winner).expect("winner in range").generated.expect("winner generated");
    Ok(Consensus { chosen, chosen_index: winner, group_size, candidates })
}
