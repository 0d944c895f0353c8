//! Generation backends' common contract, the simulated model and the
//! agreement vote used by self- and cross-consistency.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::prompt::parse_prompt;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenerationError {
    #[error("transport error{}: {detail}", .status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, detail: String },
    #[error("response violated the contract: {0}")]
    Contract(String),
    #[error("model returned no SQL")]
    Empty,
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingParams {
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self { temperature: 0.0, seed: 0, max_tokens: 512 }
    }
}

impl DecodingParams {
    /// Params for the `i`-th sample of an ensemble: seed `base + i`.
    pub fn for_sample(&self, i: u64) -> Self {
        Self { seed: self.seed.wrapping_add(i), ..self.clone() }
    }
}

/// A text-completion backend.
pub trait Generator: Send + Sync {
    fn model_id(&self) -> &str;

    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String, GenerationError>;
}

/// Pulls the SQL statement out of a model response: the first fenced code
/// block if there is one, otherwise everything from the first line that
/// starts with SELECT or WITH.
pub fn extract_sql(raw: &str) -> Option<String> {
    let candidate = if let Some(open) = raw.find("```") {
        let after = &raw[open + 3..];
        // an alphanumeric word right after the fence is a language tag
        let body = match after.find('\n') {
            Some(nl) if after[..nl].trim().chars().all(|c| c.is_ascii_alphanumeric()) => &after[nl + 1..],
            _ => after,
        };
        match body.find("```") {
            Some(close) => &body[..close],
            None => body,
        }
    } else {
        let mut offset = 0;
        let mut found = None;
        for line in raw.split_inclusive('\n') {
            let t = line.trim_start();
            let head: String = t.chars().take(6).collect::<String>().to_ascii_uppercase();
            if head.starts_with("SELECT") || head.starts_with("WITH") {
                found = Some(offset + (line.len() - t.len()));
                break;
            }
            offset += line.len();
        }
        match found {
            Some(at) => &raw[at..],
            None => raw,
        }
    };
    let sql = candidate.trim();
    (!sql.is_empty()).then(|| sql.to_string())
}

/// Index of the winning candidate: the earliest member of the largest group
/// of equal keys. `None` keys (candidates that failed) are singleton groups
/// that lose every tie. Returns `None` only for an empty slice.
pub fn vote<K: Ord>(keys: &[Option<K>]) -> Option<usize> {
    let mut groups: BTreeMap<&K, (usize, usize)> = BTreeMap::new(); // key -> (count, first index)
    for (i, k) in keys.iter().enumerate() {
        if let Some(k) = k {
            groups.entry(k).or_insert((0, i)).0 += 1;
        }
    }
    let best = groups
        .values()
        .copied()
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
        .map(|(_, first)| first);
    best.or(if keys.is_empty() { None } else { Some(0) })
}

/// A question family: surface templates that share one SQL shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Family {
    pub id: String,
    /// Question templates with `{name}` placeholders.
    pub questions: Vec<String>,
    /// SQL template over the same placeholders.
    pub sql: String,
}

pub type Params = BTreeMap<String, String>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FamilyCatalog {
    families: Vec<Family>,
}

impl FamilyCatalog {
    pub fn new(families: Vec<Family>) -> Self {
        Self { families }
    }

    pub fn families(&self) -> &[Family] {
        &self.families
    }

    pub fn get(&self, id: &str) -> Option<&Family> {
        self.families.iter().find(|f| f.id == id)
    }

    /// First family whose question template matches `question`, with the
    /// captured placeholder values. Matching is case-insensitive.
    pub fn identify(&self, question: &str) -> Option<(&Family, Params)> {
        let q = question.trim().to_lowercase();
        self.families.iter().find_map(|f| {
            f.questions
                .iter()
                .find_map(|t| match_template(&t.to_lowercase(), &q))
                .map(|p| (f, p))
        })
    }
}

/// Replaces each `{name}` in `template` with its value.
pub fn fill_template(template: &str, params: &Params) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        match rest[open..].find('}') {
            Some(close) => {
                let name = &rest[open + 1..open + close];
                match params.get(name) {
                    Some(v) => out.push_str(v),
                    None => out.push_str(&rest[open..=open + close]),
                }
                rest = &rest[open + close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

enum Piece<'a> {
    Lit(&'a str),
    Hole(&'a str),
}

fn pieces(template: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else { break };
        if open > 0 {
            out.push(Piece::Lit(&rest[..open]));
        }
        out.push(Piece::Hole(&rest[open + 1..open + close]));
        rest = &rest[open + close + 1..];
    }
    if !rest.is_empty() {
        out.push(Piece::Lit(rest));
    }
    out
}

fn match_template(template: &str, text: &str) -> Option<Params> {
    fn go<'a>(pieces: &[Piece<'a>], text: &str, acc: &mut Params) -> bool {
        match pieces.split_first() {
            None => text.is_empty(),
            Some((Piece::Lit(l), rest)) => text.strip_prefix(l).is_some_and(|t| go(rest, t, acc)),
            Some((Piece::Hole(name), rest)) => {
                // shortest non-empty capture first
                let mut ends: Vec<usize> = text.char_indices().map(|(i, _)| i).skip(1).collect();
                ends.push(text.len());
                for end in ends {
                    let value = &text[..end];
                    if value.trim().is_empty() {
                        continue;
                    }
                    if let Some(prev) = acc.get(*name) {
                        if prev != value {
                            continue;
                        }
                    }
                    let inserted = acc.insert((*name).to_string(), value.to_string()).is_none();
                    if go(rest, &text[end..], acc) {
                        return true;
                    }
                    if inserted {
                        acc.remove(*name);
                    }
                }
                false
            }
        }
    }
    let ps = pieces(template);
    let mut acc = Params::new();
    go(&ps, text, &mut acc).then_some(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatedModelConfig {
    /// Probability of a correct answer when a same-family demonstration is in the prompt.
    pub competence: f64,
    /// Probability of a correct answer otherwise.
    pub zs_hit_rate: f64,
    pub seed: u64,
    /// Emitted verbatim instead of any answer (fault injection).
    pub forced_output: Option<String>,
}

impl Default for SimulatedModelConfig {
    fn default() -> Self {
        Self { competence: 0.9, zs_hit_rate: 0.1, seed: 0, forced_output: None }
    }
}

impl SimulatedModelConfig {
    pub fn validate(&self) -> Result<(), GenerationError> {
        let ok = (0.0..=1.0).contains(&self.zs_hit_rate)
            && (0.0..=1.0).contains(&self.competence)
            && self.zs_hit_rate <= self.competence;
        if ok {
            Ok(())
        } else {
            Err(GenerationError::Config(format!(
                "need 0 <= zs_hit_rate ({}) <= competence ({}) <= 1",
                self.zs_hit_rate, self.competence
            )))
        }
    }
}

/// Deterministic stand-in for a language model.
///
/// The model recognizes the user question's family through the catalog and
/// reads demonstration families from their `family:<id>` tags. One uniform
/// draw `u` per seed decides the outcome: with a same-family demonstration
/// present the answer is correct iff `u < competence`, otherwise iff
/// `u < zs_hit_rate`. Because `zs_hit_rate <= competence`, adding a matching
/// demonstration can only turn a wrong answer into a right one. A correct
/// answer is the family SQL filled with the question's parameters; a wrong
/// one is a valid SELECT of a seed-derived constant.
#[derive(Debug, Clone)]
pub struct SimulatedModel {
    id: String,
    config: SimulatedModelConfig,
    catalog: FamilyCatalog,
}

pub const FAMILY_TAG: &str = "family:";

impl SimulatedModel {
    pub fn new(id: impl Into<String>, config: SimulatedModelConfig, catalog: FamilyCatalog) -> Result<Self, GenerationError> {
        config.validate()?;
        Ok(Self { id: id.into(), config, catalog })
    }

    pub fn config(&self) -> &SimulatedModelConfig {
        &self.config
    }

    fn draw_seed(&self, params: &DecodingParams) -> u64 {
        // splitmix-style mix of model seed and call seed
        let mut z = self.config.seed ^ params.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

impl Generator for SimulatedModel {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String, GenerationError> {
        if let Some(forced) = &self.config.forced_output {
            return Ok(forced.clone());
        }
        let parsed = parse_prompt(prompt);
        let question = parsed
            .question
            .ok_or_else(|| GenerationError::Contract("prompt has no question section".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.draw_seed(params));
        let u: f64 = rng.gen();
        let guess: u32 = rng.gen_range(100_000..1_000_000);

        if let Some((family, values)) = self.catalog.identify(&question) {
            let demonstrated = parsed.demonstrations.iter().any(|(tags, _, _)| {
                tags.iter().any(|t| t.strip_prefix(FAMILY_TAG) == Some(family.id.as_str()))
            });
            let threshold = if demonstrated { self.config.competence } else { self.config.zs_hit_rate };
            if u < threshold {
                return Ok(format!("```sql\n{}\n```", fill_template(&family.sql, &values)));
            }
        }
        Ok(format!("```sql\nSELECT {guess} AS guess\n```"))
    }
}
