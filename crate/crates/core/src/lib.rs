//! Allocation-only core of the insight text-to-SQL engine.
//!
//! Everything here is pure: question embedding, exact example retrieval,
//! prompt assembly, the read-only SQL guard, result canonicalization,
//! clause-level evaluation and the simulated generation model. IO, the
//! embedded database, HTTP and the CLI live in the `insight` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod embedding;
pub mod eval;
pub mod gateway;
pub mod index;
pub mod prompt;
pub mod result;
pub mod sql;

pub use embedding::{cosine_similarity, Embedder, EmbedderConfig, EmbeddingVector, ReferenceEmbedder};
pub use eval::{classify_difficulty, decompose, exact_match, ClauseSet, Difficulty};
pub use gateway::{DecodingParams, FamilyCatalog, Generator, SimulatedModel, SimulatedModelConfig};
pub use index::{ExampleEntry, NewEntry, SearchHit, VectorIndex};
pub use prompt::{AssembledPrompt, NLQuestion, PromptTemplate, SchemaDescriptor, Strategy, TemplateRegistry};
pub use result::{normalize_result, ResultSignature, ResultTable, Value};
pub use sql::{sanitize, tokenize_sql, Guard, SanitizationVerdict};
