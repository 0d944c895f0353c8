//! Service configuration file.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! admin_role = "admin"
//! datasets = ["fixtures/sales"]
//!
//! [defaults]
//! strategy = "CFS"
//! k = 4
//! n = 1
//!
//! [backend]
//! kind = "sim"
//! families = "fixtures/sales/families.json"
//! competence = 0.9
//!
//! [tokens.dev-admin-token]
//! user_id = "ada"
//! roles = ["admin"]
//!
//! [policy]
//! sales = ["analyst"]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use insight_core::embedding::{Embedder, EmbedderBackend, EmbedderConfig, ReferenceEmbedder};
use insight_core::gateway::{FamilyCatalog, Generator, SimulatedModel, SimulatedModelConfig};
use insight_core::sql::Guard;
use serde::{Deserialize, Serialize};

use crate::dataset::read_json;
use crate::engine::ExecOptions;
use crate::pipeline::QueryDefaults;
use crate::remote::{HttpBackendConfig, HttpChatBackend, HttpEmbedder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Principal {
    pub user_id: String,
    pub roles: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Sim {
        #[serde(default)]
        families: Option<PathBuf>,
        #[serde(flatten)]
        model: SimulatedModelConfig,
    },
    Http(HttpBackendConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Sim { families: None, model: SimulatedModelConfig::default() }
    }
}

impl BackendConfig {
    /// `base` resolves relative paths in the config.
    pub fn build(&self, base: &Path) -> anyhow::Result<Arc<dyn Generator>> {
        Ok(match self {
            BackendConfig::Sim { families, model } => {
                let catalog: FamilyCatalog = match families {
                    Some(p) => read_json(&base.join(p))?,
                    None => FamilyCatalog::default(),
                };
                Arc::new(SimulatedModel::new("sim", model.clone(), catalog)?)
            }
            BackendConfig::Http(c) => Arc::new(HttpChatBackend::new(c.clone())?),
        })
    }
}

pub fn build_embedder(config: &EmbedderConfig) -> anyhow::Result<Arc<dyn Embedder>> {
    config.validate()?;
    Ok(match config.backend {
        EmbedderBackend::Reference => Arc::new(ReferenceEmbedder::new(config.dim)?),
        EmbedderBackend::External => Arc::new(HttpEmbedder::new(config.clone())?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: String,
    pub admin_role: String,
    /// Dataset directories onboarded at startup.
    pub datasets: Vec<PathBuf>,
    pub defaults: QueryDefaults,
    pub backend: BackendConfig,
    pub embedder: EmbedderConfig,
    pub timeout_ms: u64,
    pub row_limit: usize,
    /// Extra deny-list file, one keyword per line; replaces the default list.
    pub deny_list: Option<PathBuf>,
    pub tokens: BTreeMap<String, Principal>,
    /// dataset id to roles allowed to query it
    pub policy: BTreeMap<String, BTreeSet<String>>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let exec = ExecOptions::default();
        Self {
            listen: "127.0.0.1:8080".into(),
            admin_role: "admin".into(),
            datasets: Vec::new(),
            defaults: QueryDefaults::default(),
            backend: BackendConfig::default(),
            embedder: EmbedderConfig::default(),
            timeout_ms: exec.timeout_ms,
            row_limit: exec.row_limit,
            deny_list: None,
            tokens: BTreeMap::new(),
            policy: BTreeMap::new(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let c: Self = toml::from_str(text)?;
        for (token, p) in &c.tokens {
            anyhow::ensure!(!p.roles.is_empty(), "principal `{}` (token {}…) has no roles", p.user_id, &token[..token.len().min(4)]);
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn exec_options(&self) -> ExecOptions {
        ExecOptions { timeout_ms: self.timeout_ms, row_limit: self.row_limit }
    }

    pub fn guard(&self, base: &Path) -> anyhow::Result<Guard> {
        Ok(match &self.deny_list {
            Some(p) => Guard::from_deny_list_text(&std::fs::read_to_string(base.join(p))?),
            None => Guard::default(),
        })
    }
}
