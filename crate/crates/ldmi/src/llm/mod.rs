//! Semantic interest clustering: prompt construction, chat-completion client
//! with on-disk response cache, response parsing, and a deterministic offline
//! substitute used by tests and the synthetic benchmark.

mod cache;
mod client;
mod mock;
mod parse;
mod prompt;

pub use cache::ResponseCache;
pub use client::{LlmClient, LlmSettings};
pub use mock::mock_cluster;
pub use parse::parse_clusters;
pub use prompt::{build_prompt, PromptText, PROMPT_VERSION};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::error::{Error, Result};

/// Where a clustering came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterSource {
    Llm,
    Mock,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterestCluster {
    pub label: String,
    /// Zero-based positions into the owner's behavior list. A position may
    /// appear in multiple clusters.
    pub members: Vec<usize>,
}

/// Named semantic interest clusters for one (real or synthesized) user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticClustering {
    pub owner: usize,
    pub clusters: Vec<InterestCluster>,
    /// Positions referenced by no cluster; they contribute no semantic signal.
    pub unassigned: Vec<usize>,
    pub source: ClusterSource,
}

impl SemanticClustering {
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }
}

/// One record per owner, line-delimited JSON.
pub fn write_clusterings(clusterings: &[SemanticClustering], path: &Path) -> Result<()> {
    let mut out = String::new();
    for c in clusterings {
        out.push_str(&serde_json::to_string(c).expect("clustering serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_clusterings(path: &Path) -> Result<Vec<SemanticClustering>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Format {
            path: path.into(),
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}
