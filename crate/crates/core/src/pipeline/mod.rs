//! Pipeline topologies and their execution: planning, chunking, per-stage
//! retries, payload hand-off and assembly of the final result.

mod assemble;
mod chunk;
mod plan;
mod run;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentError, AgentRole};
use crate::backend::{BackendConfig, BackendError};
use crate::model::ModelError;
use crate::segment::SegmentationPolicy;

pub use chunk::{chunk, Chunk};
pub use plan::{plan, PipelineGraph, StageSpec};
pub use run::{run, run_with_events, stage_events, Clock, RunHandle, Runner};

pub const DEFAULT_RETRY_LIMIT: u32 = 2;
pub const MAX_RETRY_LIMIT: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub chunk_max_chars: usize,
    pub chunk_overlap_chars: usize,
    /// Overrides every stage's retry limit when set.
    pub retry_limit: Option<u32>,
    pub segmentation: SegmentationPolicy,
    pub backend: BackendConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            chunk_max_chars: 8_000,
            chunk_overlap_chars: 200,
            retry_limit: None,
            segmentation: SegmentationPolicy::default(),
            backend: BackendConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("chunk_max_chars must be positive")]
    ZeroChunk,
    #[error("chunk_overlap_chars ({overlap}) must be smaller than chunk_max_chars ({max})")]
    OverlapTooLarge { overlap: usize, max: usize },
    #[error("retry_limit {0} exceeds the maximum of {MAX_RETRY_LIMIT}")]
    RetryLimit(u32),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.chunk_max_chars == 0 {
            return Err(ConfigError::ZeroChunk);
        }
        if self.chunk_overlap_chars >= self.chunk_max_chars {
            return Err(ConfigError::OverlapTooLarge {
                overlap: self.chunk_overlap_chars,
                max: self.chunk_max_chars,
            });
        }
        if let Some(limit) = self.retry_limit {
            if limit > MAX_RETRY_LIMIT {
                return Err(ConfigError::RetryLimit(limit));
            }
        }
        self.backend.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("stage {role} failed after {attempts} attempt(s): {last_error}")]
    StageFailed {
        role: AgentRole,
        attempts: u32,
        last_error: String,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("assembled result failed validation: {0}")]
    InvalidResult(String),
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::EmptyInput => PipelineError::EmptyInput,
            other => PipelineError::InvalidRequest(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Started,
    Retrying,
    Done,
    Failed,
}

impl StageStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, StageStatus::Done | StageStatus::Failed)
    }
}

/// Progress of one stage; serialized one per line on the progress stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage_index: usize,
    pub role: AgentRole,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl StageEvent {
    pub fn to_ndjson_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("stage events serialize");
        line.push('\n');
        line
    }
}
