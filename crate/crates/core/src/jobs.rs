//! Wire types shared by the job service and its clients.

use serde::{Deserialize, Serialize};

use crate::agents::AgentRole;
use crate::ingest::{IngestError, SourceSpec};
use crate::method::{Method, OutputFormat, Tier};
use crate::model::{AnalysisResult, Modality};
use crate::pipeline::{plan, PipelineError, StageEvent};

/// Body of `POST /v1/jobs`. Method and format are kept as strings so that a
/// bad value gets a descriptive error instead of a generic decode failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub method: String,
    pub source: SourceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<JobOptions>,
}

impl Submission {
    pub fn new(method: Method, source: SourceSpec) -> Self {
        Self {
            method: method.as_str().to_string(),
            source,
            custom_instruction: None,
            output_format: None,
            options: None,
        }
    }
}

/// Per-job pipeline overrides a client may set. Backend selection stays with
/// the service.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_limit: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_max_chars: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_overlap_chars: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub job_id: String,
    pub state: JobState,
}

/// What went wrong with a failed job; decides the CLI exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    InvalidRequest,
    Ingestion,
    Stage,
    Backend,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobFailure {
    pub kind: FailureKind,
    pub message: String,
}

impl From<&IngestError> for JobFailure {
    fn from(e: &IngestError) -> Self {
        Self {
            kind: FailureKind::Ingestion,
            message: e.to_string(),
        }
    }
}

impl From<&PipelineError> for JobFailure {
    fn from(e: &PipelineError) -> Self {
        let kind = match e {
            PipelineError::EmptyInput => FailureKind::Ingestion,
            PipelineError::InvalidRequest(_) => FailureKind::InvalidRequest,
            PipelineError::Backend(_) => FailureKind::Backend,
            PipelineError::StageFailed { .. } | PipelineError::Agent(_) | PipelineError::InvalidResult(_) => {
                FailureKind::Stage
            }
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

/// Job lifecycle. States only move forward:
/// queued → ingesting → running → done | failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Ingesting,
    /// `stage_index` is the highest stage started so far.
    Running { stage_index: usize },
    Done,
    Failed { error: JobFailure },
}

impl JobState {
    fn rank(&self) -> (u8, usize) {
        match self {
            JobState::Queued => (0, 0),
            JobState::Ingesting => (1, 0),
            JobState::Running { stage_index } => (2, *stage_index),
            JobState::Done | JobState::Failed { .. } => (3, 0),
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, JobState::Done | JobState::Failed { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            JobState::Queued => "queued",
            JobState::Ingesting => "ingesting",
            JobState::Running { .. } => "running",
            JobState::Done => "done",
            JobState::Failed { .. } => "failed",
        }
    }

    /// Whether moving from `self` to `next` keeps the lifecycle monotone.
    /// Staying in the same running stage is allowed; `done` is reachable
    /// only from `running`, `failed` from any live state.
    pub fn can_advance_to(&self, next: &JobState) -> bool {
        if self.is_terminal() {
            return false;
        }
        match next {
            JobState::Done => matches!(self, JobState::Running { .. }),
            JobState::Failed { .. } => true,
            JobState::Running { .. } if matches!(self, JobState::Running { .. }) => next.rank() >= self.rank(),
            _ => next.rank() > self.rank(),
        }
    }
}

/// One line of the `GET /v1/jobs/{id}/events` stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JobEvent {
    /// The job entered a new lifecycle state.
    State {
        #[serde(flatten)]
        state: JobState,
    },
    IngestStarted {
        modality: Modality,
    },
    IngestFinished {
        doc_id: String,
        segments: usize,
    },
    Stage(StageEvent),
}

impl JobEvent {
    pub fn to_ndjson_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("job events serialize");
        line.push('\n');
        line
    }

    /// True for the event after which the stream closes.
    pub fn is_final(&self) -> bool {
        matches!(self, JobEvent::State { state } if state.is_terminal())
    }
}

/// Response of `GET /v1/jobs/{id}`. `result` is present iff the job is done.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSnapshot {
    pub job_id: String,
    pub method: Method,
    pub modality: Modality,
    pub output_format: OutputFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_instruction: Option<String>,
    #[serde(flatten)]
    pub state: JobState,
    pub created_at: String,
    pub updated_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<AnalysisResult>,
}

/// Catalog entry of `GET /v1/methods`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodInfo {
    pub method: Method,
    pub title: String,
    pub stage_count: usize,
    pub roles: Vec<AgentRole>,
    pub result_shape: Vec<Tier>,
    pub accepted_modalities: Vec<Modality>,
}

pub fn list_methods() -> Vec<MethodInfo> {
    Method::ALL
        .iter()
        .map(|&method| {
            let graph = plan(method);
            MethodInfo {
                method,
                title: method.title().to_string(),
                stage_count: graph.stages.len(),
                roles: graph.stages.iter().map(|s| s.role).collect(),
                result_shape: graph.result_shape,
                accepted_modalities: Modality::ALL.to_vec(),
            }
        })
        .collect()
}

/// Error body returned with every non-2xx service response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    NotReady,
    QueueFull,
    UnsupportedFormat,
    Internal,
}
