//! Qualitative data analysis engine: method-specific pipelines of
//! single-turn agents over ingested documents.

pub mod agents;
pub mod backend;
pub mod canonical;
pub mod emit;
pub mod ingest;
pub mod jobs;
pub mod method;
pub mod model;
pub mod pipeline;
pub mod segment;
pub mod transport;
pub mod validate;

pub use agents::{role_sequence, AgentRole};
pub use canonical::{from_canonical_json, to_canonical_json};
pub use method::{Method, OutputFormat, Tier};
pub use model::{AnalysisRequest, AnalysisResult, Document, Modality, Provenance};
pub use pipeline::{plan, PipelineConfig, PipelineError, Runner, StageEvent};
pub use validate::{validate_result, ValidationReport, ViolationKind};
