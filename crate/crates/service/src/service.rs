use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use qda_core::backend::{build_backend, Backend};
use qda_core::emit::emit;
use qda_core::ingest::{FetchConfig, IngestError, Ingestor};
use qda_core::jobs::{
    list_methods, FailureKind, JobEvent, JobFailure, JobOptions, JobSnapshot, JobState, MethodInfo, SubmitResponse,
    Submission,
};
use qda_core::pipeline::{StageStatus, MAX_RETRY_LIMIT};
use qda_core::transport::Transport;
use qda_core::{AnalysisRequest, AnalysisResult, Method, OutputFormat, PipelineConfig, Runner};
use tokio::sync::{mpsc, watch};

use crate::error::ServiceError;
use crate::journal::{Journal, JournalEntry};

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;
pub const DEFAULT_WORKERS: usize = 2;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Maximum number of jobs that are queued or running at once.
    pub queue_capacity: usize,
    /// Jobs processed concurrently.
    pub workers: usize,
    pub journal_path: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub fetch: FetchConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            workers: DEFAULT_WORKERS,
            journal_path: None,
            pipeline: PipelineConfig::default(),
            fetch: FetchConfig::default(),
        }
    }
}

struct JobRecord {
    snapshot: JobSnapshot,
    submission: Submission,
    events: Vec<JobEvent>,
    notify: watch::Sender<usize>,
}

impl JobRecord {
    fn new(snapshot: JobSnapshot, submission: Submission) -> Self {
        let (notify, _) = watch::channel(0);
        Self {
            snapshot,
            submission,
            events: Vec::new(),
            notify,
        }
    }

    fn push(&mut self, event: JobEvent) {
        self.events.push(event);
        self.notify.send_replace(self.events.len());
    }
}

struct Inner {
    config: ServiceConfig,
    jobs: Mutex<HashMap<String, JobRecord>>,
    queue: mpsc::UnboundedSender<String>,
    ingestor: Ingestor,
    runner: Runner,
    journal: Option<Journal>,
}

/// The job registry and its worker pool. Cloning shares the same service.
#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl Service {
    /// Builds the backend described by `config.pipeline.backend`. Must be
    /// called inside a tokio runtime.
    pub fn from_config(config: ServiceConfig, transport: Arc<dyn Transport>) -> Result<Self, ServiceError> {
        let backend = build_backend(&config.pipeline.backend, transport.clone())
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        Self::new(config, backend, transport)
    }

    /// `transport` carries ingestion fetches; `backend` answers agent
    /// prompts. Must be called inside a tokio runtime.
    pub fn new(
        config: ServiceConfig,
        backend: Arc<dyn Backend>,
        transport: Arc<dyn Transport>,
    ) -> Result<Self, ServiceError> {
        config
            .pipeline
            .validate()
            .map_err(|e| ServiceError::BadRequest(format!("pipeline config: {e}")))?;
        let (journal, restored) = match &config.journal_path {
            Some(path) => {
                let (journal, entries) = Journal::open(path)
                    .map_err(|e| ServiceError::Internal(format!("journal {}: {e}", path.display())))?;
                (Some(journal), entries)
            }
            None => (None, Vec::new()),
        };
        let (queue, rx) = mpsc::unbounded_channel();
        let ingestor = Ingestor::new(transport, config.fetch.clone()).with_policy(config.pipeline.segmentation);
        let workers = config.workers.max(1);
        let service = Service {
            inner: Arc::new(Inner {
                config,
                jobs: Mutex::new(HashMap::new()),
                queue,
                ingestor,
                runner: Runner::new(backend),
                journal,
            }),
        };
        service.restore(restored);
        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        for _ in 0..workers {
            let inner = service.inner.clone();
            let rx = rx.clone();
            tokio::spawn(async move {
                loop {
                    let next = rx.lock().await.recv().await;
                    let Some(id) = next else { break };
                    inner.process(&id).await;
                }
            });
        }
        Ok(service)
    }

    fn restore(&self, entries: Vec<JournalEntry>) {
        let mut order = Vec::new();
        let mut jobs = self.inner.jobs.lock().unwrap();
        for entry in entries {
            match entry {
                JournalEntry::Submitted {
                    job_id,
                    created_at,
                    submission,
                } => {
                    let Ok((method, format)) = parse_choices(&submission) else { continue };
                    let snapshot = JobSnapshot {
                        job_id: job_id.clone(),
                        method,
                        modality: submission.source.modality(),
                        output_format: format,
                        custom_instruction: submission.custom_instruction.clone(),
                        state: JobState::Queued,
                        created_at: created_at.clone(),
                        updated_at: created_at,
                        doc_id: None,
                        result: None,
                    };
                    order.push(job_id.clone());
                    jobs.insert(job_id, JobRecord::new(snapshot, submission));
                }
                JournalEntry::Finished {
                    job_id,
                    finished_at,
                    state,
                    doc_id,
                    result,
                } => {
                    if let Some(record) = jobs.get_mut(&job_id) {
                        record.snapshot.state = state;
                        record.snapshot.updated_at = finished_at;
                        record.snapshot.doc_id = doc_id;
                        record.snapshot.result = result.map(|r| *r);
                    }
                }
            }
        }
        for id in order {
            let record = jobs.get_mut(&id).expect("restored above");
            let state = record.snapshot.state.clone();
            let terminal = state.is_terminal();
            record.push(JobEvent::State { state });
            if !terminal {
                tracing::info!(job_id = %id, "re-queueing job from journal");
                let _ = self.inner.queue.send(id);
            }
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn methods(&self) -> Vec<MethodInfo> {
        list_methods()
    }

    pub fn submit(&self, submission: Submission) -> Result<SubmitResponse, ServiceError> {
        let (method, format) = parse_choices(&submission)?;
        self.inner.ingestor.precheck(&submission.source).map_err(|e| match e {
            IngestError::UnsupportedFormat(_) => ServiceError::UnsupportedFormat(e.to_string()),
            other => ServiceError::BadRequest(other.to_string()),
        })?;
        self.inner.job_config(submission.options.as_ref())?;

        let job_id = format!("job-{}", uuid::Uuid::new_v4().simple());
        let created_at = now();
        let snapshot = JobSnapshot {
            job_id: job_id.clone(),
            method,
            modality: submission.source.modality(),
            output_format: format,
            custom_instruction: submission.custom_instruction.clone(),
            state: JobState::Queued,
            created_at: created_at.clone(),
            updated_at: created_at.clone(),
            doc_id: None,
            result: None,
        };
        {
            let mut jobs = self.inner.jobs.lock().unwrap();
            let capacity = self.inner.config.queue_capacity;
            let active = jobs.values().filter(|r| !r.snapshot.state.is_terminal()).count();
            if active >= capacity {
                return Err(ServiceError::QueueFull { capacity });
            }
            if let Some(journal) = &self.inner.journal {
                journal.append(&JournalEntry::Submitted {
                    job_id: job_id.clone(),
                    created_at,
                    submission: submission.clone(),
                });
            }
            let mut record = JobRecord::new(snapshot, submission);
            record.push(JobEvent::State {
                state: JobState::Queued,
            });
            jobs.insert(job_id.clone(), record);
        }
        self.inner
            .queue
            .send(job_id.clone())
            .map_err(|_| ServiceError::Internal("worker pool stopped".into()))?;
        tracing::info!(%job_id, %method, "job queued");
        Ok(SubmitResponse {
            job_id,
            state: JobState::Queued,
        })
    }

    pub fn job(&self, id: &str) -> Result<JobSnapshot, ServiceError> {
        self.inner
            .jobs
            .lock()
            .unwrap()
            .get(id)
            .map(|r| r.snapshot.clone())
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    /// Replays every recorded event of the job, then follows new ones until
    /// the job reaches a terminal state.
    pub fn events(&self, id: &str) -> Result<EventStream, ServiceError> {
        let jobs = self.inner.jobs.lock().unwrap();
        let record = jobs.get(id).ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        Ok(EventStream {
            inner: self.inner.clone(),
            id: id.to_string(),
            next: 0,
            changed: record.notify.subscribe(),
            finished: false,
        })
    }

    /// Exported result bytes. `format` defaults to the job's requested one.
    pub fn result(&self, id: &str, format: Option<&str>) -> Result<(OutputFormat, Vec<u8>), ServiceError> {
        let snapshot = self.job(id)?;
        let format = match format {
            Some(f) => f
                .parse::<OutputFormat>()
                .map_err(|e| ServiceError::UnsupportedFormat(e.to_string()))?,
            None => snapshot.output_format,
        };
        match (&snapshot.state, &snapshot.result) {
            (JobState::Done, Some(result)) => Ok((format, emit(result, format))),
            (state, _) => Err(ServiceError::NotReady {
                id: id.to_string(),
                state: state.name(),
            }),
        }
    }

    /// Waits for the job to finish and returns its final snapshot.
    pub async fn wait(&self, id: &str) -> Result<JobSnapshot, ServiceError> {
        let mut events = self.events(id)?;
        while events.next().await.is_some() {}
        self.job(id)
    }
}

fn parse_choices(submission: &Submission) -> Result<(Method, OutputFormat), ServiceError> {
    let method = submission
        .method
        .parse::<Method>()
        .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let format = match &submission.output_format {
        Some(f) => f
            .parse::<OutputFormat>()
            .map_err(|e| ServiceError::UnsupportedFormat(e.to_string()))?,
        None => OutputFormat::OutputArea,
    };
    Ok((method, format))
}

impl Inner {
    fn job_config(&self, options: Option<&JobOptions>) -> Result<PipelineConfig, ServiceError> {
        let mut config = self.config.pipeline.clone();
        if let Some(o) = options {
            if let Some(limit) = o.retry_limit {
                if limit > MAX_RETRY_LIMIT {
                    return Err(ServiceError::BadRequest(format!(
                        "retry_limit {limit} exceeds the maximum of {MAX_RETRY_LIMIT}"
                    )));
                }
                config.retry_limit = Some(limit);
            }
            if let Some(max) = o.chunk_max_chars {
                config.chunk_max_chars = max;
            }
            if let Some(overlap) = o.chunk_overlap_chars {
                config.chunk_overlap_chars = overlap;
            }
        }
        config.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        Ok(config)
    }

    fn with_record<T>(&self, id: &str, f: impl FnOnce(&mut JobRecord) -> T) -> Option<T> {
        self.jobs.lock().unwrap().get_mut(id).map(f)
    }

    fn push(&self, id: &str, event: JobEvent) {
        self.with_record(id, |r| r.push(event));
    }

    /// Moves the job forward; backward moves are refused.
    fn transition(&self, id: &str, state: JobState, result: Option<AnalysisResult>) {
        let terminal = state.is_terminal();
        let moved = self.with_record(id, |r| {
            if !r.snapshot.state.can_advance_to(&state) {
                tracing::error!(job_id = %id, from = r.snapshot.state.name(), to = state.name(), "refused state transition");
                return false;
            }
            if r.snapshot.state == state {
                return false;
            }
            r.snapshot.state = state.clone();
            r.snapshot.updated_at = now();
            r.snapshot.result = result;
            r.push(JobEvent::State { state: state.clone() });
            true
        });
        if moved == Some(true) && terminal {
            if let Some(journal) = &self.journal {
                let (finished_at, doc_id, result) = self
                    .with_record(id, |r| {
                        (
                            r.snapshot.updated_at.clone(),
                            r.snapshot.doc_id.clone(),
                            r.snapshot.result.clone().map(Box::new),
                        )
                    })
                    .unwrap_or_default();
                journal.append(&JournalEntry::Finished {
                    job_id: id.to_string(),
                    finished_at,
                    state,
                    doc_id,
                    result,
                });
            }
        }
    }

    fn fail(&self, id: &str, failure: JobFailure) {
        tracing::warn!(job_id = %id, kind = ?failure.kind, message = %failure.message, "job failed");
        self.transition(id, JobState::Failed { error: failure }, None);
    }

    async fn process(&self, id: &str) {
        let Some((submission, method)) = self.with_record(id, |r| (r.submission.clone(), r.snapshot.method)) else {
            return;
        };
        let config = match self.job_config(submission.options.as_ref()) {
            Ok(c) => c,
            Err(e) => {
                return self.fail(
                    id,
                    JobFailure {
                        kind: FailureKind::InvalidRequest,
                        message: e.to_string(),
                    },
                )
            }
        };
        self.transition(id, JobState::Ingesting, None);
        self.push(
            id,
            JobEvent::IngestStarted {
                modality: submission.source.modality(),
            },
        );
        let document = match self.ingestor.ingest(&submission.source).await {
            Ok(d) => d,
            Err(e) => return self.fail(id, JobFailure::from(&e)),
        };
        self.with_record(id, |r| {
            r.snapshot.doc_id = Some(document.doc_id.clone());
            r.push(JobEvent::IngestFinished {
                doc_id: document.doc_id.clone(),
                segments: document.segments.len(),
            });
        });

        let mut request = AnalysisRequest::new(method, document).with_config(config);
        if let Some(instruction) = submission.custom_instruction.filter(|s| !s.trim().is_empty()) {
            request = request.with_instruction(instruction);
        }
        if let Some(format) = submission.output_format.and_then(|f| f.parse().ok()) {
            request = request.with_format(format);
        }
        self.transition(id, JobState::Running { stage_index: 0 }, None);
        let mut handle = self.runner.start(request);
        let mut highest = 0;
        while let Some(event) = handle.next_event().await {
            if event.status == StageStatus::Started && event.stage_index > highest {
                highest = event.stage_index;
                self.transition(id, JobState::Running { stage_index: highest }, None);
            }
            self.push(id, JobEvent::Stage(event));
        }
        match handle.join().await {
            Ok(result) => {
                tracing::info!(job_id = %id, "job done");
                self.transition(id, JobState::Done, Some(result));
            }
            Err(e) => self.fail(id, JobFailure::from(&e)),
        }
    }
}

/// Progress of one job: recorded events first, then live ones. Ends after
/// the terminal state event.
pub struct EventStream {
    inner: Arc<Inner>,
    id: String,
    next: usize,
    changed: watch::Receiver<usize>,
    finished: bool,
}

impl EventStream {
    pub async fn next(&mut self) -> Option<JobEvent> {
        if self.finished {
            return None;
        }
        loop {
            let event = self.inner.with_record(&self.id, |r| r.events.get(self.next).cloned())?;
            if let Some(event) = event {
                self.next += 1;
                self.finished = event.is_final();
                return Some(event);
            }
            if self.changed.changed().await.is_err() {
                return None;
            }
        }
    }

    pub fn into_stream(self) -> impl futures::Stream<Item = JobEvent> + Send {
        futures::stream::unfold(self, |mut s| async move { s.next().await.map(|e| (e, s)) })
    }
}
