use std::collections::BTreeSet;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender};
use tokio::task::JoinHandle;

use super::assemble::{assemble, check_members, check_partition, dedupe_codes, dedupe_patterns, Collected};
use super::{chunk, plan, PipelineError, StageEvent, StageSpec, StageStatus, MAX_RETRY_LIMIT};
use crate::agents::{
    parse_agent_output, CategorySet, CodeItem, CodeSet, GroupItem, GroupedCodes, PatternItem,
    PatternSet, PromptLibrary, RawText, SegmentText, StagePayload, SummaryText, ThemeSet,
};
use crate::backend::{build_backend, Backend, CompletionRequest, FinishReason};
use crate::method::Method;
use crate::model::{AnalysisRequest, AnalysisResult, Document, StageRecord};
use crate::transport::ReqwestTransport;
use crate::validate::validate_result;

type Check<'a> = dyn Fn(&StagePayload) -> Result<(), String> + Send + Sync + 'a;

/// Source of stage timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    /// Wall-clock UTC time.
    System,
    /// One second per reading, starting at the Unix epoch, so runs against a
    /// deterministic backend serialize identically.
    Logical,
}

struct RunClock {
    kind: Clock,
    tick: AtomicI64,
}

impl RunClock {
    fn now(&self) -> String {
        match self.kind {
            Clock::System => Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            Clock::Logical => {
                let t = self.tick.fetch_add(1, Ordering::SeqCst);
                DateTime::from_timestamp(t, 0)
                    .expect("small timestamps are in range")
                    .to_rfc3339_opts(SecondsFormat::Secs, true)
            }
        }
    }
}

/// Executes pipelines against one backend.
#[derive(Clone)]
pub struct Runner {
    backend: Arc<dyn Backend>,
    prompts: Arc<PromptLibrary>,
    clock: Clock,
}

impl std::fmt::Debug for Runner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runner").field("clock", &self.clock).finish_non_exhaustive()
    }
}

/// A run executing in the background.
pub struct RunHandle {
    events: UnboundedReceiver<StageEvent>,
    task: JoinHandle<Result<AnalysisResult, PipelineError>>,
}

impl RunHandle {
    pub async fn next_event(&mut self) -> Option<StageEvent> {
        self.events.recv().await
    }

    pub async fn join(self) -> Result<AnalysisResult, PipelineError> {
        self.task
            .await
            .map_err(|e| PipelineError::InvalidRequest(format!("run task aborted: {e}")))?
    }
}

/// The ordered event stream of a run; it ends once the run finishes.
pub fn stage_events(handle: &mut RunHandle) -> &mut UnboundedReceiver<StageEvent> {
    &mut handle.events
}

/// Runs `request` on the backend its config describes.
pub async fn run(request: &AnalysisRequest) -> Result<AnalysisResult, PipelineError> {
    let backend = build_backend(&request.config.backend, Arc::new(ReqwestTransport::default()))?;
    Runner::new(backend).run(request, None).await
}

/// Like [`run`], also reporting stage progress on `events`.
pub async fn run_with_events(
    request: &AnalysisRequest,
    events: &UnboundedSender<StageEvent>,
) -> Result<AnalysisResult, PipelineError> {
    let backend = build_backend(&request.config.backend, Arc::new(ReqwestTransport::default()))?;
    Runner::new(backend).run(request, Some(events)).await
}

impl Runner {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        let clock = if backend.is_deterministic() {
            Clock::Logical
        } else {
            Clock::System
        };
        Self {
            backend,
            prompts: Arc::new(PromptLibrary::builtin().clone()),
            clock,
        }
    }

    pub fn with_prompts(mut self, prompts: PromptLibrary) -> Self {
        self.prompts = Arc::new(prompts);
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Spawns the run on the current tokio runtime.
    pub fn start(&self, request: AnalysisRequest) -> RunHandle {
        let (tx, rx) = unbounded_channel();
        let runner = self.clone();
        let task = tokio::spawn(async move { runner.run(&request, Some(&tx)).await });
        RunHandle { events: rx, task }
    }

    pub async fn run(
        &self,
        request: &AnalysisRequest,
        events: Option<&UnboundedSender<StageEvent>>,
    ) -> Result<AnalysisResult, PipelineError> {
        request.validate()?;
        let ctx = RunCtx {
            runner: self,
            request,
            doc: &request.document,
            events,
            clock: RunClock {
                kind: self.clock,
                tick: AtomicI64::new(0),
            },
            stages: plan(request.method).stages,
        };
        let (collected, trace) = match request.method {
            Method::Thematic | Method::Narrative | Method::Content => ctx.summarized().await?,
            Method::Discourse => ctx.discourse().await?,
            Method::GroundedTheory => ctx.grounded().await?,
        };
        let result = assemble(request.method, ctx.doc, collected, trace);
        let report = validate_result(&result, ctx.doc);
        if !report.ok {
            return Err(PipelineError::InvalidResult(report.summary()));
        }
        Ok(result)
    }
}

#[derive(Default)]
struct Usage {
    attempts: u32,
    input_chars: u64,
    output_chars: u64,
}

struct RunCtx<'a> {
    runner: &'a Runner,
    request: &'a AnalysisRequest,
    doc: &'a Document,
    events: Option<&'a UnboundedSender<StageEvent>>,
    clock: RunClock,
    stages: Vec<StageSpec>,
}

impl RunCtx<'_> {
    fn emit(&self, stage_index: usize, status: StageStatus, detail: Option<String>) {
        if let Some(tx) = self.events {
            let _ = tx.send(StageEvent {
                stage_index,
                role: self.stages[stage_index].role,
                status,
                detail,
            });
        }
    }

    /// Runs stage `index` once per input payload, returning one output per
    /// input plus the stage's trace record.
    async fn stage(
        &self,
        index: usize,
        inputs: Vec<StagePayload>,
        check: &Check<'_>,
    ) -> Result<(Vec<StagePayload>, StageRecord), PipelineError> {
        let role = self.stages[index].role;
        let started_at = self.clock.now();
        self.emit(index, StageStatus::Started, None);
        let mut usage = Usage::default();
        let mut outputs = Vec::with_capacity(inputs.len());
        for input in inputs {
            match self.attempts(index, input, check, &mut usage).await {
                Ok(out) => outputs.push(out),
                Err(e) => {
                    self.emit(index, StageStatus::Failed, Some(e.to_string()));
                    return Err(e);
                }
            }
        }
        let record = StageRecord {
            role,
            started_at,
            finished_at: self.clock.now(),
            attempts: usage.attempts,
            input_chars: usage.input_chars,
            output_chars: usage.output_chars,
        };
        self.emit(index, StageStatus::Done, None);
        Ok((outputs, record))
    }

    async fn single(
        &self,
        index: usize,
        input: StagePayload,
        check: &Check<'_>,
    ) -> Result<(StagePayload, StageRecord), PipelineError> {
        let (mut out, record) = self.stage(index, vec![input], check).await?;
        Ok((out.pop().expect("one output per input"), record))
    }

    async fn attempts(
        &self,
        index: usize,
        input: StagePayload,
        check: &Check<'_>,
        usage: &mut Usage,
    ) -> Result<StagePayload, PipelineError> {
        let spec = &self.stages[index];
        let role = spec.role;
        let config = &self.request.config;
        let limit = config.retry_limit.unwrap_or(spec.retry_limit).min(MAX_RETRY_LIMIT);
        let prompt = self.runner.prompts.render(
            self.request.method,
            role,
            &input,
            self.request.custom_instruction.as_deref(),
        )?;
        let mut last_error = String::new();
        for attempt in 0..=limit {
            let mut user_content = prompt.user_content.clone();
            if attempt > 0 {
                user_content.push_str(&corrective_suffix(&last_error));
            }
            let mut req = CompletionRequest::new(role, prompt.system_instruction.clone(), user_content);
            req.max_output_chars = config.backend.max_output_chars;
            req.temperature = config.backend.temperature;
            usage.attempts += 1;
            usage.input_chars += req.input_chars() as u64;
            let response = self.runner.backend.complete(&req).await?;
            usage.output_chars += response.usage.output_chars as u64;
            let outcome = if response.finish_reason == FinishReason::Error {
                Err("backend reported an error finish".to_string())
            } else {
                parse_agent_output(role, &response.text)
                    .map_err(|e| e.to_string())
                    .and_then(|p| check(&p).map(|()| p))
                    .map_err(|e| match response.finish_reason {
                        FinishReason::Truncated => format!("{e} (output was truncated)"),
                        _ => e,
                    })
            };
            match outcome {
                Ok(payload) => return Ok(payload),
                Err(e) => {
                    tracing::debug!(%role, attempt, error = %e, "stage output rejected");
                    last_error = e;
                    if attempt < limit {
                        self.emit(index, StageStatus::Retrying, Some(last_error.clone()));
                    }
                }
            }
        }
        Err(PipelineError::StageFailed {
            role,
            attempts: limit + 1,
            last_error,
        })
    }

    fn texts(&self, ids: impl IntoIterator<Item = usize>) -> Vec<SegmentText> {
        ids.into_iter()
            .filter_map(|id| self.doc.segment(id))
            .map(|s| SegmentText {
                id: s.segment_id,
                text: s.text.clone(),
            })
            .collect()
    }

    /// Segments shown alongside a structured payload: `priority` first, then
    /// the rest in order, within the chunk budget; returned sorted by id.
    fn sources(&self, priority: impl IntoIterator<Item = usize>) -> Vec<SegmentText> {
        let budget = self.request.config.chunk_max_chars;
        let mut chosen = BTreeSet::new();
        let mut used = 0usize;
        let all = 0..self.doc.segments.len();
        for id in priority.into_iter().chain(all) {
            let Some(seg) = self.doc.segment(id) else { continue };
            if chosen.contains(&id) {
                continue;
            }
            let len = seg.text.chars().count();
            if !chosen.is_empty() && used + len > budget {
                continue;
            }
            used += len;
            chosen.insert(id);
        }
        self.texts(chosen)
    }

    fn chunk_inputs(&self) -> Vec<(StagePayload, Vec<usize>)> {
        chunk(self.doc, &self.request.config)
            .into_iter()
            .map(|c| {
                let ids: Vec<usize> = c.segments.collect();
                let payload = StagePayload::RawText(RawText {
                    segments: self.texts(ids.iter().copied()),
                });
                (payload, ids)
            })
            .collect()
    }

    fn segments_exist(&self, ids: &[usize], what: &str) -> Result<(), String> {
        match ids.iter().find(|id| !self.doc.has_segment(**id)) {
            Some(id) => Err(format!("{what} cites unknown segment {id}")),
            None => Ok(()),
        }
    }

    fn check_codes(&self, p: &StagePayload) -> Result<(), String> {
        let StagePayload::CodeSet(set) = p else { return Ok(()) };
        for code in &set.codes {
            self.segments_exist(&code.segments, &format!("code '{}'", code.label))?;
        }
        Ok(())
    }

    fn check_patterns(&self, patterns: &[PatternItem]) -> Result<(), String> {
        for p in patterns {
            self.segments_exist(&p.evidence, &format!("pattern '{}'", p.statement))?;
        }
        Ok(())
    }

    /// Thematic, narrative and content analysis: a summarizing first stage,
    /// then coding and grouping.
    async fn summarized(&self) -> Result<(Collected, Vec<StageRecord>), PipelineError> {
        let method = self.request.method;
        let mut trace = Vec::new();
        let mut out = Collected::default();

        let chunks = self.chunk_inputs();
        let allowed: Vec<Vec<usize>> = chunks.iter().map(|(_, ids)| ids.clone()).collect();
        let (payloads, record) = self
            .stage(0, chunks.into_iter().map(|(p, _)| p).collect(), &|p| {
                let StagePayload::SummaryText(s) = p else { return Ok(()) };
                self.segments_exist(&s.retained_segments, "summary")
            })
            .await?;
        trace.push(record);
        let mut summaries = Vec::new();
        let mut retained = BTreeSet::new();
        for (payload, ids) in payloads.into_iter().zip(allowed) {
            let StagePayload::SummaryText(s) = payload else { unreachable!("checked by parser") };
            summaries.push(s.summary);
            if s.retained_segments.is_empty() {
                retained.extend(ids);
            } else {
                retained.extend(s.retained_segments);
            }
        }
        let summary = summaries.join(" ");
        out.summary = Some(summary.clone());

        let coder_input = StagePayload::SummaryText(SummaryText {
            summary,
            retained_segments: retained.iter().copied().collect(),
            sources: self.texts(retained.iter().copied()),
        });
        let (codes, record) = self.single(1, coder_input, &|p| self.check_codes(p)).await?;
        trace.push(record);
        out.codes = dedupe_codes(code_items(codes));

        let mut next = 2;
        if method == Method::Thematic {
            let input = self.code_set(&out.codes);
            let (codes, record) = self.single(next, input, &|p| self.check_codes(p)).await?;
            trace.push(record);
            out.codes = dedupe_codes(code_items(codes));
            next += 1;
        }

        if method == Method::Content {
            let labels = code_labels(&out.codes);
            let input = self.code_set(&out.codes);
            let (patterns, record) = self
                .single(next, input, &|p| {
                    let StagePayload::PatternSet(set) = p else { return Ok(()) };
                    self.check_patterns(&set.patterns)?;
                    check_partition(&set.categories, &labels, "category")?;
                    let cats = group_labels(&set.categories);
                    for theme in &set.themes {
                        check_members(&theme.categories, &cats, &format!("theme '{}'", theme.label))?;
                    }
                    if !cats.is_empty() && set.themes.is_empty() {
                        return Err("categories were produced but no themes".into());
                    }
                    Ok(())
                })
                .await?;
            trace.push(record);
            let StagePayload::PatternSet(set) = patterns else { unreachable!("checked by parser") };
            out.patterns = dedupe_patterns(set.patterns);
            out.categories = set.categories;
            out.themes = set.themes;
            return Ok((out, trace));
        }

        let labels = code_labels(&out.codes);
        let input = self.code_set(&out.codes);
        let (groups, record) = self
            .single(next, input, &|p| {
                let StagePayload::GroupedCodes(g) = p else { return Ok(()) };
                check_partition(&g.subcategories, &labels, "subcategory")
            })
            .await?;
        trace.push(record);
        let StagePayload::GroupedCodes(groups) = groups else { unreachable!("checked by parser") };
        out.subcategories = groups.subcategories;
        next += 1;

        let sub_labels = group_labels(&out.subcategories);
        let input = StagePayload::GroupedCodes(GroupedCodes {
            subcategories: out.subcategories.clone(),
            sources: self.sources(code_segments(&out.codes)),
        });
        let (cats, record) = self
            .single(next, input, &|p| {
                let StagePayload::CategorySet(c) = p else { return Ok(()) };
                check_partition(&c.categories, &sub_labels, "category")
            })
            .await?;
        trace.push(record);
        let StagePayload::CategorySet(cats) = cats else { unreachable!("checked by parser") };
        out.categories = cats.categories;
        next += 1;

        if method == Method::Thematic {
            let cat_labels = group_labels(&out.categories);
            let input = StagePayload::CategorySet(CategorySet {
                categories: out.categories.clone(),
                sources: self.sources(code_segments(&out.codes)),
            });
            let (themes, record) = self
                .single(next, input, &|p| check_themes(p, &cat_labels))
                .await?;
            trace.push(record);
            let StagePayload::ThemeSet(themes) = themes else { unreachable!("checked by parser") };
            out.themes = themes.themes;
        }
        Ok((out, trace))
    }

    async fn discourse(&self) -> Result<(Collected, Vec<StageRecord>), PipelineError> {
        let mut trace = Vec::new();
        let mut out = Collected::default();
        let chunks = self.chunk_inputs();
        let (payloads, record) = self
            .stage(0, chunks.into_iter().map(|(p, _)| p).collect(), &|p| {
                let StagePayload::PatternSet(set) = p else { return Ok(()) };
                if set.patterns.is_empty() {
                    return Err("no key patterns identified".into());
                }
                self.check_patterns(&set.patterns)
            })
            .await?;
        trace.push(record);
        let patterns: Vec<PatternItem> = payloads
            .into_iter()
            .flat_map(|p| match p {
                StagePayload::PatternSet(set) => set.patterns,
                _ => unreachable!("checked by parser"),
            })
            .collect();
        out.patterns = dedupe_patterns(patterns);

        let evidence: Vec<usize> = out.patterns.iter().flat_map(|p| p.evidence.clone()).collect();
        let input = StagePayload::PatternSet(PatternSet {
            patterns: out.patterns.clone(),
            sources: self.sources(evidence),
            ..Default::default()
        });
        let check = |p: &StagePayload| {
            let StagePayload::DiscourseSections(d) = p else { return Ok(()) };
            self.segments_exist(&d.evidence, "discourse section")
        };
        let (language, context) = tokio::join!(
            self.single(1, input.clone(), &check),
            self.single(2, input, &check)
        );
        let (language, language_record) = language?;
        let (context, context_record) = context?;
        trace.push(language_record);
        trace.push(context_record);
        if let StagePayload::DiscourseSections(d) = language {
            out.language_analysis = d.language_analysis;
        }
        if let StagePayload::DiscourseSections(d) = context {
            out.broader_context = d.broader_context;
        }
        Ok((out, trace))
    }

    async fn grounded(&self) -> Result<(Collected, Vec<StageRecord>), PipelineError> {
        let mut trace = Vec::new();
        let mut out = Collected::default();

        let chunks = self.chunk_inputs();
        let (payloads, record) = self
            .stage(0, chunks.into_iter().map(|(p, _)| p).collect(), &|p| self.check_codes(p))
            .await?;
        trace.push(record);
        out.codes = dedupe_codes(payloads.into_iter().flat_map(code_items).collect());

        let labels = code_labels(&out.codes);
        let (cats, record) = self
            .single(1, self.code_set(&out.codes), &|p| {
                let StagePayload::CategorySet(c) = p else { return Ok(()) };
                check_partition(&c.categories, &labels, "category")
            })
            .await?;
        trace.push(record);
        let StagePayload::CategorySet(cats) = cats else { unreachable!("checked by parser") };
        out.categories = cats.categories;

        let cat_labels = group_labels(&out.categories);
        let input = StagePayload::CategorySet(CategorySet {
            categories: out.categories.clone(),
            sources: self.sources(code_segments(&out.codes)),
        });
        let (patterns, record) = self
            .single(2, input, &|p| {
                let StagePayload::PatternSet(set) = p else { return Ok(()) };
                self.check_patterns(&set.patterns)?;
                for pattern in &set.patterns {
                    check_members(&pattern.categories, &cat_labels, &format!("pattern '{}'", pattern.statement))?;
                }
                Ok(())
            })
            .await?;
        trace.push(record);
        let StagePayload::PatternSet(patterns) = patterns else { unreachable!("checked by parser") };
        out.patterns = dedupe_patterns(patterns.patterns);

        let evidence: Vec<usize> = out.patterns.iter().flat_map(|p| p.evidence.clone()).collect();
        let input = StagePayload::PatternSet(PatternSet {
            patterns: out.patterns.clone(),
            categories: out.categories.clone(),
            sources: self.sources(evidence),
            ..Default::default()
        });
        let (themes, record) = self.single(3, input, &|p| check_themes(p, &cat_labels)).await?;
        trace.push(record);
        let StagePayload::ThemeSet(themes) = themes else { unreachable!("checked by parser") };
        out.themes = themes.themes;

        let input = StagePayload::ThemeSet(ThemeSet {
            themes: out.themes.clone(),
            sources: self.sources(code_segments(&out.codes)),
        });
        let (core, record) = self
            .single(4, input, &|p| {
                let StagePayload::CoreConcept(c) = p else { return Ok(()) };
                match &c.core_concept {
                    None if !cat_labels.is_empty() => Err("no core concept identified".into()),
                    None => Ok(()),
                    Some(core) => check_members(&core.categories, &cat_labels, "core concept"),
                }
            })
            .await?;
        trace.push(record);
        let StagePayload::CoreConcept(core) = core else { unreachable!("checked by parser") };
        out.core = core.core_concept;
        Ok((out, trace))
    }

    fn code_set(&self, codes: &[CodeItem]) -> StagePayload {
        StagePayload::CodeSet(CodeSet {
            codes: codes.to_vec(),
            sources: self.sources(code_segments(codes)),
        })
    }
}

fn corrective_suffix(error: &str) -> String {
    format!(
        "\nYour previous reply was rejected: {error}\nReply again with a single fenced JSON block that follows the output schema exactly.\n"
    )
}

fn code_items(p: StagePayload) -> Vec<CodeItem> {
    match p {
        StagePayload::CodeSet(set) => set.codes,
        other => unreachable!("expected a code set, got {}", other.kind()),
    }
}

fn code_labels(codes: &[CodeItem]) -> Vec<String> {
    codes.iter().map(|c| c.label.clone()).collect()
}

fn group_labels(groups: &[GroupItem]) -> Vec<String> {
    groups.iter().map(|g| g.label.clone()).collect()
}

fn code_segments(codes: &[CodeItem]) -> Vec<usize> {
    codes.iter().flat_map(|c| c.segments.iter().copied()).collect()
}

fn check_themes(p: &StagePayload, categories: &[String]) -> Result<(), String> {
    let StagePayload::ThemeSet(set) = p else { return Ok(()) };
    for theme in &set.themes {
        check_members(&theme.categories, categories, &format!("theme '{}'", theme.label))?;
    }
    if !categories.is_empty() && set.themes.is_empty() {
        return Err("categories were given but no themes were produced".into());
    }
    Ok(())
}
