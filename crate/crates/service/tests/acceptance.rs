//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with the deterministic mock backend and recorded HTTP exchanges
//! only. Exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::future::Future;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use qda_client::Client;
use qda_core::agents::{parse_agent_output, StagePayload};
use qda_core::backend::MockBackend;
use qda_core::emit::{emit, to_csv};
use qda_core::ingest::{FetchConfig, Ingestor, SourceSpec};
use qda_core::jobs::{ErrorCode, JobEvent, JobState, Submission};
use qda_core::model::{Modality, Provenance};
use qda_core::pipeline::StageStatus;
use qda_core::segment::SegmentationPolicy;
use qda_core::transport::{RecordingTransport, ReplayTransport};
use qda_core::{
    plan, to_canonical_json, validate_result, AgentRole, AnalysisRequest, AnalysisResult, Document, Method,
    OutputFormat, PipelineConfig, Runner,
};
use qda_service::{Service, ServiceConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn read(name: &str) -> String {
    std::fs::read_to_string(fixtures().join("matrix").join(name)).unwrap()
}

fn replay() -> ReplayTransport {
    let mut t = ReplayTransport::new();
    for f in ["github_thread.json", "conversation.json"] {
        t.load_file(&fixtures().join("matrix").join(f)).unwrap();
    }
    t
}

const FIXTURE_HOSTS: [&str; 2] = ["https://api.github.com/repos/example-org/", "https://forum.example.org/"];

struct Row {
    name: &'static str,
    method: Method,
    format: OutputFormat,
    source: SourceSpec,
}

fn matrix_rows() -> Vec<Row> {
    vec![
        Row {
            name: "GitHub thread / thematic / CSV",
            method: Method::Thematic,
            format: OutputFormat::Csv,
            source: SourceSpec::GithubLink {
                url: "https://github.com/example-org/field-notes/issues/42".into(),
            },
        },
        Row {
            name: "news text / content / output area",
            method: Method::Content,
            format: OutputFormat::OutputArea,
            source: SourceSpec::InlineText {
                text: read("news_article.txt"),
            },
        },
        Row {
            name: "story upload / narrative / output area",
            method: Method::Narrative,
            format: OutputFormat::OutputArea,
            source: SourceSpec::FileUpload {
                filename: "short_story.pdf".into(),
                bytes: std::fs::read(fixtures().join("matrix/short_story.pdf")).unwrap(),
                declared_kind: None,
            },
        },
        Row {
            name: "conversation link / discourse / doc report",
            method: Method::Discourse,
            format: OutputFormat::DocReport,
            source: SourceSpec::WebLink {
                url: "https://forum.example.org/threads/working-from-home".into(),
            },
        },
        Row {
            name: "interview transcript / grounded theory / output area",
            method: Method::GroundedTheory,
            format: OutputFormat::OutputArea,
            source: SourceSpec::Transcript {
                text: read("interview_transcript.txt"),
                speaker_markers: true,
            },
        },
    ]
}

struct RowRun {
    name: &'static str,
    method: Method,
    format: OutputFormat,
    result: AnalysisResult,
    artifact: Vec<u8>,
    document: Document,
}

/// Mock service whose every outbound request goes through a recording
/// replay transport.
fn mock_service() -> (Service, Arc<RecordingTransport<ReplayTransport>>) {
    let recording = Arc::new(RecordingTransport::new(replay()));
    let service = Service::from_config(ServiceConfig::default(), recording.clone()).unwrap();
    (service, recording)
}

fn check_offline(recording: &RecordingTransport<ReplayTransport>) -> Result<(), String> {
    for r in recording.requests() {
        if !FIXTURE_HOSTS.iter().any(|h| r.url.starts_with(h)) {
            return Err(format!("unexpected outbound request {} {}", r.method, r.url));
        }
    }
    Ok(())
}

async fn run_matrix() -> Result<(Vec<RowRun>, usize), String> {
    let (service, recording) = mock_service();
    let independent = Ingestor::new(Arc::new(replay()), FetchConfig::default());
    let mut runs = Vec::new();
    for row in matrix_rows() {
        let mut submission = Submission::new(row.method, row.source.clone());
        submission.output_format = Some(row.format.as_str().into());
        let id = service.submit(submission).map_err(|e| format!("{}: {e}", row.name))?.job_id;
        let snapshot = service.wait(&id).await.map_err(|e| e.to_string())?;
        if snapshot.state != JobState::Done {
            return Err(format!("{}: ended {:?}", row.name, snapshot.state));
        }
        let (_, artifact) = service.result(&id, None).map_err(|e| e.to_string())?;
        let document = independent.ingest(&row.source).await.map_err(|e| e.to_string())?;
        runs.push(RowRun {
            name: row.name,
            method: row.method,
            format: row.format,
            result: snapshot.result.unwrap(),
            artifact,
            document,
        });
    }
    check_offline(&recording)?;
    Ok((runs, recording.count()))
}

fn topology() -> Outcome {
    let counts: Vec<usize> = Method::ALL.iter().map(|m| plan(*m).stages.len()).collect();
    if counts != [6, 4, 3, 3, 5] {
        return Err(format!("stage counts {counts:?}"));
    }
    if let Some(m) = Method::ALL.iter().find(|m| !plan(**m).is_well_typed()) {
        return Err(format!("{m} pipeline is not well typed"));
    }
    Ok("stage counts 6/4/3/3/5".into())
}

async fn matrix() -> Outcome {
    let started = Instant::now();
    let (runs, requests) = run_matrix().await?;
    for run in &runs {
        if run.result.doc_id != run.document.doc_id {
            return Err(format!("{}: result is for another document", run.name));
        }
        let report = validate_result(&run.result, &run.document);
        if !report.ok {
            return Err(format!("{}: {}", run.name, report.summary()));
        }
        let text = String::from_utf8(run.artifact.clone()).map_err(|e| e.to_string())?;
        let shaped = match run.format {
            OutputFormat::Csv => text.starts_with("code,subcategory,category,theme,supporting_segments,excerpt\n"),
            OutputFormat::OutputArea => serde_json::from_str::<AnalysisResult>(&text).is_ok_and(|r| r == run.result),
            OutputFormat::DocReport => {
                let h2: Vec<&str> = text.lines().filter(|l| l.starts_with("## ")).collect();
                run.method != Method::Discourse || h2 == ["## Key Patterns", "## Language Analysis", "## Broader Context"]
            }
        };
        if !shaped {
            return Err(format!("{}: artifact has the wrong shape", run.name));
        }
    }
    let elapsed = started.elapsed();
    if elapsed > Duration::from_secs(60) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!(
        "{} rows validated in {:.2}s, {requests} replayed fetches, no network",
        runs.len(),
        elapsed.as_secs_f64()
    ))
}

fn digests(runs: &[RowRun]) -> Vec<String> {
    runs.iter()
        .flat_map(|r| OutputFormat::ALL.map(|f| hex::encode(Sha256::digest(emit(&r.result, f)))))
        .collect()
}

async fn determinism() -> Outcome {
    let (a, _) = run_matrix().await?;
    let (b, _) = run_matrix().await?;
    let (da, db) = (digests(&a), digests(&b));
    if da != db {
        return Err("artifact hashes differ between runs".into());
    }
    let requested: Vec<_> = a.iter().map(|r| hex::encode(Sha256::digest(&r.artifact))).collect();
    let again: Vec<_> = b.iter().map(|r| hex::encode(Sha256::digest(&r.artifact))).collect();
    if requested != again {
        return Err("requested artifacts differ between runs".into());
    }
    Ok(format!("{} artifact hashes identical across two runs", da.len()))
}

const VOCAB: [&str; 24] = [
    "harbour", "teacher", "market", "river", "winter", "family", "garden", "letter", "village", "doctor", "bridge",
    "school", "worked", "waited", "built", "carried", "quietly", "early", "late", "storm", "train", "kitchen", "shared",
    "promise",
];
const FILLER: [&str; 6] = ["the", "and", "of", "it", "was", "to"];

fn random_doc(rng: &mut ChaCha8Rng) -> Document {
    let paragraphs = rng.gen_range(1..=6);
    let text = (0..paragraphs)
        .map(|_| {
            (0..rng.gen_range(1..=4))
                .map(|_| {
                    let mut words = vec![VOCAB[rng.gen_range(0..VOCAB.len())]];
                    for _ in 0..rng.gen_range(0..8) {
                        words.push(if rng.gen_bool(0.6) {
                            VOCAB[rng.gen_range(0..VOCAB.len())]
                        } else {
                            FILLER[rng.gen_range(0..FILLER.len())]
                        });
                    }
                    format!("{}.", words.join(" "))
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    Document::from_text(&text, Provenance::new(Modality::InlineText, None), &SegmentationPolicy::default()).unwrap()
}

/// Referential checks written independently of the library validator.
fn integrity(result: &AnalysisResult, doc: &Document) -> Result<(), String> {
    let stages = plan(result.method).stages.len();
    if result.stage_trace.len() != stages {
        return Err(format!("stage_trace has {} entries, want {stages}", result.stage_trace.len()));
    }
    let code_ids: Vec<&str> = result.codes.iter().map(|c| c.code_id.as_str()).collect();
    let sub_ids: Vec<&str> = result.subcategories.iter().map(|s| s.subcat_id.as_str()).collect();
    let cat_ids: Vec<&str> = result.categories.iter().map(|c| c.cat_id.as_str()).collect();
    for c in &result.codes {
        if c.supporting_segments.is_empty() || c.supporting_segments.iter().any(|&s| s >= doc.segments.len()) {
            return Err(format!("code {} cites {:?}", c.code_id, c.supporting_segments));
        }
    }
    for s in &result.subcategories {
        if s.member_codes.is_empty() || s.member_codes.iter().any(|m| !code_ids.contains(&m.as_str())) {
            return Err(format!("subcategory {} members {:?}", s.subcat_id, s.member_codes));
        }
    }
    let member_pool = if result.subcategories.is_empty() { &code_ids } else { &sub_ids };
    for c in &result.categories {
        if c.members.is_empty() || c.members.iter().any(|m| !member_pool.contains(&m.as_str())) {
            return Err(format!("category {} members {:?}", c.cat_id, c.members));
        }
    }
    if result.method == Method::GroundedTheory {
        let core = result.core_concept.as_ref().ok_or("grounded result has no core concept")?;
        if core.linked_categories.is_empty() || core.linked_categories.iter().any(|c| !cat_ids.contains(&c.as_str())) {
            return Err(format!("core concept links {:?}", core.linked_categories));
        }
    }
    if result.method != Method::Discourse && result.codes.is_empty() {
        return Err("no codes".into());
    }
    Ok(())
}

async fn referential_integrity() -> Outcome {
    let runner = Runner::new(Arc::new(MockBackend));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut total = 0;
    for method in Method::ALL {
        for i in 0..200 {
            let doc = random_doc(&mut rng);
            let request = AnalysisRequest::new(method, doc.clone());
            let result = runner.run(&request, None).await.map_err(|e| format!("{method} #{i}: {e}"))?;
            integrity(&result, &doc).map_err(|e| format!("{method} #{i}: {e}"))?;
            let report = validate_result(&result, &doc);
            if !report.ok {
                return Err(format!("{method} #{i}: {}", report.summary()));
            }
            total += 1;
        }
    }
    Ok(format!("{total} random documents, all references intact"))
}

fn fuzz_corpus(rng: &mut ChaCha8Rng) -> Vec<String> {
    let seeds = [
        r#"{"codes":[{"label":"cat","segments":[0]}]}"#,
        r#"{"summary":"the cat sat","retained_segments":[0,1]}"#,
        r#"{"subcategories":[{"label":"g","members":["cat","mat"]}]}"#,
        r#"{"themes":[{"label":"t","narrative":"n","categories":["c"]}]}"#,
        r#"{"patterns":[{"statement":"p","evidence":[0]}],"categories":[],"themes":[]}"#,
        r#"{"core_concept":{"label":"core","narrative":"n","categories":["c"]}}"#,
    ];
    let alphabet: Vec<char> = "{}[]\",:`\\ \n\t0123456789abcjson“”‘’-.eE+nulltrue\u{0}\u{fffd}é🙂".chars().collect();
    (0..1000)
        .map(|i| match i % 4 {
            0 => (0..rng.gen_range(0..120)).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect(),
            1 => {
                let seed = seeds[rng.gen_range(0..seeds.len())];
                let cut = rng.gen_range(0..=seed.len());
                format!("```json\n{}", &seed[..cut])
            }
            2 => {
                let mut chars: Vec<char> = seeds[rng.gen_range(0..seeds.len())].chars().collect();
                for _ in 0..rng.gen_range(1..6) {
                    let at = rng.gen_range(0..=chars.len());
                    chars.insert(at, alphabet[rng.gen_range(0..alphabet.len())]);
                }
                format!("Here you go:\n```json\n{}\n```", chars.into_iter().collect::<String>())
            }
            _ => {
                let bytes: Vec<u8> = (0..rng.gen_range(0..80)).map(|_| rng.gen()).collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
        })
        .collect()
}

fn parser_robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let corpus = fuzz_corpus(&mut rng);
    let mut parsed = 0;
    for (i, raw) in corpus.iter().enumerate() {
        let role = AgentRole::ALL[i % AgentRole::ALL.len()];
        match catch_unwind(|| parse_agent_output(role, raw)) {
            Ok(Ok(_)) => parsed += 1,
            Ok(Err(_)) => {}
            Err(_) => return Err(format!("crash on input #{i}: {raw:?}")),
        }
    }
    let clean = parse_agent_output(AgentRole::Coder, "```json\n{\"codes\":[{\"label\":\"cat\",\"segments\":[0]}]}\n```")
        .map_err(|e| e.to_string())?;
    let comma = parse_agent_output(AgentRole::Coder, "```json\n{\"codes\":[{\"label\":\"cat\",\"segments\":[0]},]}\n```")
        .map_err(|e| format!("trailing comma: {e}"))?;
    if comma != clean {
        return Err("trailing-comma repair changed the payload".into());
    }
    let summary = |raw: &str| match parse_agent_output(AgentRole::Summarizer, raw) {
        Ok(StagePayload::SummaryText(p)) => Ok(p.summary),
        other => Err(format!("{other:?}")),
    };
    let smart = summary("```json\n{“summary”: “the cat sat on the mat.”}\n```")?;
    if smart != "the cat sat on the mat." {
        return Err(format!("smart quotes gave {smart:?}"));
    }
    let cut = summary("```json\n{\"summary\":\"the cat sat")?;
    if cut != "the cat sat" {
        return Err(format!("unterminated string gave {cut:?}"));
    }
    Ok(format!("{} fuzzed inputs, 0 crashes ({parsed} parsed), 3 repair examples ok", corpus.len()))
}

/// (code, subcategory, category, theme, segments) by walking the hierarchy.
fn expected_tuples(result: &AnalysisResult) -> Vec<(String, String, String, String, Vec<usize>)> {
    result
        .codes
        .iter()
        .map(|code| {
            let sub = result.subcategories.iter().find(|s| s.member_codes.iter().any(|m| *m == code.code_id));
            let key = match sub {
                Some(s) => s.subcat_id.clone(),
                None if result.subcategories.is_empty() => code.code_id.clone(),
                None => String::new(),
            };
            let cat = result.categories.iter().find(|c| c.members.contains(&key));
            let themes: Vec<&str> = cat
                .map(|c| {
                    result
                        .themes
                        .iter()
                        .filter(|t| t.member_categories.contains(&c.cat_id))
                        .map(|t| t.label.as_str())
                        .collect()
                })
                .unwrap_or_default();
            (
                code.label.clone(),
                sub.map(|s| s.label.clone()).unwrap_or_default(),
                cat.map(|c| c.label.clone()).unwrap_or_default(),
                themes.join("; "),
                code.supporting_segments.clone(),
            )
        })
        .collect()
}

fn parse_csv(bytes: &[u8]) -> Result<Vec<(String, String, String, String, Vec<usize>)>, String> {
    let mut reader = csv::Reader::from_reader(bytes);
    let header: Vec<String> = reader.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    if header != ["code", "subcategory", "category", "theme", "supporting_segments", "excerpt"] {
        return Err(format!("header {header:?}"));
    }
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| e.to_string())?;
            let segments = if r[4].is_empty() {
                Vec::new()
            } else {
                r[4].split(';').map(|s| s.parse::<usize>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?
            };
            Ok((r[0].to_string(), r[1].to_string(), r[2].to_string(), r[3].to_string(), segments))
        })
        .collect()
}

async fn csv_round_trip() -> Outcome {
    let (runs, _) = run_matrix().await?;
    let mut rows = 0;
    for run in &runs {
        let parsed = parse_csv(&to_csv(&run.result))?;
        let expected = expected_tuples(&run.result);
        if parsed != expected {
            return Err(format!("{}: tuples differ", run.name));
        }
        rows += parsed.len();
    }
    Ok(format!("{} results, {rows} rows recovered exactly", runs.len()))
}

const CAT: &str = "the cat sat on the mat. the cat ran.";

async fn cat_oracle() -> Outcome {
    // Hand oracle: drop stopwords, rank by count then alphabetically, group
    // consecutive codes in threes named after their first member.
    let stop = ["the", "on"];
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in CAT.split(|c: char| !c.is_alphabetic()).filter(|w| !w.is_empty() && !stop.contains(w)) {
        *counts.entry(w).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let oracle_codes: Vec<&str> = ranked.iter().map(|(w, _)| *w).collect();
    let oracle_groups: Vec<String> = oracle_codes.chunks(3).map(|g| format!("{}-group", g[0])).collect();
    if oracle_codes != ["cat", "mat", "ran", "sat"] || oracle_groups != ["cat-group", "sat-group"] {
        return Err(format!("oracle drifted: {oracle_codes:?} {oracle_groups:?}"));
    }

    let doc = Document::from_text(CAT, Provenance::new(Modality::InlineText, None), &SegmentationPolicy::default()).unwrap();
    let result = Runner::new(Arc::new(MockBackend))
        .run(&AnalysisRequest::new(Method::Thematic, doc).with_config(PipelineConfig::default()), None)
        .await
        .map_err(|e| e.to_string())?;
    let codes: Vec<&str> = result.codes.iter().map(|c| c.label.as_str()).collect();
    let groups: Vec<&str> = result.subcategories.iter().map(|s| s.label.as_str()).collect();
    if codes != oracle_codes || groups != oracle_groups {
        return Err(format!("pipeline gave {codes:?} {groups:?}"));
    }
    let golden = std::fs::read_to_string(fixtures().join("golden/thematic_cat.json")).unwrap();
    if to_canonical_json(&result) != golden.trim_end() {
        return Err("pipeline output differs from the golden fixture".into());
    }
    Ok("codes [cat, mat, ran, sat], groups [cat-group, sat-group], golden fixture matches".into())
}

async fn service_contract() -> Outcome {
    let (service, recording) = mock_service();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    tokio::spawn(qda_service::serve(service, listener));
    let client = Client::new(&format!("http://{addr}")).map_err(|e| e.to_string())?;

    for row in matrix_rows() {
        let mut submission = Submission::new(row.method, row.source);
        submission.output_format = Some(row.format.as_str().into());
        let id = client.submit(&submission).await.map_err(|e| e.to_string())?.job_id;
        let events = client.follow(&id, |_| {}).await.map_err(|e| e.to_string())?;
        let states: Vec<JobState> = events
            .iter()
            .filter_map(|e| match e {
                JobEvent::State { state } => Some(state.clone()),
                _ => None,
            })
            .collect();
        if states.first() != Some(&JobState::Queued) || states.last() != Some(&JobState::Done) {
            return Err(format!("{}: states {states:?}", row.method));
        }
        if let Some(w) = states.windows(2).find(|w| !w[0].can_advance_to(&w[1])) {
            return Err(format!("{}: backward move {:?} -> {:?}", row.method, w[0], w[1]));
        }
        let done = events
            .iter()
            .filter(|e| matches!(e, JobEvent::Stage(s) if s.status == StageStatus::Done))
            .count();
        let want = plan(row.method).stages.len();
        if done != want {
            return Err(format!("{}: {done} stage done events, want {want}", row.method));
        }
        let snapshot = client.job(&id).await.map_err(|e| e.to_string())?;
        let result = snapshot.result.ok_or("done job has no result")?;
        let export = client.result(&id, None).await.map_err(|e| e.to_string())?;
        if export.bytes != emit(&result, row.format) || export.content_type != row.format.content_type() {
            return Err(format!("{}: exported bytes differ from the emitter", row.method));
        }
    }
    match client.job("job-does-not-exist").await {
        Err(e) if e.api_error().map(|b| b.error) == Some(ErrorCode::NotFound) => {}
        other => return Err(format!("unknown job gave {other:?}")),
    }
    check_offline(&recording)?;
    Ok("5 methods submitted, streamed and exported over HTTP; NotFound; monotone states".into())
}

fn main() {
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let block = |f: std::pin::Pin<Box<dyn Future<Output = Outcome>>>| runtime.block_on(f);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("pipeline topology", Box::new(topology)),
        ("source matrix", Box::new(|| block(Box::pin(matrix())))),
        ("mock determinism", Box::new(|| block(Box::pin(determinism())))),
        ("referential integrity", Box::new(|| block(Box::pin(referential_integrity())))),
        ("parser robustness", Box::new(parser_robustness)),
        ("csv round-trip", Box::new(|| block(Box::pin(csv_round_trip())))),
        ("oracle agreement", Box::new(|| block(Box::pin(cat_oracle())))),
        ("service contract", Box::new(|| block(Box::pin(service_contract())))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
