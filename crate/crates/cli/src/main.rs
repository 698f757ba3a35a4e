//! `qda`: run analyses, serve the job API, list methods.
//!
//! `analyze` is a client of the job service. Without `--server` it starts a
//! private service on the loopback interface for the duration of the run.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qda_client::{Client, ClientError};
use qda_core::backend::BackendConfig;
use qda_core::ingest::{parse_thread_url, FetchConfig, SourceSpec};
use qda_core::jobs::{list_methods, ErrorCode, FailureKind, JobEvent, JobOptions, JobState, MethodInfo, Submission};
use qda_core::pipeline::StageStatus;
use qda_core::transport::ReqwestTransport;
use qda_core::{Method, OutputFormat, PipelineConfig};
use qda_service::{Service, ServiceConfig};
use tokio::net::TcpListener;

const EXIT_BAD_ARGS: u8 = 2;
const EXIT_INGESTION: u8 = 3;
const EXIT_STAGE: u8 = 4;
const EXIT_BACKEND: u8 = 5;

#[derive(Parser)]
#[command(name = "qda", version, about = "Qualitative data analysis with method-specific agent pipelines")]
struct Cli {
    /// Log filter, e.g. `info` or `qda_service=debug`.
    #[arg(long, global = true, env = "QDA_LOG", default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one document and write the result.
    Analyze(AnalyzeArgs),
    /// Run the HTTP job service.
    Serve(ServeArgs),
    /// List the analysis methods.
    Methods(MethodsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendChoice {
    Mock,
    Http,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, env = "QDA_BACKEND", default_value = "mock")]
    backend: BackendChoice,
    /// Chat-completions endpoint for the http backend.
    #[arg(long, env = "QDA_ENDPOINT_URL")]
    endpoint_url: Option<String>,
    /// Name of the environment variable that holds the API key.
    #[arg(long, env = "QDA_API_KEY_ENV", default_value = "QDA_API_KEY")]
    api_key_env: String,
    #[arg(long, env = "QDA_MODEL")]
    model: Option<String>,
    /// Name of the environment variable that holds a GitHub token.
    #[arg(long, env = "QDA_GITHUB_TOKEN_ENV")]
    github_token_env: Option<String>,
}

impl BackendArgs {
    fn service_config(&self) -> anyhow::Result<ServiceConfig> {
        let backend = match self.backend {
            BackendChoice::Mock => BackendConfig::mock(),
            BackendChoice::Http => {
                let endpoint = self
                    .endpoint_url
                    .clone()
                    .ok_or_else(|| anyhow!("--backend http requires --endpoint-url or QDA_ENDPOINT_URL"))?;
                let mut config = BackendConfig::http(endpoint, self.api_key_env.clone());
                config.model_name = self.model.clone();
                config
            }
        };
        Ok(ServiceConfig {
            pipeline: PipelineConfig {
                backend,
                ..Default::default()
            },
            fetch: FetchConfig {
                github_token_env_var: self.github_token_env.clone(),
                ..Default::default()
            },
            ..Default::default()
        })
    }
}

#[derive(Args)]
#[group(id = "input", required = true, multiple = false)]
struct InputArgs {
    /// Text to analyze.
    #[arg(long, group = "input")]
    text: Option<String>,
    /// File to upload (txt, md, pdf, or any kind given with --kind).
    #[arg(long, group = "input")]
    file: Option<PathBuf>,
    /// Web page or GitHub issue/pull request to fetch.
    #[arg(long, group = "input")]
    url: Option<String>,
    /// Interview transcript with `Name:` speaker markers.
    #[arg(long, group = "input")]
    transcript: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    method: String,
    #[command(flatten)]
    input: InputArgs,
    /// Declared kind of the --file upload.
    #[arg(long, requires = "file")]
    kind: Option<String>,
    /// Extra guidance added to every agent prompt.
    #[arg(long)]
    instruction: Option<String>,
    /// Output path, or `-` for standard output.
    #[arg(long)]
    out: PathBuf,
    /// csv, report or json.
    #[arg(long, default_value = "json")]
    format: String,
    #[arg(long)]
    retry_limit: Option<u32>,
    /// Use a running service instead of a private one.
    #[arg(long, env = "QDA_SERVER")]
    server: Option<String>,
    /// Do not print stage progress.
    #[arg(long, short)]
    quiet: bool,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "QDA_HOST", default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "QDA_PORT", default_value_t = 8080)]
    port: u16,
    /// Append-only job journal for restart recovery.
    #[arg(long, env = "QDA_JOURNAL")]
    journal: Option<PathBuf>,
    #[arg(long, env = "QDA_WORKERS", default_value_t = qda_service::DEFAULT_WORKERS)]
    workers: usize,
    #[arg(long, env = "QDA_QUEUE_CAPACITY", default_value_t = qda_service::DEFAULT_QUEUE_CAPACITY)]
    queue_capacity: usize,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct MethodsArgs {
    #[arg(long, env = "QDA_SERVER")]
    server: Option<String>,
    /// Print the catalog as JSON.
    #[arg(long)]
    json: bool,
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: EXIT_BAD_ARGS,
            error: e.into(),
        }
    }
}

fn fail(code: u8, error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code,
        error: error.into(),
    }
}

fn client_failure(e: ClientError) -> Failure {
    let code = match e.api_error().map(|b| b.error) {
        Some(ErrorCode::BadRequest | ErrorCode::UnsupportedFormat | ErrorCode::NotFound) => EXIT_BAD_ARGS,
        _ => EXIT_BACKEND,
    };
    fail(code, e)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_new(&cli.log).unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(EXIT_BACKEND);
        }
    };
    let outcome = runtime.block_on(async {
        match cli.command {
            Command::Analyze(args) => analyze(args).await,
            Command::Serve(args) => serve(args).await,
            Command::Methods(args) => methods(args).await,
        }
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn source(input: &InputArgs, kind: Option<String>) -> Result<SourceSpec, Failure> {
    if let Some(text) = &input.text {
        return Ok(SourceSpec::InlineText { text: text.clone() });
    }
    if let Some(path) = &input.file {
        let bytes = std::fs::read(path)
            .with_context(|| format!("cannot read {}", path.display()))
            .map_err(|e| fail(EXIT_INGESTION, e))?;
        let filename = path.file_name().map_or_else(|| "upload".to_string(), |n| n.to_string_lossy().into_owned());
        return Ok(SourceSpec::FileUpload {
            filename,
            bytes,
            declared_kind: kind,
        });
    }
    if let Some(url) = &input.url {
        let is_github = url
            .split("://")
            .nth(1)
            .is_some_and(|rest| rest.starts_with("github.com/") || rest.starts_with("www.github.com/"));
        return Ok(if is_github || parse_thread_url(url).is_ok() {
            SourceSpec::GithubLink { url: url.clone() }
        } else {
            SourceSpec::WebLink { url: url.clone() }
        });
    }
    if let Some(path) = &input.transcript {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))
            .map_err(|e| fail(EXIT_INGESTION, e))?;
        return Ok(SourceSpec::Transcript {
            text,
            speaker_markers: true,
        });
    }
    Err(anyhow!("one of --text, --file, --url or --transcript is required").into())
}

async fn start_private_service(config: ServiceConfig) -> Result<String, Failure> {
    let transport = Arc::new(ReqwestTransport::new(&config.fetch.user_agent));
    let service = Service::from_config(config, transport).map_err(|e| fail(EXIT_BAD_ARGS, e))?;
    let listener = TcpListener::bind("127.0.0.1:0").await.map_err(|e| fail(EXIT_BACKEND, e))?;
    let addr = listener.local_addr().map_err(|e| fail(EXIT_BACKEND, e))?;
    tokio::spawn(qda_service::serve(service, listener));
    Ok(format!("http://{addr}"))
}

fn progress(event: &JobEvent, stage_count: usize) {
    match event {
        JobEvent::IngestStarted { modality } => eprintln!("ingesting {modality} input"),
        JobEvent::IngestFinished { segments, .. } => eprintln!("ingested {segments} segment(s)"),
        JobEvent::Stage(s) => {
            let status = match s.status {
                StageStatus::Started => "started",
                StageStatus::Retrying => "retrying",
                StageStatus::Done => "done",
                StageStatus::Failed => "failed",
            };
            let detail = s.detail.as_deref().map(|d| format!(": {d}")).unwrap_or_default();
            eprintln!("[stage {}/{stage_count}] {} {status}{detail}", s.stage_index + 1, s.role);
        }
        JobEvent::State { .. } => {}
    }
}

async fn analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let method: Method = args.method.parse()?;
    let format: OutputFormat = args.format.parse()?;
    let source = source(&args.input, args.kind.clone())?;
    let base = match &args.server {
        Some(server) => server.clone(),
        None => start_private_service(args.backend.service_config()?).await?,
    };
    let client = Client::new(&base)?;
    let mut submission = Submission::new(method, source);
    submission.custom_instruction = args.instruction.clone();
    submission.output_format = Some(format.as_str().to_string());
    if args.retry_limit.is_some() {
        submission.options = Some(JobOptions {
            retry_limit: args.retry_limit,
            ..Default::default()
        });
    }
    let accepted = client.submit(&submission).await.map_err(client_failure)?;
    let stage_count = qda_core::plan(method).stages.len();
    let quiet = args.quiet;
    client
        .follow(&accepted.job_id, |e| {
            if !quiet {
                progress(e, stage_count);
            }
        })
        .await
        .map_err(client_failure)?;
    let snapshot = client.job(&accepted.job_id).await.map_err(client_failure)?;
    if let JobState::Failed { error } = &snapshot.state {
        let code = match error.kind {
            FailureKind::InvalidRequest => EXIT_BAD_ARGS,
            FailureKind::Ingestion => EXIT_INGESTION,
            FailureKind::Stage => EXIT_STAGE,
            FailureKind::Backend => EXIT_BACKEND,
        };
        return Err(fail(code, anyhow!("{}", error.message)));
    }
    let export = client.result(&accepted.job_id, Some(format)).await.map_err(client_failure)?;
    if args.out.as_os_str() == "-" {
        use std::io::Write;
        std::io::stdout().write_all(&export.bytes)?;
    } else {
        std::fs::write(&args.out, &export.bytes).with_context(|| format!("cannot write {}", args.out.display()))?;
        if !quiet {
            eprintln!("wrote {} ({} bytes)", args.out.display(), export.bytes.len());
        }
    }
    Ok(())
}

async fn serve(args: ServeArgs) -> Result<(), Failure> {
    let mut config = args.backend.service_config()?;
    config.journal_path = args.journal;
    config.workers = args.workers;
    config.queue_capacity = args.queue_capacity;
    let transport = Arc::new(ReqwestTransport::new(&config.fetch.user_agent));
    let service = Service::from_config(config, transport)?;
    let listener = TcpListener::bind((args.host.as_str(), args.port))
        .await
        .with_context(|| format!("cannot bind {}:{}", args.host, args.port))?;
    let addr = listener.local_addr()?;
    eprintln!("listening on http://{addr}/v1");
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    qda_service::serve_until(service, listener, shutdown)
        .await
        .map_err(|e| fail(EXIT_BACKEND, e))
}

async fn methods(args: MethodsArgs) -> Result<(), Failure> {
    let catalog: Vec<MethodInfo> = match &args.server {
        Some(server) => Client::new(server)?.methods().await.map_err(client_failure)?,
        None => list_methods(),
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&catalog)?);
        return Ok(());
    }
    for m in catalog {
        let roles: Vec<String> = m.roles.iter().map(ToString::to_string).collect();
        println!("{:<16} {} stages: {}", m.method.as_str(), m.stage_count, roles.join(", "));
    }
    Ok(())
}
