//! The `synthtask` command line.
//!
//! Exit codes: 0 success, 1 pipeline failure, 2 usage or configuration
//! error, 130 interrupted. Failures print one JSON object to stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Once};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::client::mock::{MockEngine, MockServer, MockTape};
use crate::config::RunConfig;
use crate::ctga::{build_corpus, BuildConfig, DEFAULT_CAP, PIPE};
use crate::dataset_io::{read_documents, read_records, InstructionPair, PairReader, PairWriter};
use crate::eval::{evaluate, EvalTask};
use crate::generator::{generate_conditional, generate_instruct, GenerationStats, Mode};
use crate::registry::{load_registry, summarize, TaskType};

#[derive(Debug, Parser)]
#[command(name = "synthtask", version, about = "Build generator corpora, generate synthetic instruction data, and evaluate adapted models")]
pub struct Cli {
    /// Run configuration (TOML). Flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// More logging (-v info, -vv debug). RUST_LOG also applies.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply meta-templates to annotated records and write generator training pairs.
    BuildCtga(BuildArgs),
    /// Generate instruction/response pairs from unannotated documents.
    Generate(GenerateArgs),
    /// Score a model on a five-template task through a completion endpoint.
    Evaluate(EvaluateArgs),
    /// Print statistics for a pairs, stats, records, documents or registry file.
    Inspect(InspectArgs),
    /// Serve the deterministic mock completion endpoint from a tape file.
    MockServe(MockServeArgs),
}

#[derive(Debug, clap::Args)]
pub struct BuildArgs {
    /// Annotated source records (JSON lines of {dataset, fields}).
    #[arg(long, value_name = "PATH")]
    pub records: Option<PathBuf>,
    /// Meta-template registry manifest (JSON lines).
    #[arg(long, value_name = "PATH")]
    pub registry: Option<PathBuf>,
    /// Output pairs file.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Maximum examples kept per dataset, in stream order.
    #[arg(long, default_value_t = DEFAULT_CAP)]
    pub cap: usize,
    /// Seed for template sampling. Defaults to the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Conditional,
    Instruct,
}

#[derive(Debug, clap::Args)]
pub struct GenerateArgs {
    /// `conditional` prompts a trained generator; `instruct` prompts a general instruct model.
    #[arg(long, value_enum, default_value = "conditional")]
    pub mode: ModeArg,
    /// Unannotated documents (JSON lines of {id, text, dataset}).
    #[arg(long, value_name = "PATH")]
    pub docs: Option<PathBuf>,
    /// Target task type, e.g. "yes-no question answering".
    #[arg(long)]
    pub task_type: String,
    /// Base URL of the completion endpoint; requests go to <URL>/completions.
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Output pairs file. Statistics go to <PATH>.stats.json.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Generations per document.
    #[arg(long, default_value_t = 1)]
    pub samples_per_doc: usize,
    /// Seed for prompt-side randomness. Defaults to the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum concurrent requests. Defaults to the config value.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    /// Task configuration (TOML) naming five templates, the test file, kind, gold column and label map.
    #[arg(long, value_name = "PATH")]
    pub task_config: PathBuf,
    /// Base URL of the completion endpoint; requests go to <URL>/completions.
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Report file (JSON).
    #[arg(long, value_name = "PATH")]
    pub report: PathBuf,
    /// Maximum concurrent requests. Defaults to the config value.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct InspectArgs {
    /// File to summarize. The kind is detected from its content.
    pub path: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct MockServeArgs {
    /// Tape file (JSON) describing completions, log-probabilities and failures.
    #[arg(long, value_name = "PATH")]
    pub tape: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Port to bind; 0 picks a free one.
    #[arg(long, default_value_t = 8000)]
    pub port: u16,
    /// Worker threads.
    #[arg(long, default_value_t = 16)]
    pub threads: usize,
    /// Append every request to this file as JSON lines.
    #[arg(long, value_name = "PATH")]
    pub request_log: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Pipeline(String),
    Interrupted(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Pipeline(_) => 1,
            CliError::Interrupted(_) => 130,
        }
    }

    fn summary(&self) -> String {
        let (kind, message) = match self {
            CliError::Config(m) => ("config", m),
            CliError::Pipeline(m) => ("pipeline", m),
            CliError::Interrupted(m) => ("interrupted", m),
        };
        serde_json::json!({ "error": kind, "message": message, "exit_code": self.exit_code() }).to_string()
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn pipeline_err(e: impl std::fmt::Display) -> CliError {
    CliError::Pipeline(e.to_string())
}

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

fn install_interrupt_handler() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        if let Err(e) = ctrlc::set_handler(|| INTERRUPTED.store(true, Ordering::SeqCst)) {
            log::warn!("cannot install Ctrl-C handler: {e}");
        }
    });
}

fn interrupted() -> bool {
    INTERRUPTED.load(Ordering::SeqCst)
}

/// Output written under `<path>.partial` and renamed into place on commit.
struct PartialOutput {
    path: PathBuf,
    partial: PathBuf,
}

impl PartialOutput {
    fn new(path: &Path) -> Self {
        let mut partial = path.as_os_str().to_owned();
        partial.push(".partial");
        PartialOutput {
            path: path.to_owned(),
            partial: PathBuf::from(partial),
        }
    }

    fn create(&self) -> Result<File, CliError> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| pipeline_err(format!("{}: {e}", dir.display())))?;
        }
        File::create(&self.partial).map_err(|e| pipeline_err(format!("{}: {e}", self.partial.display())))
    }

    fn commit(&self) -> Result<(), CliError> {
        std::fs::rename(&self.partial, &self.path).map_err(|e| pipeline_err(format!("{}: {e}", self.path.display())))
    }

    fn discard(&self) {
        let _ = std::fs::remove_file(&self.partial);
    }

    fn interrupted(&self) -> CliError {
        CliError::Interrupted(format!("partial output left at {}", self.partial.display()))
    }
}

fn write_json_atomically<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let out = PartialOutput::new(path);
    let mut file = out.create()?;
    serde_json::to_writer_pretty(&mut file, value).map_err(pipeline_err)?;
    file.write_all(b"\n").map_err(pipeline_err)?;
    drop(file);
    out.commit()
}

fn print_json<T: Serialize>(value: &T) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(value).unwrap_or_default());
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

/// Parses `argv` and runs the selected subcommand. Returns the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.summary());
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(config_err)?,
        None => RunConfig::default(),
    };
    install_interrupt_handler();
    match cli.command {
        Command::BuildCtga(args) => build_ctga(&cfg, args),
        Command::Generate(args) => generate(&cfg, args),
        Command::Evaluate(args) => evaluate_cmd(&cfg, args),
        Command::Inspect(args) => inspect(args),
        Command::MockServe(args) => mock_serve(args),
    }
}

fn required_path(flag: Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| CliError::Config(format!("missing --{name} (or paths.{name} in the config)")))
}

fn build_ctga(cfg: &RunConfig, args: BuildArgs) -> Result<(), CliError> {
    let records_path = required_path(args.records, &cfg.paths.records, "records")?;
    let registry_path = required_path(args.registry, &cfg.paths.registry, "registry")?;
    let registry = load_registry(&registry_path).map_err(config_err)?;
    let records = read_records(&records_path).map_err(|e| config_err(format!("{}: {e}", records_path.display())))?;
    let build_cfg = BuildConfig {
        per_dataset_cap: args.cap,
        seed: args.seed.unwrap_or(cfg.seed),
        datasets: Vec::new(),
    };

    let malformed = std::cell::Cell::new(0usize);
    let stream = records.filter_map(|r| match r {
        Ok(rec) => Some(rec),
        Err(e) => {
            log::warn!("{}: {e}", records_path.display());
            malformed.set(malformed.get() + 1);
            None
        }
    });
    let mut builder = build_corpus(stream, &registry, build_cfg).map_err(config_err)?;

    let out = PartialOutput::new(&args.out);
    let mut writer = PairWriter::new(std::io::BufWriter::new(out.create()?));
    for pair in builder.by_ref() {
        if interrupted() {
            writer.finish().map_err(pipeline_err)?;
            return Err(out.interrupted());
        }
        writer.write(&pair.map_err(pipeline_err)?).map_err(pipeline_err)?;
    }
    let written = writer.finish().map_err(pipeline_err)?;
    out.commit()?;
    print_json(&serde_json::json!({
        "pairs": written,
        "malformed_records": malformed.get(),
        "datasets": builder.counts(),
    }));
    Ok(())
}

#[derive(Serialize)]
struct StatsFile<'a> {
    mode: &'static str,
    task_type: &'static str,
    #[serde(flatten)]
    stats: &'a GenerationStats,
    documents: &'a crate::dataset_io::DocumentStats,
}

fn generate(cfg: &RunConfig, args: GenerateArgs) -> Result<(), CliError> {
    let task_type: TaskType = args.task_type.parse().map_err(config_err)?;
    let docs_path = required_path(args.docs, &cfg.paths.docs, "docs")?;
    if args.samples_per_doc == 0 {
        return Err(CliError::Config("--samples-per-doc must be at least 1".into()));
    }
    let mut run_cfg = cfg.clone();
    if let Some(n) = args.max_in_flight {
        run_cfg.max_in_flight = n;
    }
    run_cfg.validate().map_err(config_err)?;
    let client = run_cfg.client(args.endpoint.as_deref()).map_err(config_err)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let mode = match args.mode {
        ModeArg::Conditional => Mode::Conditional,
        ModeArg::Instruct => Mode::Instruct,
    };

    let mut reader = read_documents(&docs_path).map_err(|e| config_err(format!("{}: {e}", docs_path.display())))?;
    let docs: Vec<_> = reader
        .by_ref()
        .filter_map(|d| d.map_err(|e| log::warn!("{}: {e}", docs_path.display())).ok())
        .collect();
    let doc_stats = reader.stats().clone();

    let out = PartialOutput::new(&args.out);
    let mut writer = PairWriter::new(std::io::BufWriter::new(out.create()?));
    let mut stats = GenerationStats::default();
    let chunk = run_cfg.max_in_flight.saturating_mul(4).max(1);
    for docs in docs.chunks(chunk) {
        if interrupted() {
            writer.finish().map_err(pipeline_err)?;
            return Err(out.interrupted());
        }
        let output = match mode {
            Mode::Conditional => generate_conditional(docs, task_type, &client, &run_cfg.sampling, args.samples_per_doc),
            Mode::Instruct => generate_instruct(docs, task_type, &client, &run_cfg.sampling, args.samples_per_doc, seed),
        };
        for failure in &output.failures {
            log::warn!("{} sample {}: {}", failure.doc_id, failure.sample, failure.error);
        }
        for task in &output.tasks {
            writer.write(&task.to_pair(mode)).map_err(pipeline_err)?;
        }
        stats.absorb(&output.stats);
    }
    writer.finish().map_err(pipeline_err)?;
    let total_failure = stats.requested > 0 && stats.endpoint_failures == stats.requested;
    if total_failure {
        out.discard();
    } else {
        out.commit()?;
    }

    let mut stats_path = args.out.as_os_str().to_owned();
    stats_path.push(".stats.json");
    let file = StatsFile {
        mode: mode.name(),
        task_type: task_type.name(),
        stats: &stats,
        documents: &doc_stats,
    };
    write_json_atomically(Path::new(&stats_path), &file)?;
    print_json(&file);
    if total_failure {
        return Err(CliError::Pipeline(format!("all {} requests failed at the endpoint", stats.requested)));
    }
    Ok(())
}

fn evaluate_cmd(cfg: &RunConfig, args: EvaluateArgs) -> Result<(), CliError> {
    let task = EvalTask::load(&args.task_config).map_err(config_err)?;
    let mut run_cfg = cfg.clone();
    if let Some(n) = args.max_in_flight {
        run_cfg.max_in_flight = n;
    }
    run_cfg.validate().map_err(config_err)?;
    let client = run_cfg.client(args.endpoint.as_deref()).map_err(config_err)?;
    let report = evaluate(&task, &client);
    write_json_atomically(&args.report, &report)?;
    let _ = writeln!(std::io::stdout().lock(), "{}", report.summary());
    if !report.valid {
        return Err(CliError::Pipeline("report is invalid: a template produced no scorable records".into()));
    }
    Ok(())
}

fn first_json_line(path: &Path) -> Result<Option<serde_json::Value>, CliError> {
    let file = File::open(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(pipeline_err)?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        return Ok(serde_json::from_str(t).ok());
    }
    Ok(None)
}

fn response_label(output: &str) -> String {
    let response = output
        .split_inclusive('\n')
        .skip_while(|l| l.trim() != PIPE)
        .skip(1)
        .collect::<String>();
    let text = if output.lines().any(|l| l.trim() == PIPE) { response.as_str() } else { output };
    text.split_whitespace()
        .next()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .unwrap_or_default()
}

fn inspect(args: InspectArgs) -> Result<(), CliError> {
    let path = &args.path;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if name.ends_with(".json") {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let stats: GenerationStats = serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        print_json(&serde_json::json!({
            "kind": "generation_stats",
            "identity_holds": stats.identity_holds(),
            "stats": stats,
        }));
        return Ok(());
    }

    let first = first_json_line(path)?;
    let has = |k: &str| first.as_ref().is_some_and(|v| v.get(k).is_some());
    if has("input_template") {
        let registry = load_registry(path).map_err(config_err)?;
        let summary = summarize(&registry);
        let mut per_type: BTreeMap<&str, usize> = BTreeMap::new();
        for m in &registry {
            *per_type.entry(m.task_type.name()).or_default() += 1;
        }
        print_json(&serde_json::json!({
            "kind": "registry",
            "count": summary.meta_templates,
            "datasets": summary.datasets,
            "task_types": summary.task_types.len(),
            "per_task_type": per_type,
        }));
    } else if has("input") && has("output") {
        let file = File::open(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut count = 0usize;
        let mut malformed = 0usize;
        let mut by: BTreeMap<&str, BTreeMap<String, usize>> = BTreeMap::new();
        let mut labels: BTreeMap<String, usize> = BTreeMap::new();
        for pair in PairReader::new(BufReader::new(file)) {
            let pair: InstructionPair = match pair {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("{}: {e}", path.display());
                    malformed += 1;
                    continue;
                }
            };
            count += 1;
            for key in ["task_type", "dataset", "mode"] {
                if let Some(v) = pair.meta.get(key) {
                    *by.entry(key).or_default().entry(v.clone()).or_default() += 1;
                }
            }
            *labels.entry(response_label(&pair.output)).or_default() += 1;
        }
        let mut stats_path = path.as_os_str().to_owned();
        stats_path.push(".stats.json");
        let generation_stats = std::fs::read_to_string(&stats_path)
            .ok()
            .and_then(|t| serde_json::from_str::<GenerationStats>(&t).ok());
        print_json(&serde_json::json!({
            "kind": "pairs",
            "count": count,
            "malformed": malformed,
            "by_task_type": by.get("task_type"),
            "by_dataset": by.get("dataset"),
            "by_mode": by.get("mode"),
            "label_histogram": labels,
            "generation_stats": generation_stats,
        }));
    } else if has("fields") {
        let mut per_dataset: BTreeMap<String, usize> = BTreeMap::new();
        let mut malformed = 0usize;
        for r in read_records(path).map_err(pipeline_err)? {
            match r {
                Ok(r) => *per_dataset.entry(r.dataset).or_default() += 1,
                Err(_) => malformed += 1,
            }
        }
        print_json(&serde_json::json!({
            "kind": "records",
            "count": per_dataset.values().sum::<usize>(),
            "malformed": malformed,
            "per_dataset": per_dataset,
        }));
    } else if has("text") {
        let mut reader = read_documents(path).map_err(pipeline_err)?;
        let count = reader.by_ref().filter(|d| d.is_ok()).count();
        print_json(&serde_json::json!({
            "kind": "documents",
            "count": count,
            "stats": reader.stats(),
        }));
    } else if first.is_none() && std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(false) {
        print_json(&serde_json::json!({ "kind": "empty", "count": 0 }));
    } else {
        return Err(CliError::Config(format!("{}: not a pairs, records, documents, stats or registry file", path.display())));
    }
    Ok(())
}

fn mock_serve(args: MockServeArgs) -> Result<(), CliError> {
    let tape = MockTape::load(&args.tape).map_err(|e| config_err(format!("{}: {e}", args.tape.display())))?;
    tape.validate().map_err(|e| config_err(format!("{}: {e}", args.tape.display())))?;
    let engine = Arc::new(MockEngine::new(tape));
    let server = MockServer::start(engine, &format!("{}:{}", args.host, args.port), args.threads, args.request_log).map_err(pipeline_err)?;
    println!("listening on {}", server.base_url());
    let _ = std::io::stdout().flush();
    while !interrupted() {
        std::thread::sleep(Duration::from_millis(50));
    }
    drop(server);
    Ok(())
}
