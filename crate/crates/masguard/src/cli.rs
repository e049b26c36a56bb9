//! Command-line front end: `simulate`, `analyze`, `report`.
//!
//! Data goes to stdout (or files under `--output-dir`), diagnostics to stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::campaign::{run_campaign, CampaignError, CampaignSpec, TOOL_VERSION};
use crate::contribution::{ContributionError, DetectionConfig, DetectionReport, Method};
use crate::graph::{read_jsonl, write_jsonl, AgentId, GraphError, TranscriptError};
use crate::judge::llm::LlmConfig;
use crate::judge::{JudgeConfig, JudgeError};
use crate::pipeline::{analyze, AnalyzeError};
use crate::repair::{defense_step, QuarantineState, RepairPolicy};
use crate::report::{aggregate, load_outcomes, write_table, ReportError};

#[derive(Debug, Parser)]
#[command(name = "masguard", version, about = "Find and quarantine malicious agents in multi-agent conversations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulated campaign from a TOML config (bundled default if omitted).
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<u32>,
        /// Also write every transcript as JSONL under <output-dir>/transcripts.
        #[arg(long, requires = "output_dir")]
        dump_transcripts: bool,
        #[command(flatten)]
        shared: Shared,
    },
    /// Score one JSONL transcript and report flagged agents.
    Analyze {
        transcript: PathBuf,
        #[command(flatten)]
        shared: Shared,
    },
    /// Merge campaign CSV (or report JSON) files into summary tables.
    Report {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum JudgeKind {
    Synthetic,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Backprop,
    #[value(name = "no_bp")]
    NoBp,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Backprop => Method::Backprop,
            MethodArg::NoBp => Method::NoBp,
        }
    }
}

#[derive(Debug, Args)]
pub struct Shared {
    /// Deviation threshold for flagging (default 1.5).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Master seed for simulate; synthetic judge seed for analyze.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub judge: Option<JudgeKind>,
    /// Synthetic judge noise rate (analyze defaults to 0).
    #[arg(long)]
    pub judge_noise: Option<f64>,
    #[arg(long)]
    pub judge_endpoint: Option<String>,
    #[arg(long)]
    pub judge_model: Option<String>,
    /// Environment variable holding the judge API key.
    #[arg(long)]
    pub judge_api_key_env: Option<String>,
    #[arg(long)]
    pub judge_concurrency: Option<usize>,
    #[arg(long)]
    pub judge_retries: Option<u32>,
    /// Quarantine state JSON, read if present and written back.
    #[arg(long)]
    pub state_file: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub quarantine_base: Option<u32>,
    #[arg(long)]
    pub quarantine_backoff: Option<u32>,
    #[arg(long)]
    pub count_quarantined_votes: bool,
    /// Run episodes independently (no quarantine carried between them).
    #[arg(long, conflicts_with = "carryover")]
    pub no_carryover: bool,
    /// Carry quarantine state from each episode into the next.
    #[arg(long)]
    pub carryover: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("ConfigInvalid: {0}")]
    ConfigInvalid(String),
    #[error("InputUnreadable: {0}")]
    InputUnreadable(String),
    #[error("{path}: {source}")]
    Graph { path: PathBuf, source: GraphError },
    #[error("{path}: {source}")]
    Judge { path: PathBuf, source: JudgeError },
    #[error("{path}: {msg}")]
    Contribution { path: PathBuf, msg: String },
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid(_) => 3,
            CliError::InputUnreadable(_) => 4,
            CliError::Graph { .. } => 5,
            CliError::Judge { .. } => 6,
            CliError::Contribution { .. } => 7,
            CliError::Output(_) => 8,
            CliError::Simulation(_) => 9,
        }
    }

    fn from_analyze(path: &Path, e: AnalyzeError) -> Self {
        let path = path.to_path_buf();
        match e {
            AnalyzeError::Graph(source) => CliError::Graph { path, source },
            AnalyzeError::Judge(JudgeError::InvalidConfig(m)) => CliError::ConfigInvalid(m),
            AnalyzeError::Judge(source) => CliError::Judge { path, source },
            AnalyzeError::Contribution(c) => {
                let msg = match &c {
                    ContributionError::MissingFinalStance(_) => format!("MissingFinalStance: {c}"),
                    _ => c.to_string(),
                };
                CliError::Contribution { path, msg }
            }
        }
    }
}

fn output_err(e: impl std::fmt::Display) -> CliError {
    CliError::Output(e.to_string())
}

fn judge_from_flags(s: &Shared, base: JudgeConfig) -> Result<JudgeConfig, CliError> {
    let kind = s.judge.unwrap_or(match base {
        JudgeConfig::Synthetic { .. } => JudgeKind::Synthetic,
        JudgeConfig::Llm(_) => JudgeKind::Llm,
    });
    let cfg = match (kind, base) {
        (JudgeKind::Synthetic, JudgeConfig::Synthetic { noise, seed }) => {
            JudgeConfig::Synthetic { noise: s.judge_noise.unwrap_or(noise), seed }
        }
        (JudgeKind::Synthetic, JudgeConfig::Llm(_)) => {
            JudgeConfig::Synthetic { noise: s.judge_noise.unwrap_or(0.0), seed: 0 }
        }
        (JudgeKind::Llm, base) => {
            let mut c = match base {
                JudgeConfig::Llm(c) => c,
                JudgeConfig::Synthetic { .. } => LlmConfig::default(),
            };
            if let Some(v) = &s.judge_endpoint {
                c.endpoint = v.clone();
            }
            if let Some(v) = &s.judge_model {
                c.model = v.clone();
            }
            if let Some(v) = &s.judge_api_key_env {
                c.api_key_env = v.clone();
            }
            if let Some(v) = s.judge_concurrency {
                c.concurrency = v;
            }
            if let Some(v) = s.judge_retries {
                c.max_retries = v;
            }
            JudgeConfig::Llm(c)
        }
    };
    cfg.validate().map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
    Ok(cfg)
}

fn load_state(path: Option<&Path>) -> Result<QuarantineState, CliError> {
    match path {
        Some(p) if p.exists() => {
            QuarantineState::load(p).map_err(|e| CliError::InputUnreadable(format!("{}: {e}", p.display())))
        }
        _ => Ok(QuarantineState::default()),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(output_err)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn emit<T: Serialize>(value: &T, out: &mut dyn Write) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(output_err)?;
    writeln!(out).map_err(output_err)
}

pub fn simulate(
    config: Option<&Path>,
    episodes: Option<u32>,
    dump_transcripts: bool,
    s: &Shared,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut spec = match config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| CliError::InputUnreadable(format!("{}: {e}", p.display())))?;
            CampaignSpec::from_toml(&text).map_err(|e| match e {
                CampaignError::ConfigInvalid(m) => CliError::ConfigInvalid(format!("{}: {m}", p.display())),
                other => CliError::Simulation(other.to_string()),
            })?
        }
        None => CampaignSpec::bundled_default(),
    };
    if let Some(e) = episodes {
        spec.episodes = e;
    }
    if let Some(seed) = s.seed {
        spec.master_seed = seed;
    }
    if let Some(eps) = s.epsilon {
        spec.detection.epsilon = eps;
    }
    if let Some(m) = s.method {
        spec.detection.method = m.into();
    }
    if let Some(b) = s.quarantine_base {
        spec.repair.base = b;
    }
    if let Some(b) = s.quarantine_backoff {
        spec.repair.backoff = b;
    }
    spec.count_quarantined_votes |= s.count_quarantined_votes;
    if s.no_carryover {
        spec.carryover = false;
    }
    if s.carryover {
        spec.carryover = true;
    }
    spec.judge = judge_from_flags(s, spec.judge.clone())?;
    spec.validate().map_err(|e| CliError::ConfigInvalid(e.to_string()))?;

    let initial = load_state(s.state_file.as_deref())?;
    let report = run_campaign(&spec, &initial).map_err(|e| match e {
        CampaignError::ConfigInvalid(m) => CliError::ConfigInvalid(m),
        other => CliError::Simulation(other.to_string()),
    })?;

    if let Some(p) = &s.state_file {
        report.final_quarantine.save(p).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?;
    }
    match &s.output_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(output_err)?;
            write_json(&report, &dir.join("report.json"))?;
            let f = std::fs::File::create(dir.join("episodes.csv")).map_err(output_err)?;
            report.write_csv(f).map_err(output_err)?;
            if dump_transcripts {
                let tdir = dir.join("transcripts");
                std::fs::create_dir_all(&tdir).map_err(output_err)?;
                for ep in &report.episodes {
                    if let Some(t) = &ep.transcript {
                        let f =
                            std::fs::File::create(tdir.join(format!("{}.jsonl", t.episode_id))).map_err(output_err)?;
                        write_jsonl(t, std::io::BufWriter::new(f)).map_err(output_err)?;
                    }
                }
            }
            emit(&report.metrics, out)
        }
        None => emit(&report, out),
    }
}

#[derive(Serialize)]
struct AnalyzeOutput<'a> {
    tool_version: &'a str,
    config: AnalyzeConfig<'a>,
    episode_id: &'a str,
    report: &'a DetectionReport,
    suppressed_senders: Vec<AgentId>,
    quarantine: Option<&'a QuarantineState>,
}

#[derive(Serialize)]
struct AnalyzeConfig<'a> {
    transcript: &'a Path,
    judge: &'a JudgeConfig,
    epsilon: f64,
    method: Method,
    repair: RepairPolicy,
}

pub fn analyze_cmd(path: &Path, s: &Shared, out: &mut dyn Write) -> Result<(), CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::InputUnreadable(format!("{}: {e}", path.display())))?;
    let transcript = read_jsonl(std::io::BufReader::new(file)).map_err(|e| match e {
        TranscriptError::MissingSummary { .. } => {
            CliError::Contribution { path: path.to_path_buf(), msg: format!("MissingFinalStance: {e}") }
        }
        TranscriptError::Io(io) => CliError::InputUnreadable(format!("{}: {io}", path.display())),
        parse => CliError::Graph { path: path.to_path_buf(), source: GraphError::InvalidTranscript(parse.to_string()) },
    })?;

    let mut judge = judge_from_flags(s, JudgeConfig::Synthetic { noise: 0.0, seed: 0 })?;
    if let (JudgeConfig::Synthetic { seed, .. }, Some(v)) = (&mut judge, s.seed) {
        *seed = v;
    }
    let epsilon = s.epsilon.unwrap_or(1.5);
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(CliError::ConfigInvalid(format!("--epsilon must be positive, got {epsilon}")));
    }
    let method: Method = s.method.map(Into::into).unwrap_or_default();
    let policy = RepairPolicy { base: s.quarantine_base.unwrap_or(3), backoff: s.quarantine_backoff.unwrap_or(2) };
    if policy.base < 1 || policy.backoff < 1 {
        return Err(CliError::ConfigInvalid("quarantine base and backoff must be at least 1".into()));
    }

    let analysis = analyze(&transcript, &judge, &DetectionConfig { epsilon }, method)
        .map_err(|e| CliError::from_analyze(path, e))?;

    let state = match &s.state_file {
        Some(p) => {
            let next = defense_step(&load_state(Some(p))?, &analysis.report.flagged, policy);
            next.save(p).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?;
            Some(next)
        }
        None => None,
    };
    let mut suppressed: Vec<AgentId> = analysis.report.flagged.clone();
    if let Some(st) = &state {
        suppressed.extend(st.suppressed());
        suppressed.sort();
        suppressed.dedup();
    }
    let result = AnalyzeOutput {
        tool_version: TOOL_VERSION,
        config: AnalyzeConfig { transcript: path, judge: &judge, epsilon, method, repair: policy },
        episode_id: &transcript.episode_id,
        report: &analysis.report,
        suppressed_senders: suppressed,
        quarantine: state.as_ref(),
    };
    match &s.output_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(output_err)?;
            write_json(&result, &dir.join("analysis.json"))?;
            emit(&analysis.report, out)
        }
        None => emit(&result, out),
    }
}

pub fn report_cmd(inputs: &[PathBuf], output_dir: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let outcomes = load_outcomes(inputs).map_err(|e| match e {
        ReportError::NoInputs => CliError::InputUnreadable("no input files given".into()),
        other => CliError::InputUnreadable(other.to_string()),
    })?;
    let table = aggregate(&outcomes);
    if let Some(dir) = output_dir {
        write_table(&table, dir).map_err(output_err)?;
    }
    out.write_all(table.to_text().as_bytes()).map_err(output_err)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { config, episodes, dump_transcripts, shared } => {
            simulate(config.as_deref(), *episodes, *dump_transcripts, shared, out)
        }
        Command::Analyze { transcript, shared } => analyze_cmd(transcript, shared, out),
        Command::Report { inputs, output_dir } => report_cmd(inputs, output_dir.as_deref(), out),
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
