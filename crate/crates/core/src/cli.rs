//! The `agentic-rag` command line: `index`, `run`, `score` and `compare`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

use std::fs::{self, File};
use std::io::BufWriter;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::agent::{run_pipeline, write_traces, Mode, MonotonicClock, QuestionTrace};
use crate::config::{ConfigError, EngineConfig, Runtime, SetupError, SPARSE_INDEX_FILE, VECTOR_STORE_FILE};
use crate::corpus::load_questions;
use crate::eval::{
    ablation_report, load_predictions, score, write_predictions, EvalError, Prediction, ProximityConfig,
    ReportFormat, ReportRow, ReportShape, RunMetrics, ScoreBreakdown,
};
use crate::sparse::{TfidfIndex, Variant};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<SetupError> for CliError {
    fn from(e: SetupError) -> Self {
        match e {
            SetupError::Config(c) => CliError::Config(c),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexSummary {
    pub pages: usize,
    pub variant: Variant,
    pub vocabulary_size: usize,
    pub sparse_index: PathBuf,
    pub vector_store: Option<PathBuf>,
    pub vector_dimension: Option<usize>,
}

/// Builds the sparse index (and the vector store for a dense first stage)
/// and writes them into the output directory.
pub fn cmd_index(config: &EngineConfig, variant: Option<Variant>) -> Result<IndexSummary, CliError> {
    let mut config = config.clone();
    if let Some(v) = variant {
        config.retrieval.variant = v;
    }
    let corpus = crate::corpus::load_corpus(&config.corpus, config.allow_empty_pages).map_err(ConfigError::from)?;
    create_dir(&config.output_dir)?;
    let index = TfidfIndex::build(&corpus, config.retrieval.variant, config.retrieval.sparse)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let sparse_path = config.output_dir.join(SPARSE_INDEX_FILE);
    index.save(&sparse_path).map_err(|e| io_err(&sparse_path, e))?;
    let mut summary = IndexSummary {
        pages: corpus.len(),
        variant: index.variant,
        vocabulary_size: index.vocabulary_size(),
        sparse_index: sparse_path,
        vector_store: None,
        vector_dimension: None,
    };
    if config.needs_store() {
        let runtime = Runtime::build(config.clone())?;
        let store = runtime.store.as_ref().expect("dense first stage builds a store");
        let path = config.output_dir.join(VECTOR_STORE_FILE);
        store.save(&path).map_err(|e| io_err(&path, e))?;
        summary.vector_store = Some(path);
        summary.vector_dimension = Some(store.dimension());
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub traces: Vec<QuestionTrace>,
    pub predictions: Vec<Prediction>,
    pub predictions_path: PathBuf,
    pub traces_path: PathBuf,
    /// Present when every question carries a gold label.
    pub score: Option<ScoreBreakdown>,
}

impl RunOutput {
    pub fn fallbacks(&self) -> usize {
        self.traces.iter().filter(|t| t.fallback_reason.is_some()).count()
    }
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Baseline => "baseline",
        Mode::LlmOnly => "llm_only",
        Mode::Rag => "rag",
        Mode::Agentic => "agentic",
    }
}

fn execute(config: &EngineConfig, mode: Mode, workers: Option<usize>) -> Result<(Runtime, Vec<QuestionTrace>), CliError> {
    let runtime = Runtime::build(config.clone())?;
    let clock = MonotonicClock::start();
    let workers = workers.or(config.workers).and_then(NonZeroUsize::new);
    let traces = run_pipeline(&runtime.questions, &runtime.engine(mode), &clock, workers);
    Ok((runtime, traces))
}

fn write_run_files(
    traces: &[QuestionTrace],
    predictions_path: &Path,
    traces_path: &Path,
) -> Result<Vec<Prediction>, CliError> {
    let predictions: Vec<Prediction> = traces.iter().map(|t| t.prediction.clone()).collect();
    let file = File::create(predictions_path).map_err(|e| io_err(predictions_path, e))?;
    write_predictions(&predictions, BufWriter::new(file)).map_err(|e| io_err(predictions_path, e))?;
    let file = File::create(traces_path).map_err(|e| io_err(traces_path, e))?;
    write_traces(traces, BufWriter::new(file)).map_err(|e| io_err(traces_path, e))?;
    Ok(predictions)
}

/// Answers every question and writes `predictions_<mode>.jsonl` and
/// `traces_<mode>.jsonl` into the output directory.
pub fn cmd_run(config: &EngineConfig, mode: Mode, workers: Option<usize>) -> Result<RunOutput, CliError> {
    let (runtime, traces) = execute(config, mode, workers)?;
    create_dir(&config.output_dir)?;
    let name = mode_name(mode);
    let predictions_path = config.output_dir.join(format!("predictions_{name}.jsonl"));
    let traces_path = config.output_dir.join(format!("traces_{name}.jsonl"));
    let predictions = write_run_files(&traces, &predictions_path, &traces_path)?;
    let score = if runtime.questions.iter().all(|q| q.gold.is_some()) {
        score(&predictions, &runtime.questions, config.proximity, false).ok()
    } else {
        None
    };
    Ok(RunOutput {
        traces,
        predictions,
        predictions_path,
        traces_path,
        score,
    })
}

/// Scores a predictions file; with `out`, also writes `score.json` there.
pub fn cmd_score(
    predictions: &Path,
    gold: &Path,
    proximity: ProximityConfig,
    lenient: bool,
    out: Option<&Path>,
) -> Result<ScoreBreakdown, CliError> {
    for (what, p) in [("predictions", predictions), ("gold", gold)] {
        if !p.is_file() {
            return Err(CliError::Usage(format!("{what} file not found: {}", p.display())));
        }
    }
    let preds = load_predictions(predictions).map_err(|e| CliError::Usage(format!("{}: {e}", predictions.display())))?;
    let gold_questions = load_questions(gold).map_err(|e| CliError::Usage(format!("{}: {e}", gold.display())))?;
    let breakdown = score(&preds, &gold_questions, proximity, lenient).map_err(|e| match e {
        EvalError::BadWindow => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    })?;
    if let Some(dir) = out {
        create_dir(dir)?;
        let json = serde_json::to_string_pretty(&breakdown).expect("breakdown serializes");
        write_file(&dir.join("score.json"), json + "\n")?;
    }
    Ok(breakdown)
}

/// One configuration of a comparison.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub name: String,
    pub config: EngineConfig,
    pub mode: Mode,
}

/// The four agentic ablations of one config: base, +rephrase, +retry, +both.
pub fn standard_ablations(config: &EngineConfig) -> Vec<RunSpec> {
    [("base", false, false), ("+rephrase", true, false), ("+retry", false, true), ("+both", true, true)]
        .into_iter()
        .map(|(name, rephrase, retry)| {
            let mut c = config.clone();
            c.agent.enable_rephrase = rephrase;
            c.agent.enable_retry = retry;
            RunSpec {
                name: name.into(),
                config: c,
                mode: Mode::Agentic,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRun {
    pub name: String,
    pub mode: Mode,
    pub breakdown: Option<ScoreBreakdown>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct CompareOutput {
    pub rows: Vec<ReportRow>,
    pub runs: Vec<CompareRun>,
    pub table: String,
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn compare_one(spec: &RunSpec, out_dir: &Path, index: usize) -> Result<ScoreBreakdown, String> {
    let (runtime, traces) = execute(&spec.config, spec.mode, None).map_err(|e| e.to_string())?;
    if let Some(reason) = traces
        .iter()
        .all(|t| t.fallback_reason.is_some())
        .then(|| traces.first().and_then(|t| t.fallback_reason.clone()))
        .flatten()
    {
        return Err(format!("every question fell back to the baseline ({reason})"));
    }
    let stem = format!("{index:02}_{}", file_safe(&spec.name));
    write_run_files(
        &traces,
        &out_dir.join(format!("predictions_{stem}.jsonl")),
        &out_dir.join(format!("traces_{stem}.jsonl")),
    )
    .map_err(|e| e.to_string())?;
    let predictions: Vec<Prediction> = traces.iter().map(|t| t.prediction.clone()).collect();
    score(&predictions, &runtime.questions, spec.config.proximity, false).map_err(|e| e.to_string())
}

/// Runs and scores every spec. A failing run becomes a FAILED row; the
/// report is written either way (`compare_report.txt`, `compare_report.json`
/// and per-question breakdowns in `compare_runs.json`).
pub fn cmd_compare(specs: &[RunSpec], out_dir: &Path, shape: ReportShape) -> Result<CompareOutput, CliError> {
    if specs.is_empty() {
        return Err(CliError::Usage("compare needs at least one run".into()));
    }
    let window = specs[0].config.proximity.window;
    if specs.iter().any(|s| s.config.proximity.window != window) {
        return Err(CliError::Usage("all compared runs must use the same proximity window".into()));
    }
    create_dir(out_dir)?;
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let result = compare_one(spec, out_dir, i);
        if let Err(e) = &result {
            tracing::warn!(run = %spec.name, error = %e, "run failed");
        }
        rows.push(ReportRow::new(
            spec.name.clone(),
            match &result {
                Ok(b) => b.metrics(),
                Err(e) => RunMetrics::Failed { reason: e.clone() },
            },
        ));
        runs.push(CompareRun {
            name: spec.name.clone(),
            mode: spec.mode,
            breakdown: result.as_ref().ok().cloned(),
            error: result.err(),
        });
    }
    let table = ablation_report(&rows, shape, ReportFormat::Table, window);
    write_file(&out_dir.join("compare_report.txt"), &table)?;
    write_file(
        &out_dir.join("compare_report.json"),
        ablation_report(&rows, ReportShape::Breakdown, ReportFormat::Json, window),
    )?;
    let runs_json = serde_json::to_string_pretty(&runs).expect("runs serialize");
    write_file(&out_dir.join("compare_runs.json"), runs_json + "\n")?;
    Ok(CompareOutput { rows, runs, table })
}

#[derive(Debug, Parser)]
#[command(name = "agentic-rag", version, about = "Retrieval-augmented multiple-choice QA over page-level corpora")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Baseline,
    LlmOnly,
    Rag,
    Agentic,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::LlmOnly => Mode::LlmOnly,
            ModeArg::Rag => Mode::Rag,
            ModeArg::Agentic => Mode::Agentic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Word,
    Char,
    Hybrid,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Word => Variant::Word,
            VariantArg::Char => Variant::Char,
            VariantArg::Hybrid => Variant::Hybrid,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ShapeArg {
    /// Method | Final metric
    Final,
    /// Method | Mean a_i | Mean d_i | Mean p_i | Final metric
    Breakdown,
    /// One column per run
    Transposed,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and save the sparse index (and vector store for a dense first stage).
    Index {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
    },
    /// Answer every question and write predictions and traces.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's `mode`, else agentic.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Score a predictions file against gold questions.
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value_t = 10)]
        window: u32,
        /// Score missing predictions as zero instead of failing.
        #[arg(long)]
        lenient: bool,
        /// Directory for score.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run and score several configs (or the four agentic ablations of one).
    Compare {
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Expand the first config into base, +rephrase, +retry and +both.
        #[arg(long)]
        ablations: bool,
        /// Mode for runs whose config sets none.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Report directory; defaults to `<output_dir>/compare` of the first config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ShapeArg::Final)]
        shape: ShapeArg,
    },
}

fn print_breakdown(b: &ScoreBreakdown) {
    println!("questions     {}", b.per_question.len());
    println!("window W      {}", b.window);
    println!("mean a_i      {:.4}", b.mean_a);
    println!("mean d_i      {:.4}", b.mean_d);
    println!("mean p_i      {:.4}", b.mean_p);
    println!("final metric  {:.4}", b.final_score);
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Index { config, variant } => {
            let cfg = EngineConfig::load(&config)?;
            let s = cmd_index(&cfg, variant.map(Into::into))?;
            println!(
                "indexed {} pages, variant {:?}, {} terms -> {}",
                s.pages,
                s.variant,
                s.vocabulary_size,
                s.sparse_index.display()
            );
            if let (Some(path), Some(dim)) = (&s.vector_store, s.vector_dimension) {
                println!("vector store, dimension {dim} -> {}", path.display());
            }
        }
        Command::Run { config, mode, workers } => {
            let cfg = EngineConfig::load(&config)?;
            let mode = mode.map(Mode::from).or(cfg.mode).unwrap_or(Mode::Agentic);
            let out = cmd_run(&cfg, mode, workers)?;
            println!(
                "{} questions, {} baseline fallbacks -> {}",
                out.predictions.len(),
                out.fallbacks(),
                out.predictions_path.display()
            );
            println!("traces -> {}", out.traces_path.display());
            if let Some(b) = &out.score {
                print_breakdown(b);
            }
        }
        Command::Score {
            predictions,
            gold,
            window,
            lenient,
            out,
            json,
        } => {
            let proximity = ProximityConfig::new(window).map_err(|e| CliError::Usage(e.to_string()))?;
            let b = cmd_score(&predictions, &gold, proximity, lenient, out.as_deref())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&b).expect("breakdown serializes"));
            } else {
                print_breakdown(&b);
            }
        }
        Command::Compare {
            configs,
            ablations,
            mode,
            out,
            shape,
        } => {
            let loaded = configs
                .iter()
                .map(EngineConfig::load)
                .collect::<Result<Vec<_>, _>>()?;
            let specs = if ablations {
                standard_ablations(&loaded[0])
            } else {
                loaded
                    .into_iter()
                    .map(|c| RunSpec {
                        name: c.run_name(),
                        mode: mode.map(Mode::from).or(c.mode).unwrap_or(Mode::Agentic),
                        config: c,
                    })
                    .collect()
            };
            let out_dir = out.unwrap_or_else(|| specs[0].config.output_dir.join("compare"));
            let shape = match shape {
                ShapeArg::Final => ReportShape::FinalMetric,
                ShapeArg::Breakdown => ReportShape::Breakdown,
                ShapeArg::Transposed => ReportShape::Comparison,
            };
            let report = cmd_compare(&specs, &out_dir, shape)?;
            print!("{}", report.table);
        }
    }
    Ok(())
}

/// Parses `std::env::args`, runs the command and maps errors to exit codes.
pub fn main() -> ExitCode {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
