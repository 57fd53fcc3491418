//! Command-line entry points. `run` returns the process exit code:
//! 0 success, 1 validation or configuration error, 2 transport error,
//! 3 partial run (some units errored).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::baseline::{self, cross_validate, BaselineModel, CvResult, Hyperparams};
use crate::dataset::{load_dataset, Dataset, Split};
use crate::llm::{
    Backend, BackendConfig, BackendKind, ChatBackend, ChatRequest, LlmError, RetryPolicy, IDK_REPLY,
};
use crate::metrics::{self, delta_table, Percent};
use crate::pipeline::{
    self, aggregate_runs, read_results_csv, run_experiment, write_run_dir, AggregateMetrics,
    ExperimentConfig, MetricsFile, PipelineError,
};
use crate::prompt::{Message, PromptConfig, Role};
use crate::serialize::{Format, DEFAULT_ROWS};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_TRANSPORT: u8 = 2;
pub const EXIT_PARTIAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "tablesage",
    version,
    about = "Column type annotation with chat-completion models"
)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Single-step annotation with one prompt variant.
    Annotate(ExperimentArgs),
    /// Domain classification followed by annotation with that domain's labels.
    Twostep(ExperimentArgs),
    /// Re-score a run directory from its results.csv.
    Evaluate { run_dir: PathBuf },
    /// TF-IDF + random forest baseline.
    Baseline(BaselineArgs),
    /// Markdown report over run directories.
    Report(ReportArgs),
    /// Re-run a recorded experiment from its transcript.
    Replay(ReplayArgs),
    /// Load both splits and print their statistics.
    ValidateData {
        #[arg(long, default_value = "fixtures/mini")]
        data: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub format: Option<Format>,
    /// Add step-by-step instructions.
    #[arg(long)]
    pub inst: bool,
    /// Use system/user/assistant message roles.
    #[arg(long)]
    pub roles: bool,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// http, oracle, synonym, noisy or scripted.
    #[arg(long)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Corruption rate of the noisy oracle.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Transcript served by the scripted backend.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Fail on prompt drift instead of warning.
    #[arg(long)]
    pub strict_replay: bool,
    /// Rows shown per table or column.
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long, default_value = "fixtures/mini")]
    pub data: PathBuf,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Run directory name; defaults to the experiment name.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Print the first prompt and exit without calling a backend.
    #[arg(long)]
    pub dry_run: bool,
    /// JSON file with defaults; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Values a `--config` file may set. Missing fields keep their defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub format: Option<Format>,
    pub inst: Option<bool>,
    pub roles: Option<bool>,
    pub shots: Option<usize>,
    pub runs: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub backend: Option<BackendKind>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub endpoint: Option<String>,
    pub noise: Option<f64>,
    pub noise_seed: Option<u64>,
    pub transcript: Option<PathBuf>,
    pub strict_replay: Option<bool>,
    pub rows: Option<usize>,
    pub parallelism: Option<usize>,
    pub token_limit: Option<usize>,
    pub retry: Option<RetryPolicy>,
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[arg(long, default_value = "fixtures/mini")]
    pub data: PathBuf,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, default_value = "forest")]
    pub name: String,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train on a seeded subset of this many columns.
    #[arg(long)]
    pub max_train: Option<usize>,
    /// Skip cross-validation and use these forest sizes.
    #[arg(long)]
    pub n_trees: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_ROWS)]
    pub rows: usize,
    /// Also write the fitted model as JSON here.
    #[arg(long)]
    pub save_model: Option<PathBuf>,
    /// Evaluate a saved model instead of training.
    #[arg(long)]
    pub load_model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Reference {
    /// Published zero-shot, few-shot, two-step and baseline scores.
    #[value(alias = "paper")]
    Published,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub run_dirs: Vec<PathBuf>,
    /// Run or experiment name the deltas are taken against; defaults to the first run.
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub reference: Option<Reference>,
    #[arg(long, default_value = "report.md")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub run_dir: PathBuf,
    /// Output directory; defaults to `<run_dir>.replay`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset root, when it differs from the recorded one.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub strict: bool,
}

/// Error with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Llm(LlmError::Transport { .. } | LlmError::Replay(_)) => EXIT_TRANSPORT,
            _ => EXIT_CONFIG,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<crate::dataset::DatasetError> for CliError {
    fn from(e: crate::dataset::DatasetError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<baseline::BaselineError> for CliError {
    fn from(e: baseline::BaselineError) -> Self {
        CliError::config(e.to_string())
    }
}

type CliResult<T = u8> = Result<T, CliError>;

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    ExitCode::from(run(cli.command))
}

/// Executes one command and returns its exit code. Errors are printed, never panicked.
pub fn run(command: Command) -> u8 {
    let result = match command {
        Command::Annotate(a) => experiment(&a, false),
        Command::Twostep(a) => experiment(&a, true),
        Command::Evaluate { run_dir } => evaluate(&run_dir),
        Command::Baseline(a) => run_baseline(&a),
        Command::Report(a) => report(&a),
        Command::Replay(a) => replay(&a),
        Command::ValidateData { data } => validate_data(&data),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn read_config_file(path: &Path) -> CliResult<ConfigFile> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Flags over config file over defaults.
pub fn build_config(
    args: &ExperimentArgs,
    two_step: bool,
    test: &Dataset,
) -> CliResult<ExperimentConfig> {
    let file = match &args.config {
        Some(p) => read_config_file(p)?,
        None => ConfigFile::default(),
    };
    let format = if two_step {
        if args.format.is_some_and(|f| f != Format::Table) {
            return Err(CliError::config(
                "two-step annotation always uses the table format",
            ));
        }
        Format::Table
    } else {
        args.format.or(file.format).unwrap_or(Format::Table)
    };
    let mut prompt = PromptConfig::new(format, test.vocabulary.labels().to_vec())
        .instructions(args.inst || file.inst.unwrap_or(false))
        .roles(args.roles || file.roles.unwrap_or(false))
        .shots(args.shots.or(file.shots).unwrap_or(0));
    prompt.n_rows = args.rows.or(file.rows).unwrap_or(DEFAULT_ROWS);
    if let Some(limit) = file.token_limit {
        prompt.token_limit = limit;
    }

    let kind = args.backend.or(file.backend).unwrap_or(BackendKind::Oracle);
    let transcript = args.transcript.clone().or(file.transcript);
    let noise = args.noise.or(file.noise);
    if transcript.is_some() && kind != BackendKind::Scripted {
        return Err(CliError::config("--transcript needs --backend scripted"));
    }
    if noise.is_some() && kind != BackendKind::NoisyOracle {
        return Err(CliError::config("--noise needs --backend noisy"));
    }
    let mut backend = BackendConfig::new(kind);
    backend.transcript = transcript;
    backend.strict_replay = args.strict_replay || file.strict_replay.unwrap_or(false);
    backend.endpoint = args.endpoint.clone().or(file.endpoint);
    backend.token_limit = prompt.token_limit;
    if let Some(r) = file.retry {
        backend.retry = r;
    }
    if kind == BackendKind::NoisyOracle {
        backend.corruption_rate = noise.unwrap_or(0.3);
        backend.seed = args.noise_seed.or(file.noise_seed).unwrap_or(7);
    }

    let mut cfg = ExperimentConfig::new(prompt, backend);
    cfg.two_step = two_step;
    let seeds = args.seeds.clone().or(file.seeds);
    let runs = args.runs.or(file.runs);
    (cfg.n_runs, cfg.seeds) = match (runs, seeds) {
        (Some(n), Some(s)) => (n, s),
        (Some(n), None) => (n, (0..n as u64).collect()),
        (None, Some(s)) => (s.len(), s),
        (None, None) => (cfg.n_runs, cfg.seeds),
    };
    if let Some(m) = args.model.clone().or(file.model) {
        cfg.model_name = m;
    }
    if let Some(t) = args.temperature.or(file.temperature) {
        cfg.temperature = t;
    }
    cfg.parallelism = args.parallelism.or(file.parallelism).unwrap_or(1);
    cfg.data = Some(args.data.clone());
    cfg.validate()?;
    Ok(cfg)
}

fn load_splits(root: &Path, need_train: bool) -> CliResult<(Option<Dataset>, Dataset)> {
    let test = load_dataset(root, Split::Test)?;
    let train = if need_train {
        Some(load_dataset(root, Split::Train)?)
    } else {
        load_dataset(root, Split::Train).ok()
    };
    Ok((train, test))
}

/// Answers "I don't know" and remembers every request; used for dry runs.
#[derive(Default)]
struct Capture {
    seen: Mutex<Vec<ChatRequest>>,
}

impl ChatBackend for Capture {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        self.seen.lock().unwrap().push(request.clone());
        Ok(IDK_REPLY.to_string())
    }

    fn sequential_only(&self) -> bool {
        true
    }
}

pub fn render_messages(messages: &[Message]) -> String {
    let mut out = String::new();
    for m in messages {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        let _ = writeln!(out, "[{role}]\n{}\n", m.content);
    }
    out
}

fn outcome_code(runs: &[pipeline::RunResult]) -> u8 {
    let errors: usize = runs.iter().map(|r| r.n_errors()).sum();
    if errors == 0 {
        return EXIT_OK;
    }
    let answered = runs
        .iter()
        .flat_map(|r| &r.records)
        .any(|r| r.error.is_none());
    if answered {
        EXIT_PARTIAL
    } else {
        EXIT_TRANSPORT
    }
}

fn experiment(args: &ExperimentArgs, two_step: bool) -> CliResult {
    let (train, test) = load_splits(&args.data, args.shots.unwrap_or(0) > 0)?;
    let cfg = build_config(args, two_step, &test)?;
    if args.dry_run {
        let capture = Capture::default();
        let mut one = cfg.clone();
        (one.n_runs, one.seeds) = (1, vec![cfg.seeds[0]]);
        run_experiment(&test, train.as_ref(), &one, &capture)?;
        let seen = capture.seen.into_inner().unwrap();
        let first = seen
            .first()
            .ok_or_else(|| CliError::config("no prompt could be built"))?;
        print!("{}", render_messages(&first.messages));
        println!("estimated tokens: {}", first.token_estimate());
        return Ok(EXIT_OK);
    }
    let backend = Backend::from_config(&cfg.backend, &test.vocabulary)?;
    let annotated = run_experiment(&test, train.as_ref(), &cfg, &backend)?;
    let name = args.name.clone().unwrap_or_else(|| cfg.experiment_name());
    let dir = args.out.join(&name);
    let metrics = write_run_dir(&dir, &cfg, &annotated)?;
    print!("{}", summary(&name, &metrics.aggregate));
    println!("wrote {}", dir.display());
    Ok(outcome_code(&annotated.runs))
}

pub fn summary(name: &str, agg: &AggregateMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{name}: {} effective run(s)", agg.effective_runs);
    for r in &agg.runs {
        let _ = write!(
            s,
            "  run {} (seed {}): P={:.2} R={:.2} F1={:.2}",
            r.run, r.seed, r.scores.precision, r.scores.recall, r.scores.f1
        );
        if let Some(f) = r.s1_f1 {
            let _ = write!(s, " S1-F1={f:.2}");
        }
        let _ = writeln!(
            s,
            "  idk={} oov={} missing={} errors={}",
            r.counts.n_idk, r.counts.n_oov, r.counts.n_missing, r.n_errors
        );
    }
    let m = agg.mean;
    let _ = write!(
        s,
        "  mean: P={:.2} R={:.2} F1={:.2}",
        m.precision, m.recall, m.f1
    );
    if let Some(f) = agg.mean_s1_f1 {
        let _ = write!(s, " S1-F1={f:.2}");
    }
    let _ = writeln!(
        s,
        "\n  off-vocabulary answers per run: {:.2} ({:.2} recovered by synonyms)",
        agg.mean_oov_raw, agg.mean_oov_recovered
    );
    s
}

fn evaluate(run_dir: &Path) -> CliResult {
    let results = read_results_csv(&run_dir.join("results.csv"))?;
    let mut runs = Vec::new();
    for (run, records) in results {
        runs.push(pipeline::RunResult {
            run,
            seed: 0,
            records,
            domains: Vec::new(),
            n_calls: 0,
            n_mismatched: 0,
            transcript_span: (0, 0),
        });
    }
    let mut agg = aggregate_runs(&runs)?;
    let stored = MetricsFile::read(&run_dir.join("metrics.json")).ok();
    if let Some(stored) = &stored {
        for (r, s) in agg.runs.iter_mut().zip(&stored.aggregate.runs) {
            r.seed = s.seed;
            r.s1_f1 = s.s1_f1;
        }
        agg.mean_s1_f1 = stored.aggregate.mean_s1_f1;
    }
    let name = run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    print!("{}", summary(&name, &agg));
    if let Some(stored) = stored {
        if stored.aggregate.mean != agg.mean {
            return Err(CliError::config(format!(
                "results.csv gives F1={:.2} but metrics.json says {:.2}",
                agg.mean.f1, stored.aggregate.mean.f1
            )));
        }
        println!("  matches metrics.json");
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct BaselineRunConfig<'a> {
    model: &'static str,
    data: &'a Path,
    n_train: usize,
    folds: usize,
    seed: u64,
    rows: usize,
    hyperparams: Hyperparams,
    #[serde(skip_serializing_if = "Option::is_none")]
    cross_validation: Option<&'a CvResult>,
}

fn run_baseline(a: &BaselineArgs) -> CliResult {
    let opts = Default::default();
    let test = load_dataset(&a.data, Split::Test)?;
    let test_docs = baseline::column_docs(&test, a.rows, &opts);
    let (model, n_train, hp, cv) = match &a.load_model {
        Some(p) => {
            let m = BaselineModel::load(p)?;
            let hp = m.forest.hyperparams;
            (m, 0, hp, None)
        }
        None => {
            let train = load_dataset(&a.data, Split::Train)?;
            let mut docs = baseline::column_docs(&train, a.rows, &opts);
            if let Some(n) = a.max_train {
                docs = baseline::subsample(&docs, n, a.seed);
            }
            let (hp, cv) = match a.n_trees {
                Some(n_trees) => (
                    Hyperparams {
                        n_trees,
                        ..Default::default()
                    },
                    None,
                ),
                None => {
                    let cv = cross_validate(&docs, &Hyperparams::default_grid(), a.folds, a.seed)?;
                    (cv.best, Some(cv))
                }
            };
            (
                BaselineModel::train(&docs, &hp, a.seed)?,
                docs.len(),
                hp,
                cv,
            )
        }
    };
    if let Some(p) = &a.save_model {
        model.save(p)?;
    }
    let result = model.evaluate(&test_docs, a.seed);
    let agg = aggregate_runs(std::slice::from_ref(&result))?;
    let metrics = MetricsFile {
        experiment: format!("forest-{n_train}"),
        format: Format::Column,
        use_instructions: false,
        use_roles: false,
        shots: n_train,
        two_step: false,
        aggregate: agg,
    };
    let dir = a.out.join(&a.name);
    fs::create_dir_all(&dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
    let cfg = BaselineRunConfig {
        model: "tfidf+random-forest",
        data: &a.data,
        n_train,
        folds: a.folds,
        seed: a.seed,
        rows: a.rows,
        hyperparams: hp,
        cross_validation: cv.as_ref(),
    };
    write_json(&dir.join("config.json"), &cfg)?;
    pipeline::write_results_csv(&dir.join("results.csv"), std::slice::from_ref(&result))?;
    write_json(&dir.join("metrics.json"), &metrics)?;
    print!("{}", summary(&a.name, &metrics.aggregate));
    println!("wrote {}", dir.display());
    Ok(EXIT_OK)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn replay(a: &ReplayArgs) -> CliResult {
    let src = &a.run_dir;
    let mut cfg = pipeline::read_config(&src.join("config.json"))?;
    let data = a
        .data
        .clone()
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| CliError::config("config.json has no dataset root; pass --data"))?;
    let token_limit = cfg.backend.token_limit;
    cfg.backend = crate::llm::replay_source(src.join("transcript.jsonl"), a.strict);
    cfg.backend.token_limit = token_limit;
    cfg.data = Some(data.clone());
    let (train, test) = load_splits(&data, cfg.prompt.shots > 0)?;
    let backend = Backend::from_config(&cfg.backend, &test.vocabulary)?;
    let annotated = run_experiment(&test, train.as_ref(), &cfg, &backend)?;
    let out = a.out.clone().unwrap_or_else(|| {
        let mut s = src.as_os_str().to_owned();
        s.push(".replay");
        PathBuf::from(s)
    });
    let metrics = write_run_dir(&out, &cfg, &annotated)?;
    print!("{}", summary(&cfg.experiment_name(), &metrics.aggregate));
    let mut same = true;
    for f in ["results.csv", "metrics.json"] {
        let a = fs::read(src.join(f)).ok();
        let b = fs::read(out.join(f)).ok();
        let ok = a.is_some() && a == b;
        println!("  {f}: {}", if ok { "identical" } else { "differs" });
        same &= ok;
    }
    if !same {
        return Err(CliError::config(format!(
            "replay of {} did not reproduce the recorded outputs",
            src.display()
        )));
    }
    Ok(outcome_code(&annotated.runs))
}

fn validate_data(root: &Path) -> CliResult {
    for split in [Split::Train, Split::Test] {
        let d = load_dataset(root, split)?;
        let mut per_domain = std::collections::BTreeMap::new();
        for t in &d.tables {
            let dom = d.domain_of(&t.table_id).unwrap_or("(none)");
            *per_domain.entry(dom).or_insert(0usize) += 1;
        }
        let labels: std::collections::BTreeSet<&str> = d
            .tables
            .iter()
            .flat_map(|t| t.columns.iter().filter_map(|c| c.gold_label.as_deref()))
            .collect();
        println!(
            "{split}: {} tables, {} annotated columns, {} distinct labels",
            d.tables.len(),
            d.n_annotated_columns(),
            labels.len()
        );
        for (dom, n) in per_domain {
            println!("  {dom}: {n} tables");
        }
    }
    Ok(EXIT_OK)
}

struct ReportEntry {
    run: String,
    metrics: MetricsFile,
}

/// Published scores for gpt-3.5-turbo-0301 on the 250-column test set, and
/// for the supervised baselines. (experiment, shots, P, R, F1)
const PUBLISHED_ZERO_SHOT: [(&str, f64, f64, f64); 9] = [
    ("column", 47.70, 31.25, 45.85),
    ("text", 46.38, 33.97, 47.02),
    ("table", 41.08, 32.38, 37.90),
    ("column+inst", 72.00, 51.18, 62.27),
    ("text+inst", 63.94, 47.20, 57.95),
    ("table+inst", 81.88, 76.79, 80.16),
    ("column+inst+roles", 86.99, 69.95, 78.61),
    ("text+inst+roles", 83.68, 67.13, 74.15),
    ("table+inst+roles", 85.91, 82.01, 85.25),
];

const PUBLISHED_FEW_SHOT: [(&str, usize, f64, f64, f64); 6] = [
    ("column+inst+roles", 1, 88.70, 82.02, 84.57),
    ("column+inst+roles", 5, 90.15, 86.03, 88.49),
    ("text+inst+roles", 1, 81.96, 71.89, 75.16),
    ("text+inst+roles", 5, 88.32, 81.46, 84.24),
    ("table+inst+roles", 1, 88.67, 84.81, 88.44),
    ("table+inst+roles", 5, 87.51, 85.28, 88.83),
];

/// (shots, S1-F1, P, R, F1)
const PUBLISHED_TWO_STEP: [(usize, f64, f64, f64, f64); 3] = [
    (0, 95.56, 90.08, 86.60, 89.47),
    (1, 95.56, 90.08, 83.65, 88.85),
    (4, 95.56, 85.87, 82.68, 86.71),
];

const PUBLISHED_SUPERVISED: [(&str, usize, f64, f64, f64); 8] = [
    ("Random Forest", 159, 38.36, 43.75, 46.15),
    ("Random Forest", 356, 70.98, 59.49, 59.60),
    ("RoBERTa", 32, 49.13, 52.25, 48.93),
    ("RoBERTa", 159, 82.41, 81.79, 79.2),
    ("RoBERTa", 356, 90.87, 87.70, 89.73),
    ("RoBERTa", 1600, 87.59, 87.60, 86.79),
    ("DODUO", 356, 1.95, 48.92, 6.37),
    ("DODUO", 1600, 63.02, 41.36, 53.6),
];

fn published_section() -> String {
    let mut s = String::new();
    s.push_str("\n---\n\n## Published reference values\n\n");
    s.push_str(
        "Quoted as reported for gpt-3.5-turbo-0301 on the 41-table, 250-column test set. \
         These were not produced by this tool and are not comparable to fixture runs.\n\n",
    );
    s.push_str("| Experiment (published) | Shots | P | R | F1 |\n|---|---:|---:|---:|---:|\n");
    for (e, p, r, f) in PUBLISHED_ZERO_SHOT {
        let _ = writeln!(s, "| {e} | 0 | {p:.2} | {r:.2} | {f:.2} |");
    }
    for (e, k, p, r, f) in PUBLISHED_FEW_SHOT {
        let _ = writeln!(s, "| {e} | {k} | {p:.2} | {r:.2} | {f:.2} |");
    }
    s.push_str(
        "\n| Two-step (published) | Shots | S1-F1 | P | R | F1 |\n|---|---:|---:|---:|---:|---:|\n",
    );
    for (k, s1, p, r, f) in PUBLISHED_TWO_STEP {
        let _ = writeln!(s, "| two-step | {k} | {s1:.2} | {p:.2} | {r:.2} | {f:.2} |");
    }
    s.push_str("\n| Supervised model (published) | Training columns | P | R | F1 |\n|---|---:|---:|---:|---:|\n");
    for (m, k, p, r, f) in PUBLISHED_SUPERVISED {
        let _ = writeln!(s, "| {m} | {k} | {p:.2} | {r:.2} | {f:.2} |");
    }
    s
}

fn signed(x: f64) -> String {
    if x > 0.0 {
        format!("+{x:.2}")
    } else if x == 0.0 {
        "0.00".to_string()
    } else {
        format!("{x:.2}")
    }
}

/// Builds the markdown report and the per-label CSV.
pub fn build_report(
    run_dirs: &[PathBuf],
    baseline: Option<&str>,
    reference: Option<Reference>,
) -> CliResult<(String, String)> {
    let mut entries = Vec::new();
    for d in run_dirs {
        let run = d
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| d.display().to_string());
        let path = d.join("metrics.json");
        if !path.exists() {
            return Err(CliError::config(format!(
                "run {run}: missing {}",
                path.display()
            )));
        }
        let metrics =
            MetricsFile::read(&path).map_err(|e| CliError::config(format!("run {run}: {e}")))?;
        entries.push(ReportEntry { run, metrics });
    }
    let base = baseline.unwrap_or(&entries[0].run);
    let base_key = entries
        .iter()
        .find(|e| e.run == base || e.metrics.experiment == base)
        .map(|e| e.run.clone())
        .ok_or_else(|| CliError::config(format!("unknown baseline {base:?}")))?;
    let rows: Vec<(String, Percent)> = entries
        .iter()
        .map(|e| (e.run.clone(), e.metrics.aggregate.mean))
        .collect();
    let table = delta_table(&rows, &base_key).map_err(|e| CliError::config(e.to_string()))?;
    let order: Vec<usize> = {
        let mut idx: Vec<usize> = (0..entries.len()).collect();
        idx.sort_by(|&a, &b| {
            table[b]
                .f1
                .total_cmp(&table[a].f1)
                .then_with(|| table[a].experiment.cmp(&table[b].experiment))
        });
        idx
    };

    let mut md = String::new();
    md.push_str("# Column type annotation report\n\n");
    let _ = writeln!(
        md,
        "ΔF1 is taken against `{base_key}`. Scores are means over effective runs, in percent.\n"
    );
    md.push_str("| Run | Experiment | Shots | Runs | P | R | F1 | ΔF1 |\n|---|---|---:|---:|---:|---:|---:|---:|\n");
    for &i in &order {
        let e = &entries[i];
        let r = &table[i];
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {:.2} | {:.2} | {:.2} | {} |",
            e.run,
            e.metrics.experiment,
            e.metrics.shots,
            e.metrics.aggregate.effective_runs,
            r.precision,
            r.recall,
            r.f1,
            signed(r.delta_f1)
        );
    }

    let two_step: Vec<&ReportEntry> = order
        .iter()
        .map(|&i| &entries[i])
        .filter(|e| e.metrics.two_step)
        .collect();
    if !two_step.is_empty() {
        md.push_str("\n## Two-step pipeline\n\n| Run | Shots | S1-F1 | S2-P | S2-R | S2-F1 |\n|---|---:|---:|---:|---:|---:|\n");
        for e in two_step {
            let a = &e.metrics.aggregate;
            let s1 = a
                .mean_s1_f1
                .map(|f| format!("{f:.2}"))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                md,
                "| {} | {} | {s1} | {:.2} | {:.2} | {:.2} |",
                e.run, e.metrics.shots, a.mean.precision, a.mean.recall, a.mean.f1
            );
        }
    }

    md.push_str("\n## Answers outside the label space\n\n| Run | Off-vocabulary per run | Recovered by synonyms | I don't know | Missing |\n|---|---:|---:|---:|---:|\n");
    for &i in &order {
        let e = &entries[i];
        let a = &e.metrics.aggregate;
        let n = a.runs.len().max(1) as f64;
        let idk: usize = a.runs.iter().map(|r| r.counts.n_idk).sum();
        let missing: usize = a.runs.iter().map(|r| r.counts.n_missing).sum();
        let _ = writeln!(
            md,
            "| {} | {:.2} | {:.2} | {:.2} | {:.2} |",
            e.run,
            a.mean_oov_raw,
            a.mean_oov_recovered,
            metrics::round2(idk as f64 / n),
            metrics::round2(missing as f64 / n)
        );
    }

    let labels: std::collections::BTreeSet<&String> = entries
        .iter()
        .flat_map(|e| e.metrics.aggregate.per_label_f1.keys())
        .collect();
    let runs: Vec<&ReportEntry> = order.iter().map(|&i| &entries[i]).collect();
    md.push_str("\n## Per-label F1\n\n| Label |");
    let mut csv = String::from("label");
    for e in &runs {
        let _ = write!(md, " {} |", e.run);
        let _ = write!(csv, ",{}", e.run);
    }
    md.push_str("\n|---|");
    md.push_str(&"---:|".repeat(runs.len()));
    md.push('\n');
    csv.push('\n');
    for l in labels {
        let _ = write!(md, "| {l} |");
        csv.push_str(l);
        for e in &runs {
            match e.metrics.aggregate.per_label_f1.get(l) {
                Some(f) => {
                    let _ = write!(md, " {f:.2} |");
                    let _ = write!(csv, ",{f:.2}");
                }
                None => {
                    md.push_str(" - |");
                    csv.push(',');
                }
            }
        }
        md.push('\n');
        csv.push('\n');
    }
    if reference.is_some() {
        md.push_str(&published_section());
    }
    Ok((md, csv))
}

fn report(a: &ReportArgs) -> CliResult {
    let (md, csv) = build_report(&a.run_dirs, a.baseline.as_deref(), a.reference)?;
    fs::write(&a.output, md)
        .map_err(|e| CliError::config(format!("{}: {e}", a.output.display())))?;
    let csv_path = a.output.with_file_name("per_label_f1.csv");
    fs::write(&csv_path, csv)
        .map_err(|e| CliError::config(format!("{}: {e}", csv_path.display())))?;
    println!("wrote {} and {}", a.output.display(), csv_path.display());
    Ok(EXIT_OK)
}
