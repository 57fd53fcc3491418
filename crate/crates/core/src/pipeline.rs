//! Experiment orchestration: demonstration sampling, single-step annotation
//! over the prompt grid, the two-step domain-then-labels pipeline, and
//! aggregation over seeded runs.
//!
//! All sampling and prompt construction happens up front on the calling
//! thread. Only backend calls fan out to the worker pool, and results are
//! merged back in request order, so outputs do not depend on `parallelism`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    labels_for_domain, normalize_key, Dataset, DatasetError, DomainSchema, Split,
};
use crate::llm::{
    now_timestamp, BackendConfig, BackendKind, ChatBackend, ChatRequest, LlmError, OracleHint,
    Transcript, TranscriptRecord, DEFAULT_MODEL, IDK_REPLY,
};
use crate::metrics::{self, EvalResult, MicroScores, OovSummary, Percent, Record};
use crate::par::{self, derive_seed};
use crate::parse::{
    normalize_answer, parse_single_answer, parse_table_answer, AnnotationOutcome, OutcomeKind,
};
use crate::prompt::{
    build_domain_messages, build_messages, domain_prompt_name, Answer, Demonstration, Message,
    PromptConfig, PromptError,
};
use crate::serialize::{
    serialize_column, serialize_table, Format, SerializeError, SerializeOptions,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("sampling: {0}")]
    Sampling(String),
    #[error("demonstrations must come from the train split, got {0}")]
    TestLeak(Split),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Serialize(#[from] SerializeError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub prompt: PromptConfig,
    pub backend: BackendConfig,
    pub model_name: String,
    pub temperature: f64,
    pub n_runs: usize,
    pub seeds: Vec<u64>,
    pub parallelism: usize,
    pub two_step: bool,
    #[serde(default)]
    pub serialize: SerializeOptions,
    /// Dataset root the run was made on, for replays.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(prompt: PromptConfig, backend: BackendConfig) -> Self {
        ExperimentConfig {
            prompt,
            backend,
            model_name: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            n_runs: 3,
            seeds: vec![0, 1, 2],
            parallelism: 1,
            two_step: false,
            serialize: SerializeOptions::default(),
            data: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(PipelineError::Config("n_runs must be at least 1".into()));
        }
        if self.seeds.len() != self.n_runs {
            return Err(PipelineError::Config(format!(
                "{} seeds given for {} runs",
                self.seeds.len(),
                self.n_runs
            )));
        }
        if self.parallelism == 0 {
            return Err(PipelineError::Config(
                "parallelism must be at least 1".into(),
            ));
        }
        if self.temperature < 0.0 {
            return Err(PipelineError::Config("temperature must be >= 0".into()));
        }
        if self.prompt.n_rows == 0 {
            return Err(PipelineError::Config("n_rows must be at least 1".into()));
        }
        if self.prompt.label_list.is_empty() {
            return Err(PipelineError::Config("empty label list".into()));
        }
        self.backend.validate()?;
        Ok(())
    }

    /// Zero-shot prompts involve no sampling, so they run once.
    pub fn effective_runs(&self) -> usize {
        if self.prompt.shots == 0 {
            1
        } else {
            self.n_runs
        }
    }

    /// Name used for run directories and report rows.
    pub fn experiment_name(&self) -> String {
        if self.two_step {
            format!("two-step-{}shot", self.prompt.shots)
        } else {
            format!("{}-{}shot", self.prompt.variant_name(), self.prompt.shots)
        }
    }
}

/// Step-one outcome for one table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRecord {
    pub table_id: String,
    pub gold: Option<String>,
    pub predicted: Option<String>,
    pub raw: String,
    /// Step two ran with the full label list because the domain was unusable.
    pub fallback: bool,
    /// Labels offered in the step-two prompt.
    pub label_list: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    /// One per annotated test column, ordered by (table_id, column_index).
    pub records: Vec<Record>,
    pub domains: Vec<DomainRecord>,
    /// Requests actually sent to the backend.
    pub n_calls: usize,
    /// Table answers whose fragment count did not match the column count.
    pub n_mismatched: usize,
    /// Transcript positions `[start, end)` written by this run.
    pub transcript_span: (usize, usize),
}

impl RunResult {
    pub fn n_errors(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
            + self.domains.iter().filter(|d| d.error.is_some()).count()
    }
}

#[derive(Debug, Clone)]
pub struct Annotated {
    pub runs: Vec<RunResult>,
    pub transcript: Transcript,
}

/// A sampleable training item: a whole table, or one of its columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Candidate {
    pub table: usize,
    pub column: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SampleOptions<'a> {
    pub n_rows: usize,
    pub serialize: SerializeOptions,
    /// Restricts candidates to items whose gold labels are all offered.
    pub label_list: Option<&'a [String]>,
    /// Restricts table candidates to these gold domains.
    pub domain: Option<&'a str>,
}

impl Default for SampleOptions<'_> {
    fn default() -> Self {
        SampleOptions {
            n_rows: crate::serialize::DEFAULT_ROWS,
            serialize: SerializeOptions::default(),
            label_list: None,
            domain: None,
        }
    }
}

fn offered(label: &str, list: Option<&[String]>) -> bool {
    list.is_none_or(|l| l.iter().any(|x| x == label))
}

/// Every item sampling may draw from, in dataset order.
pub fn demo_candidates(train: &Dataset, format: Format, opts: &SampleOptions) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (ti, t) in train.tables.iter().enumerate() {
        if let Some(d) = opts.domain {
            if train.domain_of(&t.table_id) != Some(d) {
                continue;
            }
        }
        match format {
            Format::Column | Format::Text => {
                for (ci, c) in t.columns.iter().enumerate() {
                    let Some(label) = &c.gold_label else { continue };
                    if offered(label, opts.label_list)
                        && serialize_column(c, format, opts.n_rows, &opts.serialize).is_ok()
                    {
                        out.push(Candidate {
                            table: ti,
                            column: Some(ci),
                        });
                    }
                }
            }
            Format::Table => {
                if let Some(golds) = t.gold_labels() {
                    if golds.iter().all(|g| offered(g, opts.label_list)) {
                        out.push(Candidate {
                            table: ti,
                            column: None,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Uniform sampling of `k` distinct candidates, driven only by `seed`.
pub fn sample_candidates(candidates: &[Candidate], k: usize, seed: u64) -> Result<Vec<Candidate>> {
    if k > candidates.len() {
        return Err(PipelineError::Sampling(format!(
            "asked for {k} demonstrations but only {} candidates exist",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i])
        .collect())
}

fn demonstration(
    train: &Dataset,
    c: Candidate,
    format: Format,
    opts: &SampleOptions,
) -> Result<Demonstration> {
    let table = &train.tables[c.table];
    Ok(match c.column {
        Some(ci) => {
            let col = &table.columns[ci];
            Demonstration {
                input: serialize_column(col, format, opts.n_rows, &opts.serialize)?,
                gold: Answer::Single(col.gold_label.clone().expect("candidate is labeled")),
            }
        }
        None => Demonstration {
            input: serialize_table(table, opts.n_rows, &opts.serialize)?,
            gold: Answer::PerColumn(table.gold_labels().expect("candidate is labeled")),
        },
    })
}

/// Draws `k` random training demonstrations without regard to their labels.
pub fn sample_demonstrations(
    train: &Dataset,
    k: usize,
    format: Format,
    seed: u64,
    opts: &SampleOptions,
) -> Result<Vec<Demonstration>> {
    if train.split != Split::Train {
        return Err(PipelineError::TestLeak(train.split));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let candidates = demo_candidates(train, format, opts);
    sample_candidates(&candidates, k, seed)?
        .into_iter()
        .map(|c| demonstration(train, c, format, opts))
        .collect()
}

/// What a prepared request will be scored against.
#[derive(Debug, Clone)]
enum Target {
    Column {
        table_id: String,
        column_index: usize,
        gold: String,
    },
    Table {
        table_id: String,
        golds: Vec<Option<String>>,
    },
    Domain {
        gold: Option<String>,
    },
}

struct Prepared {
    target: Target,
    /// `Err` carries a per-unit failure note; such units are never sent.
    request: Result<ChatRequest, String>,
}

struct Reply {
    response: std::result::Result<String, LlmError>,
    timestamp: String,
}

fn check_disjoint(test: &Dataset, train: Option<&Dataset>) -> Result<()> {
    if let Some(train) = train {
        if train.split != Split::Train {
            return Err(PipelineError::TestLeak(train.split));
        }
        if let Some(t) = test
            .tables
            .iter()
            .find(|t| train.table(&t.table_id).is_some())
        {
            return Err(PipelineError::Config(format!(
                "table {} appears in both splits",
                t.table_id
            )));
        }
    }
    Ok(())
}

fn require_train(train: Option<&Dataset>, shots: usize) -> Result<Option<&Dataset>> {
    if shots > 0 && train.is_none() {
        return Err(PipelineError::Config(
            "few-shot prompts need a training split".into(),
        ));
    }
    Ok(train)
}

fn request(
    config: &ExperimentConfig,
    id: String,
    messages: Vec<Message>,
    hint: OracleHint,
) -> ChatRequest {
    ChatRequest {
        model_name: config.model_name.clone(),
        temperature: config.temperature,
        messages,
        request_id: id,
        hint: Some(hint),
    }
}

fn soft_failure(e: PromptError) -> Result<String> {
    match e {
        e @ PromptError::TokenBudget { .. } => Ok(e.to_string()),
        other => Err(other.into()),
    }
}

/// Sends every prepared request, in parallel when allowed, and returns the
/// replies in input order.
fn dispatch(
    backend: &dyn ChatBackend,
    units: &[Prepared],
    parallelism: usize,
) -> Vec<Option<Reply>> {
    let threads = if backend.sequential_only() {
        1
    } else {
        parallelism
    };
    par::map_ordered(units, threads, |_, u| {
        u.request.as_ref().ok().map(|req| {
            let response = backend.complete(req);
            Reply {
                response,
                timestamp: now_timestamp(),
            }
        })
    })
}

fn is_fatal(e: &LlmError) -> bool {
    matches!(
        e,
        LlmError::Replay(_) | LlmError::NoHint(_) | LlmError::Config(_)
    )
}

/// Raw reply text per unit, or the failure note. Records sent requests in
/// the transcript.
fn collect(
    units: &[Prepared],
    replies: Vec<Option<Reply>>,
    transcript: &mut Transcript,
) -> Result<(Vec<std::result::Result<String, String>>, usize)> {
    let mut out = Vec::with_capacity(units.len());
    let mut sent = 0;
    for (u, reply) in units.iter().zip(replies) {
        match (&u.request, reply) {
            (Err(note), _) => out.push(Err(note.clone())),
            (Ok(req), Some(reply)) => {
                sent += 1;
                match reply.response {
                    Ok(text) => {
                        transcript.push(TranscriptRecord::new(req, &text, reply.timestamp))?;
                        out.push(Ok(text));
                    }
                    Err(e) if is_fatal(&e) => return Err(e.into()),
                    Err(e) => {
                        log::warn!("request {} failed: {e}", req.request_id);
                        out.push(Err(e.to_string()));
                    }
                }
            }
            (Ok(_), None) => unreachable!("every built request is dispatched"),
        }
    }
    Ok((out, sent))
}

/// Scores replies against their targets.
fn score(
    units: &[Prepared],
    replies: &[std::result::Result<String, String>],
    test: &Dataset,
) -> (Vec<Record>, usize) {
    let vocab = &test.vocabulary;
    let mut records = Vec::new();
    let mut mismatched = 0;
    for (u, reply) in units.iter().zip(replies) {
        match &u.target {
            Target::Column {
                table_id,
                column_index,
                gold,
            } => {
                let (outcome, error) = match reply {
                    Ok(text) => (parse_single_answer(text, vocab), None),
                    Err(note) => (AnnotationOutcome::missing(""), Some(note.clone())),
                };
                records.push(Record {
                    table_id: table_id.clone(),
                    column_index: *column_index,
                    gold: gold.clone(),
                    outcome,
                    error,
                });
            }
            Target::Table { table_id, golds } => {
                let (outcomes, error) = match reply {
                    Ok(text) => {
                        let parsed = parse_table_answer(text, golds.len(), vocab);
                        if parsed.mismatch {
                            mismatched += 1;
                        }
                        (parsed.outcomes, None)
                    }
                    Err(note) => (
                        vec![AnnotationOutcome::missing(""); golds.len()],
                        Some(note.clone()),
                    ),
                };
                for (i, (gold, outcome)) in golds.iter().zip(outcomes).enumerate() {
                    if let Some(gold) = gold {
                        records.push(Record {
                            table_id: table_id.clone(),
                            column_index: i,
                            gold: gold.clone(),
                            outcome,
                            error: error.clone(),
                        });
                    }
                }
            }
            Target::Domain { .. } => {}
        }
    }
    records.sort_by(|a, b| (&a.table_id, a.column_index).cmp(&(&b.table_id, b.column_index)));
    (records, mismatched)
}

/// Single-step annotation of every test unit for each seeded run.
pub fn annotate(
    test: &Dataset,
    train: Option<&Dataset>,
    config: &ExperimentConfig,
    backend: &dyn ChatBackend,
) -> Result<Annotated> {
    config.validate()?;
    check_disjoint(test, train)?;
    let train = require_train(train, config.prompt.shots)?;
    let p = &config.prompt;
    let sample_opts = SampleOptions {
        n_rows: p.n_rows,
        serialize: config.serialize,
        label_list: Some(&p.label_list),
        domain: None,
    };

    let mut transcript = Transcript::new();
    let mut runs = Vec::new();
    for run in 0..config.effective_runs() {
        let seed = config.seeds[run];
        let demos = match train {
            Some(train) => sample_demonstrations(train, p.shots, p.format, seed, &sample_opts)?,
            None => Vec::new(),
        };
        let mut prompt = p.clone();
        prompt.seed = seed;

        let mut units = Vec::new();
        for table in &test.tables {
            match p.format {
                Format::Column | Format::Text => {
                    for col in &table.columns {
                        let Some(gold) = &col.gold_label else {
                            continue;
                        };
                        let target = Target::Column {
                            table_id: table.table_id.clone(),
                            column_index: col.index,
                            gold: gold.clone(),
                        };
                        let request =
                            match serialize_column(col, p.format, p.n_rows, &config.serialize) {
                                Err(e) => Err(e.to_string()),
                                Ok(input) => match build_messages(&prompt, &demos, &input) {
                                    Ok(messages) => Ok(request(
                                        config,
                                        format!("r{run}:{}:{}", table.table_id, col.index),
                                        messages,
                                        OracleHint {
                                            gold: vec![gold.clone()],
                                            per_column: false,
                                            label_space: p.label_list.clone(),
                                        },
                                    )),
                                    Err(e) => Err(soft_failure(e)?),
                                },
                            };
                        units.push(Prepared { target, request });
                    }
                }
                Format::Table => {
                    let golds: Vec<Option<String>> =
                        table.columns.iter().map(|c| c.gold_label.clone()).collect();
                    if golds.iter().all(Option::is_none) {
                        continue;
                    }
                    let input = serialize_table(table, p.n_rows, &config.serialize)?;
                    let request = match build_messages(&prompt, &demos, &input) {
                        Ok(messages) => Ok(request(
                            config,
                            format!("r{run}:{}", table.table_id),
                            messages,
                            OracleHint {
                                gold: golds
                                    .iter()
                                    .map(|g| g.clone().unwrap_or_else(|| IDK_REPLY.into()))
                                    .collect(),
                                per_column: true,
                                label_space: p.label_list.clone(),
                            },
                        )),
                        Err(e) => Err(soft_failure(e)?),
                    };
                    units.push(Prepared {
                        target: Target::Table {
                            table_id: table.table_id.clone(),
                            golds,
                        },
                        request,
                    });
                }
            }
        }

        let start = transcript.len();
        let replies = dispatch(backend, &units, config.parallelism);
        let (texts, n_calls) = collect(&units, replies, &mut transcript)?;
        let (records, n_mismatched) = score(&units, &texts, test);
        runs.push(RunResult {
            run,
            seed,
            records,
            domains: Vec::new(),
            n_calls,
            n_mismatched,
            transcript_span: (start, transcript.len()),
        });
    }
    Ok(Annotated { runs, transcript })
}

/// Resolves a step-one reply to a schema domain. Accepts the full domain
/// name, its prompt name, and the prompt name without a plural `s`.
pub fn match_domain(answer: &str, schema: &DomainSchema) -> Option<String> {
    let key = normalize_key(&normalize_answer(answer));
    if key.is_empty() {
        return None;
    }
    schema
        .names()
        .find(|name| {
            let short = domain_prompt_name(name);
            key == normalize_key(name)
                || key == short
                || short.strip_suffix('s') == Some(key.as_str())
        })
        .map(str::to_string)
}

/// Two API calls per table: classify the domain, then annotate its columns
/// with only that domain's labels.
pub fn two_step_annotate(
    test: &Dataset,
    train: Option<&Dataset>,
    config: &ExperimentConfig,
    backend: &dyn ChatBackend,
) -> Result<Annotated> {
    config.validate()?;
    check_disjoint(test, train)?;
    let train = require_train(train, config.prompt.shots)?;
    let p = &config.prompt;
    let schema = &test.schema;
    let domains: Vec<String> = schema.names().map(str::to_string).collect();
    let domain_names: Vec<String> = domains.iter().map(|d| domain_prompt_name(d)).collect();
    let full_labels = test.vocabulary.labels().to_vec();

    let mut transcript = Transcript::new();
    let mut runs = Vec::new();
    for run in 0..config.effective_runs() {
        let seed = config.seeds[run];

        // sampling for both steps happens before any call is made
        let mut step1_demos = Vec::new();
        let mut step2_demos: BTreeMap<Option<String>, Vec<Demonstration>> = BTreeMap::new();
        if let Some(train) = train.filter(|_| p.shots > 0) {
            let labeled: Vec<Candidate> = train
                .tables
                .iter()
                .enumerate()
                .filter(|(_, t)| train.domain_of(&t.table_id).is_some())
                .map(|(i, _)| Candidate {
                    table: i,
                    column: None,
                })
                .collect();
            for c in sample_candidates(&labeled, p.shots, derive_seed(seed, "domain"))? {
                let t = &train.tables[c.table];
                step1_demos.push((
                    serialize_table(t, p.n_rows, &config.serialize)?,
                    train.domain_of(&t.table_id).unwrap().to_string(),
                ));
            }
            for d in &domains {
                let opts = SampleOptions {
                    n_rows: p.n_rows,
                    serialize: config.serialize,
                    label_list: Some(labels_for_domain(schema, d)?),
                    domain: Some(d),
                };
                let demos = sample_demonstrations(
                    train,
                    p.shots,
                    Format::Table,
                    derive_seed(seed, d),
                    &opts,
                )
                .map_err(|e| PipelineError::Sampling(format!("domain {d}: {e}")))?;
                step2_demos.insert(Some(d.clone()), demos);
            }
            let opts = SampleOptions {
                n_rows: p.n_rows,
                serialize: config.serialize,
                label_list: Some(&full_labels),
                domain: None,
            };
            step2_demos.insert(
                None,
                sample_demonstrations(
                    train,
                    p.shots,
                    Format::Table,
                    derive_seed(seed, "fallback"),
                    &opts,
                )?,
            );
        }

        let tables: Vec<_> = test
            .tables
            .iter()
            .filter(|t| t.columns.iter().any(|c| c.gold_label.is_some()))
            .collect();
        let start = transcript.len();

        // step one
        let mut step1 = Vec::with_capacity(tables.len());
        for table in &tables {
            let gold = test.domain_of(&table.table_id).map(str::to_string);
            let input = serialize_table(table, p.n_rows, &config.serialize)?;
            let request = match build_domain_messages(
                &domains,
                p.use_instructions,
                p.use_roles,
                &step1_demos,
                &input,
                p.token_limit,
            ) {
                Ok(messages) => Ok(request(
                    config,
                    format!("r{run}:{}:domain", table.table_id),
                    messages,
                    OracleHint {
                        gold: vec![gold
                            .as_deref()
                            .map(domain_prompt_name)
                            .unwrap_or_else(|| IDK_REPLY.into())],
                        per_column: false,
                        label_space: domain_names.clone(),
                    },
                )),
                Err(e) => Err(soft_failure(e)?),
            };
            step1.push(Prepared {
                target: Target::Domain { gold },
                request,
            });
        }
        let replies = dispatch(backend, &step1, config.parallelism);
        let (step1_texts, calls1) = collect(&step1, replies, &mut transcript)?;

        // step two
        let mut domain_records = Vec::with_capacity(tables.len());
        let mut step2 = Vec::with_capacity(tables.len());
        for ((table, unit), reply) in tables.iter().zip(&step1).zip(&step1_texts) {
            let Target::Domain { gold, .. } = &unit.target else {
                unreachable!()
            };
            let (predicted, raw, error) = match reply {
                Ok(text) => (match_domain(text, schema), text.clone(), None),
                Err(note) => (None, String::new(), Some(note.clone())),
            };
            let fallback = predicted.is_none();
            if fallback {
                log::warn!(
                    "table {}: no usable domain in {raw:?}; using the full label list",
                    table.table_id
                );
            }
            let label_list: Vec<String> = match &predicted {
                Some(d) => labels_for_domain(schema, d)?.to_vec(),
                None => full_labels.clone(),
            };
            domain_records.push(DomainRecord {
                table_id: table.table_id.clone(),
                gold: gold.clone(),
                predicted: predicted.clone(),
                raw,
                fallback,
                label_list: label_list.clone(),
                error,
            });

            let mut prompt = p.clone();
            prompt.format = Format::Table;
            prompt.seed = seed;
            prompt.label_list = label_list.clone();
            let demos = step2_demos
                .get(&predicted)
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let golds: Vec<Option<String>> =
                table.columns.iter().map(|c| c.gold_label.clone()).collect();
            let input = serialize_table(table, p.n_rows, &config.serialize)?;
            let request = match build_messages(&prompt, demos, &input) {
                Ok(messages) => Ok(request(
                    config,
                    format!("r{run}:{}:labels", table.table_id),
                    messages,
                    OracleHint {
                        gold: golds
                            .iter()
                            .map(|g| g.clone().unwrap_or_else(|| IDK_REPLY.into()))
                            .collect(),
                        per_column: true,
                        label_space: label_list,
                    },
                )),
                Err(e) => Err(soft_failure(e)?),
            };
            step2.push(Prepared {
                target: Target::Table {
                    table_id: table.table_id.clone(),
                    golds,
                },
                request,
            });
        }
        let replies = dispatch(backend, &step2, config.parallelism);
        let (step2_texts, calls2) = collect(&step2, replies, &mut transcript)?;
        let (records, n_mismatched) = score(&step2, &step2_texts, test);

        runs.push(RunResult {
            run,
            seed,
            records,
            domains: domain_records,
            n_calls: calls1 + calls2,
            n_mismatched,
            transcript_span: (start, transcript.len()),
        });
    }
    Ok(Annotated { runs, transcript })
}

/// Runs `annotate` or `two_step_annotate` depending on the config.
pub fn run_experiment(
    test: &Dataset,
    train: Option<&Dataset>,
    config: &ExperimentConfig,
    backend: &dyn ChatBackend,
) -> Result<Annotated> {
    if config.two_step {
        two_step_annotate(test, train, config, backend)
    } else {
        annotate(test, train, config, backend)
    }
}

/// Step-one predictions scored as a classification over tables with a
/// known gold domain.
pub fn domain_scores(domains: &[DomainRecord]) -> Option<MicroScores> {
    let records: Vec<Record> = domains
        .iter()
        .filter_map(|d| {
            let gold = d.gold.clone()?;
            Some(Record {
                table_id: d.table_id.clone(),
                column_index: 0,
                gold,
                outcome: AnnotationOutcome {
                    kind: if d.predicted.is_some() {
                        OutcomeKind::Matched
                    } else {
                        OutcomeKind::OutOfVocabulary
                    },
                    label: d.predicted.clone(),
                    raw: d.raw.clone(),
                },
                error: d.error.clone(),
            })
        })
        .collect();
    metrics::compute_micro(&records).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: usize,
    pub seed: u64,
    pub scores: Percent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s1_f1: Option<f64>,
    pub counts: EvalResult,
    pub oov: OovSummary,
    pub n_calls: usize,
    pub n_errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub effective_runs: usize,
    pub mean: Percent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_s1_f1: Option<f64>,
    pub mean_oov_raw: f64,
    pub mean_oov_recovered: f64,
    /// Per-label F1 in percent, averaged over runs in which the label occurs.
    pub per_label_f1: BTreeMap<String, f64>,
    pub runs: Vec<RunMetrics>,
}

/// Arithmetic mean of P, R, F1 (and step-one F1) across runs.
pub fn aggregate_runs(results: &[RunResult]) -> Result<AggregateMetrics> {
    if results.is_empty() {
        return Err(PipelineError::Config("no runs to aggregate".into()));
    }
    let mut runs = Vec::with_capacity(results.len());
    let mut sums = (0.0, 0.0, 0.0);
    let mut s1_sum = 0.0;
    let mut s1_n = 0;
    let mut per_label: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let (mut oov_raw, mut oov_rec) = (0usize, 0usize);
    for r in results {
        let counts = metrics::evaluate(&r.records)
            .map_err(|e| PipelineError::Config(format!("run {}: {e}", r.run)))?;
        let s = counts.scores();
        sums.0 += s.precision;
        sums.1 += s.recall;
        sums.2 += s.f1;
        let s1 = domain_scores(&r.domains);
        if let Some(s1) = s1 {
            s1_sum += s1.f1;
            s1_n += 1;
        }
        for (label, c) in &counts.per_label {
            let e = per_label.entry(label.clone()).or_default();
            e.0 += c.f1();
            e.1 += 1;
        }
        let oov = metrics::oov_summary(&r.records);
        oov_raw += oov.n_oov_raw;
        oov_rec += oov.n_recovered;
        runs.push(RunMetrics {
            run: r.run,
            seed: r.seed,
            scores: s.percent(),
            s1_f1: s1.map(|s| s.percent().f1),
            counts,
            oov,
            n_calls: r.n_calls,
            n_errors: r.n_errors(),
        });
    }
    let n = results.len() as f64;
    let mean = MicroScores {
        precision: sums.0 / n,
        recall: sums.1 / n,
        f1: sums.2 / n,
    };
    Ok(AggregateMetrics {
        effective_runs: results.len(),
        mean: mean.percent(),
        mean_s1_f1: (s1_n > 0).then(|| metrics::round2(100.0 * s1_sum / s1_n as f64)),
        mean_oov_raw: metrics::round2(oov_raw as f64 / n),
        mean_oov_recovered: metrics::round2(oov_rec as f64 / n),
        per_label_f1: per_label
            .into_iter()
            .map(|(l, (sum, k))| (l, metrics::round2(100.0 * sum / k as f64)))
            .collect(),
        runs,
    })
}

/// True when the backend kind answers from ground truth.
pub fn is_oracle(kind: BackendKind) -> bool {
    matches!(
        kind,
        BackendKind::Oracle | BackendKind::SynonymOracle | BackendKind::NoisyOracle
    )
}

/// `metrics.json` contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub experiment: String,
    pub format: Format,
    pub use_instructions: bool,
    pub use_roles: bool,
    pub shots: usize,
    pub two_step: bool,
    #[serde(flatten)]
    pub aggregate: AggregateMetrics,
}

impl MetricsFile {
    pub fn new(config: &ExperimentConfig, aggregate: AggregateMetrics) -> Self {
        MetricsFile {
            experiment: config.experiment_name(),
            format: if config.two_step {
                Format::Table
            } else {
                config.prompt.format
            },
            use_instructions: config.prompt.use_instructions,
            use_roles: config.prompt.use_roles,
            shots: config.prompt.shots,
            two_step: config.two_step,
            aggregate,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| malformed(path, e))
    }
}

pub const RESULTS_HEADER: [&str; 7] = [
    "run",
    "table_id",
    "column_index",
    "gold",
    "outcome",
    "predicted",
    "raw",
];

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

fn malformed(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    DatasetError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
    .into()
}

pub fn write_results_csv(path: &Path, runs: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| malformed(path, e))?;
    w.write_record(RESULTS_HEADER)
        .map_err(|e| malformed(path, e))?;
    for r in runs {
        for rec in &r.records {
            w.write_record([
                r.run.to_string().as_str(),
                &rec.table_id,
                &rec.column_index.to_string(),
                &rec.gold,
                rec.outcome.kind.as_str(),
                rec.outcome.label.as_deref().unwrap_or(""),
                &rec.outcome.raw,
            ])
            .map_err(|e| malformed(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads `results.csv` back into per-run record lists.
pub fn read_results_csv(path: &Path) -> Result<BTreeMap<usize, Vec<Record>>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| malformed(path, e))?;
    let header = rd.headers().map_err(|e| malformed(path, e))?.clone();
    if header.iter().ne(RESULTS_HEADER) {
        return Err(malformed(path, format!("unexpected header {header:?}")));
    }
    let mut out: BTreeMap<usize, Vec<Record>> = BTreeMap::new();
    for row in rd.records() {
        let row = row.map_err(|e| malformed(path, e))?;
        let num = |i: usize| {
            row[i]
                .parse::<usize>()
                .map_err(|e| malformed(path, format!("{}: {e}", RESULTS_HEADER[i])))
        };
        let kind = OutcomeKind::parse(&row[4])
            .ok_or_else(|| malformed(path, format!("unknown outcome {:?}", &row[4])))?;
        out.entry(num(0)?).or_default().push(Record {
            table_id: row[1].to_string(),
            column_index: num(2)?,
            gold: row[3].to_string(),
            outcome: AnnotationOutcome {
                kind,
                label: (!row[5].is_empty()).then(|| row[5].to_string()),
                raw: row[6].to_string(),
            },
            error: None,
        });
    }
    Ok(out)
}

fn write_domains_csv(path: &Path, runs: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| malformed(path, e))?;
    w.write_record(["run", "table_id", "gold", "predicted", "fallback", "raw"])
        .map_err(|e| malformed(path, e))?;
    for r in runs {
        for d in &r.domains {
            w.write_record([
                r.run.to_string().as_str(),
                &d.table_id,
                d.gold.as_deref().unwrap_or(""),
                d.predicted.as_deref().unwrap_or(""),
                if d.fallback { "true" } else { "false" },
                &d.raw,
            ])
            .map_err(|e| malformed(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| malformed(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Writes config.json, transcript.jsonl, results.csv and metrics.json (plus
/// domains.csv for two-step runs) into `dir`, replacing earlier contents.
pub fn write_run_dir(
    dir: &Path,
    config: &ExperimentConfig,
    annotated: &Annotated,
) -> Result<MetricsFile> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let metrics = MetricsFile::new(config, aggregate_runs(&annotated.runs)?);
    write_pretty(&dir.join("config.json"), config)?;
    annotated
        .transcript
        .write_jsonl(&dir.join("transcript.jsonl"))?;
    write_results_csv(&dir.join("results.csv"), &annotated.runs)?;
    if config.two_step {
        write_domains_csv(&dir.join("domains.csv"), &annotated.runs)?;
    }
    write_pretty(&dir.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| malformed(path, e))
}
