use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use tablesage::dataset::{labels_for_domain, load_dataset, Dataset, Split};
use tablesage::llm::{
    Backend, BackendConfig, BackendKind, ChatBackend, ChatRequest, LlmError, OracleBackend,
};
use tablesage::metrics::{compute_micro, oov_summary};
use tablesage::parse::OutcomeKind;
use tablesage::pipeline::{
    aggregate_runs, annotate, demo_candidates, match_domain, read_results_csv,
    sample_demonstrations, two_step_annotate, write_run_dir, ExperimentConfig, PipelineError,
    SampleOptions,
};
use tablesage::prompt::PromptConfig;
use tablesage::serialize::Format;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mini")
}

fn splits() -> (Dataset, Dataset) {
    (
        load_dataset(&fixture(), Split::Train).unwrap(),
        load_dataset(&fixture(), Split::Test).unwrap(),
    )
}

fn config(test: &Dataset, format: Format, shots: usize, kind: BackendKind) -> ExperimentConfig {
    let prompt = PromptConfig::new(format, test.vocabulary.labels().to_vec())
        .instructions(true)
        .roles(true)
        .shots(shots);
    ExperimentConfig::new(prompt, BackendConfig::new(kind))
}

/// Records every request it sees and answers like the exact oracle.
#[derive(Default)]
struct Spy {
    seen: Mutex<Vec<ChatRequest>>,
    calls: AtomicUsize,
}

impl ChatBackend for Spy {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen.lock().unwrap().push(request.clone());
        OracleBackend::Exact.complete(request)
    }
}

#[test]
fn oracle_scores_perfectly_in_every_format() {
    let (train, test) = splits();
    for format in Format::ALL {
        for shots in [0, 1, 5] {
            let cfg = config(&test, format, shots, BackendKind::Oracle);
            let out = annotate(&test, Some(&train), &cfg, &OracleBackend::Exact).unwrap();
            assert_eq!(out.runs.len(), if shots == 0 { 1 } else { 3 });
            for run in &out.runs {
                let s = compute_micro(&run.records).unwrap().percent();
                assert_eq!(
                    (s.precision, s.recall, s.f1),
                    (100.0, 100.0, 100.0),
                    "{format} {shots}"
                );
                assert_eq!(run.records.len(), test.n_annotated_columns());
            }
        }
    }
}

#[test]
fn call_counts() {
    let (train, test) = splits();
    let n_tables = test.tables.len();
    let n_columns = test.n_annotated_columns();
    for (format, expected) in [
        (Format::Column, n_columns),
        (Format::Text, n_columns),
        (Format::Table, n_tables),
    ] {
        let spy = Spy::default();
        let out = annotate(
            &test,
            Some(&train),
            &config(&test, format, 1, BackendKind::Oracle),
            &spy,
        )
        .unwrap();
        assert_eq!(spy.calls.load(Ordering::SeqCst), 3 * expected);
        assert!(out.runs.iter().all(|r| r.n_calls == expected));
    }
    let spy = Spy::default();
    let mut cfg = config(&test, Format::Table, 1, BackendKind::Oracle);
    cfg.two_step = true;
    let out = two_step_annotate(&test, Some(&train), &cfg, &spy).unwrap();
    assert!(out.runs.iter().all(|r| r.n_calls == 2 * n_tables));
    assert_eq!(out.transcript.len(), 3 * 2 * n_tables);
}

#[test]
fn two_step_subset_law() {
    let (train, test) = splits();
    let mut cfg = config(&test, Format::Table, 1, BackendKind::Oracle);
    cfg.two_step = true;
    let spy = Spy::default();
    let out = two_step_annotate(&test, Some(&train), &cfg, &spy).unwrap();
    let agg = aggregate_runs(&out.runs).unwrap();
    assert_eq!(agg.mean_s1_f1, Some(100.0));
    assert_eq!(agg.mean.f1, 100.0);
    for run in &out.runs {
        for d in &run.domains {
            let gold = d.gold.as_deref().unwrap();
            assert_eq!(d.label_list, labels_for_domain(&test.schema, gold).unwrap());
            assert!(!d.fallback);
        }
    }
    for req in spy
        .seen
        .lock()
        .unwrap()
        .iter()
        .filter(|r| r.request_id.ends_with(":labels"))
    {
        let table_id = req.request_id.split(':').nth(1).unwrap();
        let domain = test.domain_of(table_id).unwrap();
        let hint = req.hint.as_ref().unwrap();
        assert_eq!(
            hint.label_space,
            labels_for_domain(&test.schema, domain).unwrap()
        );
        // one-shot: the single step-two demo is a same-domain training table
        let demo_turns = req
            .messages
            .iter()
            .filter(|m| m.content.starts_with("Table:"))
            .count();
        assert_eq!(demo_turns, 2);
    }
}

/// Answers step one with a fixed domain and otherwise acts as the oracle.
struct Misroute(&'static str);

impl ChatBackend for Misroute {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        if request.request_id.ends_with(":domain") {
            Ok(self.0.to_string())
        } else {
            OracleBackend::Exact.complete(request)
        }
    }
}

#[test]
fn misrouted_domain_cascades() {
    let (train, test) = splits();
    let mut cfg = config(&test, Format::Table, 0, BackendKind::Oracle);
    cfg.two_step = true;
    let out = two_step_annotate(&test, Some(&train), &cfg, &Misroute("Events")).unwrap();
    let run = &out.runs[0];
    let hotel = run
        .domains
        .iter()
        .find(|d| d.table_id == "hotels_t1")
        .unwrap();
    assert_eq!(hotel.predicted.as_deref(), Some("Events"));
    assert_eq!(hotel.label_list.len(), 9);
    let photo = run
        .records
        .iter()
        .find(|r| r.table_id == "hotels_t1" && r.gold == "Photograph")
        .unwrap();
    assert!(!photo.is_correct());

    let out = two_step_annotate(&test, Some(&train), &cfg, &Misroute("cooking")).unwrap();
    let run = &out.runs[0];
    assert!(run
        .domains
        .iter()
        .all(|d| d.fallback && d.label_list.len() == 32));
    assert_eq!(aggregate_runs(&out.runs).unwrap().mean.f1, 100.0);
}

#[test]
fn domain_answers() {
    let (_, test) = splits();
    let s = &test.schema;
    assert_eq!(match_domain("music", s).as_deref(), Some("Music Recording"));
    assert_eq!(
        match_domain("Music Recording", s).as_deref(),
        Some("Music Recording")
    );
    assert_eq!(match_domain("Domain: Hotel.", s).as_deref(), Some("Hotels"));
    assert_eq!(
        match_domain("\"restaurants\"", s).as_deref(),
        Some("Restaurants")
    );
    assert_eq!(match_domain("sports", s), None);
    assert_eq!(match_domain("", s), None);
}

#[test]
fn synonym_oracle_recovers_everything() {
    let (train, test) = splits();
    let cfg = config(&test, Format::Column, 0, BackendKind::SynonymOracle);
    let backend = Backend::from_config(&cfg.backend, &test.vocabulary).unwrap();
    let out = annotate(&test, Some(&train), &cfg, &backend).unwrap();
    let records = &out.runs[0].records;
    assert!(records
        .iter()
        .all(|r| r.outcome.kind == OutcomeKind::SynonymMatched));
    assert_eq!(compute_micro(records).unwrap().percent().f1, 100.0);
    let oov = oov_summary(records);
    assert_eq!(
        (oov.n_oov_raw, oov.n_recovered),
        (records.len(), records.len())
    );
}

#[test]
fn sampling_stays_in_train_and_is_seeded() {
    let (train, test) = splits();
    let opts = SampleOptions::default();
    let a = sample_demonstrations(&train, 5, Format::Column, 11, &opts).unwrap();
    let b = sample_demonstrations(&train, 5, Format::Column, 11, &opts).unwrap();
    let c = sample_demonstrations(&train, 5, Format::Column, 12, &opts).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(matches!(
        sample_demonstrations(&test, 1, Format::Column, 0, &opts),
        Err(PipelineError::TestLeak(Split::Test))
    ));
    let n = demo_candidates(&train, Format::Table, &opts).len();
    assert_eq!(n, train.tables.len());
    assert!(matches!(
        sample_demonstrations(&train, n + 1, Format::Table, 0, &opts),
        Err(PipelineError::Sampling(_))
    ));
    let train_ids: BTreeSet<_> = train.tables.iter().map(|t| &t.table_id).collect();
    assert!(test.tables.iter().all(|t| !train_ids.contains(&t.table_id)));
}

#[test]
fn parallelism_does_not_change_results() {
    let (train, test) = splits();
    let mut cfg = config(&test, Format::Column, 1, BackendKind::NoisyOracle);
    cfg.backend = BackendConfig::noisy(0.3, 7);
    let backend = Backend::from_config(&cfg.backend, &test.vocabulary).unwrap();
    let seq = annotate(&test, Some(&train), &cfg, &backend).unwrap();
    cfg.parallelism = 4;
    let par = annotate(&test, Some(&train), &cfg, &backend).unwrap();
    assert_eq!(seq.runs, par.runs);
    let ids = |t: &tablesage::llm::Transcript| {
        t.records()
            .iter()
            .map(|r| r.request_id.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(ids(&seq.transcript), ids(&par.transcript));
}

#[test]
fn run_dir_round_trip() {
    let (train, test) = splits();
    let mut cfg = config(&test, Format::Table, 1, BackendKind::NoisyOracle);
    cfg.backend = BackendConfig::noisy(0.3, 7);
    let backend = Backend::from_config(&cfg.backend, &test.vocabulary).unwrap();
    let out = annotate(&test, Some(&train), &cfg, &backend).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let metrics = write_run_dir(dir.path(), &cfg, &out).unwrap();
    let back = read_results_csv(&dir.path().join("results.csv")).unwrap();
    assert_eq!(back.len(), 3);
    for run in &out.runs {
        let records = &back[&run.run];
        assert_eq!(records.len(), run.records.len());
        let s = compute_micro(records).unwrap().percent();
        assert_eq!(s, metrics.aggregate.runs[run.run].scores);
    }
    let first = std::fs::read(dir.path().join("metrics.json")).unwrap();
    write_run_dir(dir.path(), &cfg, &out).unwrap();
    assert_eq!(
        first,
        std::fs::read(dir.path().join("metrics.json")).unwrap()
    );
}

#[test]
fn zero_shot_without_train_split() {
    let (_, test) = splits();
    let cfg = config(&test, Format::Text, 0, BackendKind::Oracle);
    let out = annotate(&test, None, &cfg, &OracleBackend::Exact).unwrap();
    assert_eq!(out.runs.len(), 1);
    let cfg = config(&test, Format::Text, 1, BackendKind::Oracle);
    assert!(matches!(
        annotate(&test, None, &cfg, &OracleBackend::Exact),
        Err(PipelineError::Config(_))
    ));
}
