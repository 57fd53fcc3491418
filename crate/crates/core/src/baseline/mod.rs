//! Supervised baseline: TF-IDF features over serialized columns fed to a
//! random forest, with cross-validated hyperparameters.
//!
//! Documents are the same first-rows column serialization the prompts use.

pub mod cv;
pub mod forest;
pub mod tfidf;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Split};
use crate::metrics::Record;
use crate::parse::{AnnotationOutcome, OutcomeKind};
use crate::pipeline::RunResult;
use crate::serialize::{serialize_column, Format, SerializeOptions};

pub use cv::{cross_validate, CvResult};
pub use forest::{forest_train, ForestModel, Hyperparams};
pub use tfidf::{tfidf_fit, SparseVec, TfidfModel};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("corpus has no tokens")]
    EmptyCorpus,
    #[error("{0}")]
    Argument(String),
    #[error("document {0} comes from the test split")]
    Provenance(String),
    #[error("model file {path}: {message}")]
    Model { path: String, message: String },
}

/// One training or evaluation column with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDoc {
    pub table_id: String,
    pub column_index: usize,
    pub text: String,
    pub label: String,
    pub split: Split,
}

/// Every annotated, non-empty column of `dataset` as a document.
pub fn column_docs(dataset: &Dataset, n_rows: usize, opts: &SerializeOptions) -> Vec<LabeledDoc> {
    let mut docs = Vec::new();
    for t in &dataset.tables {
        for c in &t.columns {
            let Some(label) = &c.gold_label else { continue };
            let Ok(input) = serialize_column(c, Format::Column, n_rows, opts) else {
                continue;
            };
            docs.push(LabeledDoc {
                table_id: t.table_id.clone(),
                column_index: c.index,
                text: input.payload,
                label: label.clone(),
                split: dataset.split,
            });
        }
    }
    docs
}

/// A seeded random subset of `n` documents, in original order.
pub fn subsample(docs: &[LabeledDoc], n: usize, seed: u64) -> Vec<LabeledDoc> {
    if n >= docs.len() {
        return docs.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, docs.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| docs[i].clone()).collect()
}

pub(crate) fn check_provenance(docs: &[LabeledDoc]) -> Result<(), BaselineError> {
    match docs.iter().find(|d| d.split != Split::Train) {
        Some(d) => Err(BaselineError::Provenance(format!(
            "{}:{}",
            d.table_id, d.column_index
        ))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub tfidf: TfidfModel,
    pub forest: ForestModel,
}

impl BaselineModel {
    /// Fits TF-IDF and the forest on training documents only.
    pub fn train(docs: &[LabeledDoc], hp: &Hyperparams, seed: u64) -> Result<Self, BaselineError> {
        check_provenance(docs)?;
        let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
        let tfidf = tfidf_fit(&texts)?;
        let x: Vec<SparseVec> = texts.iter().map(|t| tfidf.transform(t)).collect();
        let y: Vec<String> = docs.iter().map(|d| d.label.clone()).collect();
        let forest = forest_train(&x, &y, hp, seed)?;
        Ok(BaselineModel { tfidf, forest })
    }

    pub fn predict(&self, text: &str) -> &str {
        self.forest.predict(&self.tfidf.transform(text))
    }

    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        let err = |message: String| BaselineError::Model {
            path: path.display().to_string(),
            message,
        };
        let text = serde_json::to_string(self).map_err(|e| err(e.to_string()))?;
        fs::write(path, text).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let err = |message: String| BaselineError::Model {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    /// Scores the model on `docs` as one run, in the pipeline's record shape.
    pub fn evaluate(&self, docs: &[LabeledDoc], seed: u64) -> RunResult {
        let mut records: Vec<Record> = docs
            .iter()
            .map(|d| {
                let label = self.predict(&d.text).to_string();
                Record {
                    table_id: d.table_id.clone(),
                    column_index: d.column_index,
                    gold: d.label.clone(),
                    outcome: AnnotationOutcome {
                        kind: OutcomeKind::Matched,
                        raw: label.clone(),
                        label: Some(label),
                    },
                    error: None,
                }
            })
            .collect();
        records.sort_by(|a, b| (&a.table_id, a.column_index).cmp(&(&b.table_id, b.column_index)));
        RunResult {
            run: 0,
            seed,
            records,
            domains: Vec::new(),
            n_calls: 0,
            n_mismatched: 0,
            transcript_span: (0, 0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str, label: &str, split: Split) -> LabeledDoc {
        LabeledDoc {
            table_id: "t".into(),
            column_index: 0,
            text: text.into(),
            label: label.into(),
            split,
        }
    }

    #[test]
    fn refuses_test_documents() {
        let docs = vec![doc("a", "A", Split::Train), doc("b", "B", Split::Test)];
        assert!(matches!(
            BaselineModel::train(&docs, &Hyperparams::default(), 0),
            Err(BaselineError::Provenance(_))
        ));
    }

    #[test]
    fn save_load() {
        let docs = vec![
            doc("red apple", "Fruit", Split::Train),
            doc("green pear", "Fruit", Split::Train),
            doc("oak tree", "Plant", Split::Train),
            doc("pine tree", "Plant", Split::Train),
        ];
        let hp = Hyperparams {
            n_trees: 5,
            ..Default::default()
        };
        let m = BaselineModel::train(&docs, &hp, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        m.save(&p).unwrap();
        let back = BaselineModel::load(&p).unwrap();
        for d in &docs {
            assert_eq!(back.predict(&d.text), m.predict(&d.text));
        }
    }

    #[test]
    fn subsample_is_seeded() {
        let docs: Vec<LabeledDoc> = (0..10)
            .map(|i| doc(&i.to_string(), "A", Split::Train))
            .collect();
        assert_eq!(subsample(&docs, 4, 1), subsample(&docs, 4, 1));
        assert_eq!(subsample(&docs, 4, 1).len(), 4);
        assert_eq!(subsample(&docs, 40, 1).len(), 10);
    }
}
