#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tablesage::baseline::LabeledDoc;
use tablesage::dataset::{load_dataset, Dataset, Split};

pub fn fixture_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mini")
}

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn splits() -> (Dataset, Dataset) {
    (
        load_dataset(&fixture_root(), Split::Train).unwrap(),
        load_dataset(&fixture_root(), Split::Test).unwrap(),
    )
}

/// Documents over `n_classes` disjoint vocabularies of 15 words each, plus
/// a shared pool of filler words. `flip` is the share of labels replaced by
/// a random other class.
pub fn separable_docs(n_classes: usize, per_class: usize, flip: f64, seed: u64) -> Vec<LabeledDoc> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filler: Vec<String> = (0..10).map(|i| format!("common{i}")).collect();
    let mut docs = Vec::new();
    for c in 0..n_classes {
        let vocab: Vec<String> = (0..15).map(|i| format!("c{c}w{i}")).collect();
        for i in 0..per_class {
            let n = rng.random_range(4..9);
            let mut words: Vec<&String> = (0..n).map(|_| vocab.choose(&mut rng).unwrap()).collect();
            words.push(filler.choose(&mut rng).unwrap());
            let mut label = c;
            if rng.random::<f64>() < flip {
                label = (c + rng.random_range(1..n_classes)) % n_classes;
            }
            docs.push(LabeledDoc {
                table_id: format!("syn{c}_{i}"),
                column_index: 0,
                text: words
                    .iter()
                    .map(|w| w.as_str())
                    .collect::<Vec<_>>()
                    .join(" "),
                label: format!("Class{label}"),
                split: Split::Train,
            });
        }
    }
    docs
}

/// Every `every`-th document per class becomes a held-out test document.
pub fn holdout(docs: Vec<LabeledDoc>, every: usize) -> (Vec<LabeledDoc>, Vec<LabeledDoc>) {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, mut d) in docs.into_iter().enumerate() {
        if i % every == 0 {
            d.split = Split::Test;
            test.push(d);
        } else {
            train.push(d);
        }
    }
    (train, test)
}
