mod common;

use std::collections::HashMap;
use std::time::Instant;

use tablesage::baseline::forest::{forest_train_with, gini, Node};
use tablesage::baseline::tfidf::tokenize;
use tablesage::baseline::{
    column_docs, cross_validate, tfidf_fit, BaselineError, BaselineModel, Hyperparams,
};
use tablesage::dataset::Split;

use common::{holdout, separable_docs, splits};

/// Straight from the formula, with no shared code beyond the tokenizer.
fn oracle_weights(docs: &[&str], doc: &str) -> HashMap<String, f64> {
    let n = docs.len() as f64;
    let mut df: HashMap<String, usize> = HashMap::new();
    for d in docs {
        let mut seen = tokenize(d);
        seen.sort();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut w: HashMap<String, f64> = HashMap::new();
    for t in tokenize(doc) {
        if let Some(&d) = df.get(&t) {
            *w.entry(t).or_default() += ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0;
        }
    }
    let norm = w.values().map(|x| x * x).sum::<f64>().sqrt();
    w.values_mut().for_each(|x| *x /= norm);
    w
}

const HAND: [&str; 4] = [
    "Friends Pizza Friends Pizza 2525",
    "Cash Visa MasterCard",
    "Cash cash 7:30 AM",
    "Pizza Hut AM 11:00",
];

#[test]
fn tfidf_matches_formula() {
    let m = tfidf_fit(&HAND).unwrap();
    for doc in HAND.iter().chain(&["pizza visa unknown"]) {
        let want = oracle_weights(&HAND, doc);
        let got = m.transform(doc);
        assert_eq!(got.len(), want.len());
        for (term, i) in &m.vocabulary {
            let g = got.iter().find(|(j, _)| j == i).map_or(0.0, |(_, w)| *w);
            let w = want.get(term).copied().unwrap_or(0.0);
            assert!((g - w).abs() < 1e-9, "{term}: {g} vs {w}");
        }
    }
}

#[test]
fn tfidf_frozen_vector() {
    // computed independently from the formula
    let m = tfidf_fit(&HAND).unwrap();
    let v = m.transform(HAND[0]);
    let want = [
        (2, 0.36548060601001114),
        (7, 0.7309612120200223),
        (10, 0.5762982154690184),
    ];
    assert_eq!(v.len(), 3);
    for ((i, w), (j, x)) in v.iter().zip(want) {
        assert_eq!(*i, j);
        assert!((w - x).abs() < 1e-12);
    }
}

#[test]
fn tfidf_norms_on_fixture() {
    let (train, _) = splits();
    let docs = column_docs(&train, 5, &Default::default());
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let m = tfidf_fit(&texts).unwrap();
    assert!(m.idf.iter().all(|&x| x > 0.0));
    for t in &texts {
        let v = m.transform(t);
        assert!(v.iter().all(|(_, w)| *w >= 0.0));
        let norm: f64 = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12);
    }
}

fn fit(docs: &[tablesage::baseline::LabeledDoc], hp: &Hyperparams, seed: u64) -> BaselineModel {
    BaselineModel::train(docs, hp, seed).unwrap()
}

#[test]
fn two_class_separable_training_accuracy() {
    let docs = separable_docs(2, 50, 0.0, 1);
    let hp = Hyperparams {
        n_trees: 10,
        ..Default::default()
    };
    let m = fit(&docs, &hp, 4);
    assert!(docs.iter().all(|d| m.predict(&d.text) == d.label));
}

#[test]
fn seeded_determinism_and_thread_independence() {
    let docs = separable_docs(3, 20, 0.1, 2);
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let tf = tfidf_fit(&texts).unwrap();
    let x: Vec<_> = texts.iter().map(|t| tf.transform(t)).collect();
    let y: Vec<String> = docs.iter().map(|d| d.label.clone()).collect();
    let hp = Hyperparams {
        n_trees: 20,
        ..Default::default()
    };
    let a = forest_train_with(&x, &y, &hp, 5, 1).unwrap();
    let b = forest_train_with(&x, &y, &hp, 5, 4).unwrap();
    assert_eq!(a, b);
    let c = forest_train_with(&x, &y, &hp, 6, 1).unwrap();
    assert_ne!(a.trees, c.trees);
}

#[test]
fn splits_never_increase_impurity() {
    let docs = separable_docs(4, 25, 0.2, 3);
    let m = fit(
        &docs,
        &Hyperparams {
            n_trees: 10,
            ..Default::default()
        },
        0,
    );
    for t in &m.forest.trees {
        for n in &t.nodes {
            if let Node::Split {
                left,
                right,
                impurity,
                n_samples,
                ..
            } = n
            {
                let (l, r) = (&t.nodes[*left], &t.nodes[*right]);
                assert_eq!(l.n_samples() + r.n_samples(), *n_samples);
                let weighted = (l.n_samples() as f64 * l.impurity()
                    + r.n_samples() as f64 * r.impurity())
                    / *n_samples as f64;
                assert!(weighted <= *impurity + 1e-12);
            }
            if let Node::Leaf {
                counts,
                impurity,
                n_samples,
            } = n
            {
                assert!((gini(counts, *n_samples) - impurity).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn max_depth_is_respected() {
    let docs = separable_docs(4, 25, 0.3, 3);
    let hp = Hyperparams {
        n_trees: 5,
        max_depth: Some(2),
        ..Default::default()
    };
    let m = fit(&docs, &hp, 0);
    assert!(m.forest.trees.iter().all(|t| t.depth() <= 2));
}

#[test]
fn cross_validation_grid_of_one() {
    let docs = separable_docs(2, 15, 0.0, 4);
    let hp = Hyperparams {
        n_trees: 3,
        ..Default::default()
    };
    let cv = cross_validate(&docs, &[hp], 3, 0).unwrap();
    assert_eq!(cv.best, hp);
    assert_eq!(cv.scores[0].fold_f1.len(), 3);
}

#[test]
fn cross_validation_prefers_larger_forest_under_label_noise() {
    let docs = separable_docs(4, 40, 0.25, 11);
    let one = Hyperparams {
        n_trees: 1,
        ..Default::default()
    };
    let hundred = Hyperparams {
        n_trees: 100,
        ..Default::default()
    };
    let cv = cross_validate(&docs, &[one, hundred], 3, 0).unwrap();
    assert_eq!(cv.best, hundred, "{:?}", cv.scores);
    assert!(cv.scores[1].mean_f1 > cv.scores[0].mean_f1);
}

#[test]
fn cross_validation_argument_errors() {
    let docs = separable_docs(2, 1, 0.0, 0);
    assert!(matches!(
        cross_validate(&docs, &[Hyperparams::default()], 3, 0),
        Err(BaselineError::Argument(_))
    ));
    let mut docs = separable_docs(2, 10, 0.0, 0);
    docs[3].split = Split::Test;
    assert!(matches!(
        cross_validate(&docs, &[Hyperparams::default()], 3, 0),
        Err(BaselineError::Provenance(_))
    ));
}

#[test]
fn four_class_holdout_after_cross_validation() {
    let start = Instant::now();
    let (train, test) = holdout(separable_docs(4, 50, 0.0, 21), 4);
    assert_eq!(train.len() + test.len(), 200);
    let cv = cross_validate(&train, &Hyperparams::default_grid(), 3, 0).unwrap();
    let m = fit(&train, &cv.best, 0);
    let train_acc = train
        .iter()
        .filter(|d| m.predict(&d.text) == d.label)
        .count();
    let test_acc = test
        .iter()
        .filter(|d| m.predict(&d.text) == d.label)
        .count() as f64
        / test.len() as f64;
    assert_eq!(train_acc, train.len());
    assert!(test_acc >= 0.95, "holdout accuracy {test_acc}");
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn fixture_baseline_runs() {
    let (train, test) = splits();
    let docs = column_docs(&train, 5, &Default::default());
    assert_eq!(docs.len(), train.n_annotated_columns());
    let m = fit(
        &docs,
        &Hyperparams {
            n_trees: 30,
            ..Default::default()
        },
        0,
    );
    let test_docs = column_docs(&test, 5, &Default::default());
    let run = m.evaluate(&test_docs, 0);
    assert_eq!(run.records.len(), test.n_annotated_columns());
    let s = tablesage::metrics::compute_micro(&run.records).unwrap();
    assert!(s.f1 > 0.3, "{s:?}");
}
