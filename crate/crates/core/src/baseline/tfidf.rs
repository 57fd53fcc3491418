use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::BaselineError;

/// Sparse vector as (feature index, weight) pairs in ascending index order.
pub type SparseVec = Vec<(usize, f64)>;

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    /// Term to feature index; indices follow sorted term order.
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub df: Vec<usize>,
    pub n_docs: usize,
}

/// Smoothed inverse document frequency.
pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

pub fn tfidf_fit<S: AsRef<str>>(docs: &[S]) -> Result<TfidfModel, BaselineError> {
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        let mut terms = tokenize(doc.as_ref());
        terms.sort();
        terms.dedup();
        for t in terms {
            *df.entry(t).or_default() += 1;
        }
    }
    if df.is_empty() {
        return Err(BaselineError::EmptyCorpus);
    }
    let n_docs = docs.len();
    let vocabulary = df.keys().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    let df: Vec<usize> = df.into_values().collect();
    let idf = df.iter().map(|&d| smoothed_idf(n_docs, d)).collect();
    Ok(TfidfModel {
        vocabulary,
        idf,
        df,
        n_docs,
    })
}

impl TfidfModel {
    pub fn n_features(&self) -> usize {
        self.idf.len()
    }

    /// Raw term counts times idf, L2-normalized. Unseen terms are dropped.
    pub fn transform(&self, doc: &str) -> SparseVec {
        let mut tf: BTreeMap<usize, usize> = BTreeMap::new();
        for t in tokenize(doc) {
            if let Some(&i) = self.vocabulary.get(&t) {
                *tf.entry(i).or_default() += 1;
            }
        }
        let mut v: SparseVec = tf
            .into_iter()
            .map(|(i, c)| (i, c as f64 * self.idf[i]))
            .collect();
        let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut v {
                *w /= norm;
            }
        }
        v
    }
}

/// Value of feature `i` in `v`, zero when absent.
pub fn sparse_get(v: &SparseVec, i: usize) -> f64 {
    match v.binary_search_by_key(&i, |(j, _)| *j) {
        Ok(p) => v[p].1,
        Err(_) => 0.0,
    }
}
