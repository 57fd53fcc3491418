use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forest::Hyperparams;
use super::{check_provenance, BaselineError, BaselineModel, LabeledDoc};
use crate::metrics::MicroScores;
use crate::par::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub hyperparams: Hyperparams,
    pub fold_f1: Vec<f64>,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best: Hyperparams,
    pub scores: Vec<GridScore>,
}

/// Fold id per document. Each label's documents are shuffled and dealt out
/// round-robin, continuing where the previous label stopped, so folds are
/// as stratified and as equal in size as the data allows.
pub fn stratified_folds(labels: &[&str], k: usize, seed: u64) -> Result<Vec<usize>, BaselineError> {
    if k < 2 {
        return Err(BaselineError::Argument("need at least 2 folds".into()));
    }
    if labels.len() < k {
        return Err(BaselineError::Argument(format!(
            "{} samples cannot fill {k} folds",
            labels.len()
        )));
    }
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    let mut next = 0;
    for idx in by_label.values_mut() {
        idx.shuffle(&mut rng);
        for &i in idx.iter() {
            folds[i] = next % k;
            next += 1;
        }
    }
    Ok(folds)
}

/// k-fold cross-validation over `grid`, picking the highest mean micro-F1.
/// Ties keep the earlier grid point.
pub fn cross_validate(
    docs: &[LabeledDoc],
    grid: &[Hyperparams],
    k: usize,
    seed: u64,
) -> Result<CvResult, BaselineError> {
    check_provenance(docs)?;
    if grid.is_empty() {
        return Err(BaselineError::Argument("empty hyperparameter grid".into()));
    }
    let labels: Vec<&str> = docs.iter().map(|d| d.label.as_str()).collect();
    let folds = stratified_folds(&labels, k, seed)?;
    let mut scores = Vec::with_capacity(grid.len());
    for hp in grid {
        let mut fold_f1 = Vec::with_capacity(k);
        for f in 0..k {
            let mut val = Vec::new();
            let mut fit = Vec::new();
            for (d, &g) in docs.iter().zip(&folds) {
                if g == f {
                    val.push(d);
                } else {
                    fit.push(d.clone());
                }
            }
            let model = BaselineModel::train(&fit, hp, derive_seed(seed, &format!("fold{f}")))?;
            let correct = val
                .iter()
                .filter(|d| model.predict(&d.text) == d.label)
                .count();
            fold_f1.push(MicroScores::from_counts(correct, val.len(), val.len()).f1);
        }
        let mean_f1 = fold_f1.iter().sum::<f64>() / k as f64;
        scores.push(GridScore {
            hyperparams: *hp,
            fold_f1,
            mean_f1,
        });
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.mean_f1 > scores[best].mean_f1 {
            best = i;
        }
    }
    Ok(CvResult {
        best: scores[best].hyperparams,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_balanced() {
        let labels: Vec<&str> = (0..30)
            .map(|i| if i % 3 == 0 { "a" } else { "b" })
            .collect();
        let f = stratified_folds(&labels, 3, 5).unwrap();
        for g in 0..3 {
            let n = f.iter().filter(|&&x| x == g).count();
            assert_eq!(n, 10);
            let na = f
                .iter()
                .zip(&labels)
                .filter(|(&x, &l)| x == g && l == "a")
                .count();
            assert!((3..=4).contains(&na));
        }
        assert_eq!(f, stratified_folds(&labels, 3, 5).unwrap());
    }

    #[test]
    fn too_few_samples() {
        assert!(stratified_folds(&["a", "b"], 3, 0).is_err());
        assert!(stratified_folds(&["a", "b", "c"], 1, 0).is_err());
    }
}
