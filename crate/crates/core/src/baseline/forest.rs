use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tfidf::{sparse_get, SparseVec};
use super::BaselineError;
use crate::par::{default_threads, derive_seed, map_ordered};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features drawn per split; `None` means ceil(sqrt(d)).
    pub features_per_split: Option<usize>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
        }
    }
}

impl Hyperparams {
    /// n_trees {10, 50, 100} x max_depth {unbounded, 10, 20} x min_samples_leaf {1, 3}.
    pub fn default_grid() -> Vec<Hyperparams> {
        let mut grid = Vec::new();
        for n_trees in [10, 50, 100] {
            for max_depth in [None, Some(10), Some(20)] {
                for min_samples_leaf in [1, 3] {
                    grid.push(Hyperparams {
                        n_trees,
                        max_depth,
                        min_samples_leaf,
                        features_per_split: None,
                    });
                }
            }
        }
        grid
    }

    fn validate(&self) -> Result<(), BaselineError> {
        if self.n_trees == 0 {
            return Err(BaselineError::Argument("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(BaselineError::Argument(
                "min_samples_leaf must be at least 1".into(),
            ));
        }
        if self.features_per_split == Some(0) {
            return Err(BaselineError::Argument(
                "features_per_split must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        impurity: f64,
        n_samples: usize,
    },
    Leaf {
        /// Per-class sample counts.
        counts: Vec<usize>,
        impurity: f64,
        n_samples: usize,
    },
}

impl Node {
    pub fn impurity(&self) -> f64 {
        match self {
            Node::Split { impurity, .. } | Node::Leaf { impurity, .. } => *impurity,
        }
    }

    pub fn n_samples(&self) -> usize {
        match self {
            Node::Split { n_samples, .. } | Node::Leaf { n_samples, .. } => *n_samples,
        }
    }
}

/// Nodes stored in an arena; the root is `nodes[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

fn argmax(counts: &[usize]) -> usize {
    // first maximum wins, so ties go to the lowest class id
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

impl Tree {
    pub fn leaf_for(&self, x: &SparseVec) -> &Node {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if sparse_get(x, *feature) <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                leaf => return leaf,
            }
        }
    }

    pub fn predict_class(&self, x: &SparseVec) -> usize {
        match self.leaf_for(x) {
            Node::Leaf { counts, .. } => argmax(counts),
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub hyperparams: Hyperparams,
    /// Class id to label.
    pub labels: Vec<String>,
    pub n_features: usize,
}

impl ForestModel {
    pub fn label_index(&self) -> BTreeMap<&str, usize> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect()
    }

    /// Majority vote over trees, ties to the lowest class id.
    pub fn predict_class(&self, x: &SparseVec) -> usize {
        let mut votes = vec![0; self.labels.len()];
        for t in &self.trees {
            votes[t.predict_class(x)] += 1;
        }
        argmax(&votes)
    }

    pub fn predict(&self, x: &SparseVec) -> &str {
        &self.labels[self.predict_class(x)]
    }
}

pub fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

struct Builder<'a> {
    x: &'a [SparseVec],
    y: &'a [usize],
    n_classes: usize,
    hp: &'a Hyperparams,
    m: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn counts(&self, samples: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &s in samples {
            c[self.y[s]] += 1;
        }
        c
    }

    fn best_on(&self, feature: usize, samples: &[usize], parent: f64) -> Option<SplitChoice> {
        let mut vals: Vec<(f64, usize)> = samples
            .iter()
            .map(|&s| (sparse_get(&self.x[s], feature), self.y[s]))
            .collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = vals.len();
        let mut left = vec![0; self.n_classes];
        let mut right = self.counts(samples);
        let mut best: Option<SplitChoice> = None;
        for i in 0..n - 1 {
            left[vals[i].1] += 1;
            right[vals[i].1] -= 1;
            if vals[i].0 == vals[i + 1].0 {
                continue;
            }
            let nl = i + 1;
            let nr = n - nl;
            if nl < self.hp.min_samples_leaf || nr < self.hp.min_samples_leaf {
                continue;
            }
            let weighted = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
            let decrease = parent - weighted;
            if decrease > 1e-12 && best.as_ref().is_none_or(|b| decrease > b.decrease) {
                best = Some(SplitChoice {
                    feature,
                    threshold: (vals[i].0 + vals[i + 1].0) / 2.0,
                    decrease,
                });
            }
        }
        best
    }

    fn best_among(
        &self,
        features: &[usize],
        samples: &[usize],
        parent: f64,
    ) -> Option<SplitChoice> {
        let mut best: Option<SplitChoice> = None;
        for &f in features {
            if let Some(c) = self.best_on(f, samples, parent) {
                if best.as_ref().is_none_or(|b| c.decrease > b.decrease) {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn leaf(&mut self, counts: Vec<usize>, impurity: f64, n: usize) -> usize {
        self.nodes.push(Node::Leaf {
            counts,
            impurity,
            n_samples: n,
        });
        self.nodes.len() - 1
    }

    fn grow(&mut self, samples: Vec<usize>, depth: usize) -> usize {
        let n = samples.len();
        let counts = self.counts(&samples);
        let impurity = gini(&counts, n);
        if impurity == 0.0
            || self.hp.max_depth.is_some_and(|d| depth >= d)
            || n < 2 * self.hp.min_samples_leaf
        {
            return self.leaf(counts, impurity, n);
        }
        // features that are zero for every sample cannot separate anything
        let candidates: Vec<usize> = samples
            .iter()
            .flat_map(|&s| self.x[s].iter().map(|(f, _)| *f))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if candidates.is_empty() {
            return self.leaf(counts, impurity, n);
        }
        let m = self.m.min(candidates.len());
        let picked: Vec<usize> = rand::seq::index::sample(&mut self.rng, candidates.len(), m)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        let mut choice = self.best_among(&picked, &samples, impurity);
        if choice.is_none() {
            let rest: Vec<usize> = candidates
                .into_iter()
                .filter(|f| !picked.contains(f))
                .collect();
            choice = self.best_among(&rest, &samples, impurity);
        }
        let Some(c) = choice else {
            return self.leaf(counts, impurity, n);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = samples
            .into_iter()
            .partition(|&s| sparse_get(&self.x[s], c.feature) <= c.threshold);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            counts: Vec::new(),
            impurity,
            n_samples: n,
        });
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: c.feature,
            threshold: c.threshold,
            left,
            right,
            impurity,
            n_samples: n,
        };
        id
    }
}

fn train_tree(
    x: &[SparseVec],
    y: &[usize],
    n_classes: usize,
    n_features: usize,
    hp: &Hyperparams,
    seed: u64,
) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let m = hp
        .features_per_split
        .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
        .max(1);
    let mut b = Builder {
        x,
        y,
        n_classes,
        hp,
        m,
        rng,
        nodes: Vec::new(),
    };
    b.grow(bootstrap, 0);
    Tree { nodes: b.nodes }
}

pub fn forest_train(
    x: &[SparseVec],
    y: &[String],
    hp: &Hyperparams,
    seed: u64,
) -> Result<ForestModel, BaselineError> {
    forest_train_with(x, y, hp, seed, default_threads())
}

/// Same as [`forest_train`] with an explicit worker count. Output does not
/// depend on `threads`.
pub fn forest_train_with(
    x: &[SparseVec],
    y: &[String],
    hp: &Hyperparams,
    seed: u64,
    threads: usize,
) -> Result<ForestModel, BaselineError> {
    hp.validate()?;
    if x.len() != y.len() {
        return Err(BaselineError::Argument(format!(
            "{} feature vectors for {} labels",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(BaselineError::Argument(
            "need at least 2 training samples".into(),
        ));
    }
    let labels: Vec<String> = y
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let ys: Vec<usize> = y.iter().map(|l| index[l.as_str()]).collect();
    let n_features = x
        .iter()
        .flat_map(|v| v.iter().map(|(f, _)| f + 1))
        .max()
        .unwrap_or(0);
    let ids: Vec<usize> = (0..hp.n_trees).collect();
    let trees = map_ordered(&ids, threads, |_, &t| {
        train_tree(
            x,
            &ys,
            labels.len(),
            n_features,
            hp,
            derive_seed(seed, &format!("tree{t}")),
        )
    });
    Ok(ForestModel {
        trees,
        hyperparams: *hp,
        labels,
        n_features,
    })
}
