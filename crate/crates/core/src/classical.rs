//! K-nearest-neighbours and random-forest classifiers over embedding rows.
//!
//! Both operate on row-major `f64` feature matrices (`n` rows of `dim`
//! features). Every tie resolves toward the smallest index or class id.

use rand::Rng as _;
use thiserror::Error;

use crate::rng::{stream, Rng};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassicalError {
    #[error("feature dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k = {k} exceeds training-set size {n}")]
    KExceedsTrainingSize { k: usize, n: usize },
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
}

pub type Result<T> = std::result::Result<T, ClassicalError>;

/// Row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub data: Vec<f64>,
    pub dim: usize,
}

impl Features {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(ClassicalError::DimensionMismatch {
                expected: dim,
                found: data.len(),
            });
        }
        Ok(Self { data, dim })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn num_classes(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

/// Smallest class id among those with the highest count.
fn argmax_first(counts: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in counts.iter().enumerate() {
        if v > counts[best] {
            best = c;
        }
    }
    best
}

/// Uniform-weight KNN with Euclidean distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    k: usize,
    train: Features,
    labels: Vec<usize>,
    classes: usize,
}

impl Knn {
    pub const DEFAULT_K: usize = 5;

    pub fn fit(k: usize, train: Features, labels: Vec<usize>) -> Result<Self> {
        let n = train.rows();
        if labels.len() != n {
            return Err(ClassicalError::DimensionMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        if k == 0 || k > n {
            return Err(ClassicalError::KExceedsTrainingSize { k, n });
        }
        let classes = num_classes(&labels);
        Ok(Self {
            k,
            train,
            labels,
            classes,
        })
    }

    /// Indices of the `k` nearest training rows, nearest first; equal
    /// distances keep training order.
    pub fn neighbours(&self, query: &[f64]) -> Result<Vec<usize>> {
        if query.len() != self.train.dim {
            return Err(ClassicalError::DimensionMismatch {
                expected: self.train.dim,
                found: query.len(),
            });
        }
        let mut dist: Vec<(f64, usize)> = (0..self.train.rows())
            .map(|i| {
                let d = self
                    .train
                    .row(i)
                    .iter()
                    .zip(query)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                (d, i)
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(dist[..self.k].iter().map(|&(_, i)| i).collect())
    }

    /// Vote fractions per class for every query row.
    pub fn predict_proba(&self, queries: &Features) -> Result<Vec<Vec<f64>>> {
        (0..queries.rows())
            .map(|q| {
                let mut votes = vec![0.0; self.classes];
                for i in self.neighbours(queries.row(q))? {
                    votes[self.labels[i]] += 1.0;
                }
                votes.iter_mut().for_each(|v| *v /= self.k as f64);
                Ok(votes)
            })
            .collect()
    }

    pub fn predict(&self, queries: &Features) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(queries)?
            .iter()
            .map(|p| argmax_first(p))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf {
        counts: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// CART classification tree grown to purity with Gini impurity.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

fn gini(counts: &[f64], total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    1.0 - counts
        .iter()
        .map(|c| (c / total) * (c / total))
        .sum::<f64>()
}

struct Grower<'a> {
    x: &'a Features,
    y: &'a [usize],
    classes: usize,
    max_features: usize,
    rng: Rng,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<f64> {
        let mut c = vec![0.0; self.classes];
        for &i in idx {
            c[self.y[i]] += 1.0;
        }
        c
    }

    /// Best `(gain, feature, threshold)` over a random feature subset.
    /// Thresholds are midpoints between consecutive distinct values.
    fn best_split(&mut self, idx: &[usize], counts: &[f64]) -> Option<(f64, usize, f64)> {
        let n = idx.len() as f64;
        let parent = gini(counts, n);
        let features =
            rand::seq::index::sample(&mut self.rng, self.x.dim, self.max_features).into_vec();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
        for f in features {
            order.clear();
            order.extend(idx.iter().map(|&i| (self.x.row(i)[f], self.y[i])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = vec![0.0; self.classes];
            let mut right = counts.to_vec();
            for s in 1..order.len() {
                let (v, label) = order[s - 1];
                left[label] += 1.0;
                right[label] -= 1.0;
                if order[s].0 <= v {
                    continue;
                }
                let nl = s as f64;
                let nr = n - nl;
                let child = (nl * gini(&left, nl) + nr * gini(&right, nr)) / n;
                let gain = parent - child;
                let better = match best {
                    None => true,
                    Some((g, bf, _)) => gain > g || (gain == g && f < bf),
                };
                if better {
                    best = Some((gain, f, v + (order[s].0 - v) / 2.0));
                }
            }
        }
        best.filter(|&(gain, _, _)| gain > 0.0)
    }

    fn grow(&mut self, idx: Vec<usize>) -> usize {
        let counts = self.counts(&idx);
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        let split = if pure {
            None
        } else {
            self.best_split(&idx, &counts)
        };
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { counts });
        if let Some((_, feature, threshold)) = split {
            let (l, r): (Vec<usize>, Vec<usize>) = idx
                .into_iter()
                .partition(|&i| self.x.row(i)[feature] <= threshold);
            let left = self.grow(l);
            let right = self.grow(r);
            self.nodes[at] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
        }
        at
    }
}

impl DecisionTree {
    /// Grows a tree on the rows `idx` (repeats allowed), drawing
    /// `max_features` candidate features per node from `rng`.
    pub fn fit(
        x: &Features,
        y: &[usize],
        idx: Vec<usize>,
        classes: usize,
        max_features: usize,
        rng: Rng,
    ) -> Self {
        let mut g = Grower {
            x,
            y,
            classes,
            max_features: max_features.clamp(1, x.dim),
            rng,
            nodes: Vec::new(),
        };
        g.grow(idx);
        Self { nodes: g.nodes }
    }

    fn leaf(&self, row: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    /// Majority class of the leaf reached by `row`.
    pub fn predict_row(&self, row: &[f64]) -> usize {
        argmax_first(self.leaf(row))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

/// Bagged Gini trees with `√D` candidate features per split.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    dim: usize,
    classes: usize,
}

impl RandomForest {
    pub const DEFAULT_TREES: usize = 100;

    /// Tree `t` bootstraps and samples features from a stream seeded by
    /// `seed + t`, so the forest does not depend on fitting order.
    pub fn fit(x: &Features, y: &[usize], n_trees: usize, seed: u64) -> Result<Self> {
        let n = x.rows();
        if y.len() != n {
            return Err(ClassicalError::DimensionMismatch {
                expected: n,
                found: y.len(),
            });
        }
        if n < 2 {
            return Err(ClassicalError::DegenerateData(format!("{n} samples")));
        }
        let classes = num_classes(y);
        let max_features = ((x.dim as f64).sqrt() as usize).max(1);
        let trees = (0..n_trees.max(1))
            .map(|t| {
                let mut rng = stream(seed.wrapping_add(t as u64), "tree");
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                DecisionTree::fit(x, y, idx, classes, max_features, rng)
            })
            .collect();
        Ok(Self {
            trees,
            dim: x.dim,
            classes,
        })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Fraction of trees voting for each class.
    pub fn predict_proba(&self, queries: &Features) -> Result<Vec<Vec<f64>>> {
        if queries.dim != self.dim {
            return Err(ClassicalError::DimensionMismatch {
                expected: self.dim,
                found: queries.dim,
            });
        }
        Ok((0..queries.rows())
            .map(|q| {
                let mut votes = vec![0.0; self.classes];
                for t in &self.trees {
                    votes[t.predict_row(queries.row(q))] += 1.0;
                }
                votes.iter_mut().for_each(|v| *v /= self.trees.len() as f64);
                votes
            })
            .collect())
    }

    pub fn predict(&self, queries: &Features) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(queries)?
            .iter()
            .map(|p| argmax_first(p))
            .collect())
    }
}
