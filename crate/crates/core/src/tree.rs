//! CART classification trees (Gini impurity) and bagged random forests.
//!
//! Trees are grown on an explicit column list, so a tree trained for a
//! subspace only ever reads the features of that subspace. Split thresholds
//! are midpoints between consecutive distinct training values.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng::child_rng;

/// Training data as seen by a learner: row-major features plus labels.
#[derive(Clone, Copy, Debug)]
pub struct TrainView<'a> {
    pub features: &'a [f64],
    pub n_features: usize,
    pub labels: &'a [usize],
    pub n_labels: usize,
}

impl TrainView<'_> {
    #[inline]
    fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[row * self.n_features + feature]
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaxFeatures {
    Sqrt,
    #[serde(alias = "2sqrt")]
    TwoSqrt,
    All,
}

impl MaxFeatures {
    /// Candidate features per split for a subspace of `k` features.
    pub fn resolve(self, k: usize) -> usize {
        let root = (k as f64).sqrt();
        let m = match self {
            MaxFeatures::Sqrt => root.floor() as usize,
            MaxFeatures::TwoSqrt => (2.0 * root).floor() as usize,
            MaxFeatures::All => k,
        };
        m.clamp(1, k.max(1))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub max_features: usize,
    pub min_samples_split: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "kebab-case")]
enum Node {
    Leaf {
        label: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

fn majority(counts: &[usize]) -> usize {
    // lowest label wins ties
    counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |(i, _)| i)
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct Best {
    feature: usize,
    threshold: f64,
    score: f64,
}

struct Builder<'a> {
    data: TrainView<'a>,
    columns: &'a [usize],
    params: TreeParams,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
    order: Vec<(f64, usize, usize)>,
}

impl Builder<'_> {
    fn counts(&self, rows: &[(usize, usize)]) -> Vec<usize> {
        let mut c = vec![0; self.data.n_labels];
        for &(r, w) in rows {
            c[self.data.labels[r]] += w;
        }
        c
    }

    fn best_split_on(&mut self, rows: &[(usize, usize)], feature: usize, parent: &[usize], best: &mut Option<Best>) {
        self.order.clear();
        self.order
            .extend(rows.iter().map(|&(r, w)| (self.data.value(r, feature), self.data.labels[r], w)));
        self.order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let total: usize = parent.iter().sum();
        let mut left = vec![0usize; self.data.n_labels];
        let mut right = parent.to_vec();
        let mut nl = 0;
        // weighted child impurity, lower is better
        for i in 0..self.order.len() - 1 {
            let (v, y, w) = self.order[i];
            left[y] += w;
            right[y] -= w;
            nl += w;
            let next = self.order[i + 1].0;
            if next <= v {
                continue;
            }
            let nr = total - nl;
            let score = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / total as f64;
            if best.as_ref().is_none_or(|b| score < b.score - 1e-12) {
                let mut threshold = 0.5 * (v + next);
                if threshold >= next {
                    threshold = v;
                }
                *best = Some(Best {
                    feature,
                    threshold,
                    score,
                });
            }
        }
    }

    /// `rows` holds distinct training rows with their multiplicities.
    fn grow(&mut self, rows: Vec<(usize, usize)>, depth: usize) -> usize {
        let counts = self.counts(&rows);
        let weight: usize = counts.iter().sum();
        let label = majority(&counts);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { label });

        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_done = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_done || weight < self.params.min_samples_split.max(2) || rows.len() < 2 {
            return id;
        }

        let parent_impurity = gini(&counts, weight);
        let mut candidates = self.columns.to_vec();
        candidates.shuffle(&mut self.rng);
        let mut best: Option<Best> = None;
        // keep drawing past max_features until some valid split turns up
        for (tried, &f) in candidates.iter().enumerate() {
            if tried >= self.params.max_features && best.is_some() {
                break;
            }
            self.best_split_on(&rows, f, &counts, &mut best);
        }
        let Some(best) = best else { return id };
        if best.score >= parent_impurity {
            return id;
        }

        let (left_rows, right_rows): (Vec<_>, Vec<_>) = rows
            .into_iter()
            .partition(|&(r, _)| self.data.value(r, best.feature) <= best.threshold);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }
}

impl DecisionTree {
    /// Fits a tree on `rows` of `data`, considering only `columns`. Repeated
    /// rows count with their multiplicity.
    pub fn fit(data: TrainView<'_>, mut rows: Vec<usize>, columns: &[usize], params: TreeParams, rng: ChaCha8Rng) -> Self {
        let mut b = Builder {
            data,
            columns,
            params,
            nodes: Vec::new(),
            rng,
            order: Vec::with_capacity(rows.len()),
        };
        if rows.is_empty() {
            return Self {
                nodes: vec![Node::Leaf { label: 0 }],
            };
        }
        rows.sort_unstable();
        let mut weighted: Vec<(usize, usize)> = Vec::with_capacity(rows.len());
        for r in rows {
            match weighted.last_mut() {
                Some((last, w)) if *last == r => *w += 1,
                _ => weighted.push((r, 1)),
            }
        }
        b.grow(weighted, 0);
        Self { nodes: b.nodes }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { label } => return *label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Features the tree actually tests.
    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

/// Bagged trees, each on a bootstrap sample with per-split feature sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    n_labels: usize,
}

impl RandomForest {
    pub fn fit(data: TrainView<'_>, columns: &[usize], n_trees: usize, params: TreeParams, seed: u64) -> Self {
        let m = data.rows();
        let trees = (0..n_trees.max(1))
            .map(|t| {
                let mut rng = child_rng(seed, t as u64);
                let rows: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
                DecisionTree::fit(data, rows, columns, params, rng)
            })
            .collect();
        Self {
            trees,
            n_labels: data.n_labels,
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut votes = vec![0usize; self.n_labels.max(1)];
        for t in &self.trees {
            votes[t.predict(x)] += 1;
        }
        majority(&votes)
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }
}
