//! Majority-vote ensembles with one basic hypothesis per subspace.
//!
//! Prediction either evaluates every hypothesis or samples them without
//! replacement and stops once the unseen votes are unlikely to overturn the
//! current leader.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{majority_label, Dataset};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::subspaces::SubspaceFamily;
use crate::tree::{DecisionTree, MaxFeatures, RandomForest, TreeParams};

pub const MODEL_VERSION: u32 = 1;

/// Per-label vote counts of an ensemble on one instance.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoteVector(Vec<usize>);

impl VoteVector {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0; d])
    }

    pub fn from_counts(counts: Vec<usize>) -> Self {
        Self(counts)
    }

    pub fn counts(&self) -> &[usize] {
        &self.0
    }

    pub fn n_labels(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn add(&mut self, y: usize) {
        self.0[y] += 1;
    }

    /// Labels holding the maximum count, ascending.
    pub fn leaders(&self) -> Vec<usize> {
        let top = self.0.iter().copied().max().unwrap_or(0);
        (0..self.0.len()).filter(|&y| self.0[y] == top).collect()
    }
}

/// Picks uniformly among the tied maxima of `s`.
pub fn break_tie(s: &VoteVector, rng: &mut impl Rng) -> usize {
    let leaders = s.leaders();
    match leaders.len() {
        0 => 0,
        1 => leaders[0],
        n => leaders[rng.random_range(0..n)],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    DecisionTree,
    RandomForest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseLearnerConfig {
    pub kind: LearnerKind,
    pub trees: usize,
    pub max_features: MaxFeatures,
    #[serde(default)]
    pub max_depth: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for BaseLearnerConfig {
    fn default() -> Self {
        Self {
            kind: LearnerKind::RandomForest,
            trees: 20,
            max_features: MaxFeatures::Sqrt,
            max_depth: None,
            seed: 0,
        }
    }
}

impl BaseLearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(invalid("a forest needs at least one tree"));
        }
        if self.max_depth == Some(0) {
            return Err(invalid("max_depth must be positive when given"));
        }
        Ok(())
    }
}

/// One trained basic hypothesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Classifier {
    Tree { tree: DecisionTree },
    Forest { forest: RandomForest },
    /// Used when every column of the subspace is constant in training.
    Constant { label: usize },
}

impl Classifier {
    /// Trains on `columns` of `train` only.
    pub fn fit(train: &Dataset, columns: &[usize], config: &BaseLearnerConfig, seed: u64) -> Self {
        let view = train.view();
        let informative = columns.iter().any(|&f| {
            let first = train.row(0)[f];
            (1..train.rows()).any(|i| train.row(i)[f] != first)
        });
        if !informative {
            return Classifier::Constant {
                label: majority_label(train),
            };
        }
        let params = TreeParams {
            max_depth: config.max_depth,
            max_features: config.max_features.resolve(columns.len()),
            min_samples_split: 2,
        };
        match config.kind {
            LearnerKind::DecisionTree => Classifier::Tree {
                tree: DecisionTree::fit(view, (0..train.rows()).collect(), columns, params, rng_from(seed)),
            },
            LearnerKind::RandomForest => Classifier::Forest {
                forest: RandomForest::fit(view, columns, config.trees, params, seed),
            },
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        match self {
            Classifier::Tree { tree } => tree.predict(x),
            Classifier::Forest { forest } => forest.predict(x),
            Classifier::Constant { label } => *label,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VotingEnsemble {
    pub family: SubspaceFamily,
    pub config: BaseLearnerConfig,
    pub hypotheses: Vec<Classifier>,
    pub n_labels: usize,
    pub n_features: usize,
    #[serde(default)]
    pub label_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    /// Free-form provenance such as config hashes and seeds.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
    ensemble: VotingEnsemble,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

/// Trains one hypothesis per subspace of `family`, in parallel. Hypothesis
/// `i` is seeded from `(config.seed, i)` so the result does not depend on
/// scheduling.
pub fn train(train: &Dataset, family: &SubspaceFamily, config: &BaseLearnerConfig) -> Result<VotingEnsemble> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let real = family.real_feature_count();
    if train.n_features() < real {
        return Err(Error::DimensionMismatch {
            expected: real,
            got: train.n_features(),
        });
    }
    let columns: Vec<Vec<usize>> = (0..family.h()).map(|i| family.learnable(i)).collect();
    if let Some(i) = columns.iter().position(Vec::is_empty) {
        return Err(Error::NoUsableFeatures(i));
    }
    if let Some(&f) = columns.iter().flatten().find(|&&f| f >= train.n_features()) {
        return Err(invalid(format!(
            "subspace feature {f} is outside the dataset's {} features",
            train.n_features()
        )));
    }
    let hypotheses = columns
        .par_iter()
        .enumerate()
        .map(|(i, cols)| Classifier::fit(train, cols, config, derive_seed(config.seed, i as u64)))
        .collect();
    Ok(VotingEnsemble {
        family: family.clone(),
        config: config.clone(),
        hypotheses,
        n_labels: train.n_labels(),
        n_features: train.n_features(),
        label_names: train.label_names.clone(),
    })
}

impl VotingEnsemble {
    pub fn h(&self) -> usize {
        self.hypotheses.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Prediction of hypothesis `i` alone.
    pub fn predict_one(&self, i: usize, x: &[f64]) -> usize {
        self.hypotheses[i].predict(x)
    }

    pub fn vote_counts(&self, x: &[f64]) -> Result<VoteVector> {
        self.check(x)?;
        let mut s = VoteVector::zeros(self.n_labels);
        for h in &self.hypotheses {
            s.add(h.predict(x));
        }
        Ok(s)
    }

    /// Majority label; ties are broken uniformly using `tie_seed`.
    pub fn predict_majority(&self, x: &[f64], tie_seed: u64) -> Result<usize> {
        let s = self.vote_counts(x)?;
        Ok(break_tie(&s, &mut rng_from(tie_seed)))
    }

    /// Vote vectors for every row of `data`, computed in parallel.
    pub fn vote_matrix(&self, data: &Dataset) -> Result<Vec<VoteVector>> {
        if data.n_features() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: data.n_features(),
            });
        }
        Ok((0..data.rows())
            .into_par_iter()
            .map(|i| {
                let mut s = VoteVector::zeros(self.n_labels);
                for h in &self.hypotheses {
                    s.add(h.predict(data.row(i)));
                }
                s
            })
            .collect())
    }

    /// Sequential prediction with one hypothesis per step.
    pub fn predict_sequential(&self, x: &[f64], confidence: f64, seed: u64) -> Result<(usize, usize)> {
        let plan = SequentialPlan::new(self.h(), self.n_labels, confidence, 1)?;
        self.predict_with_plan(x, &plan, seed)
    }

    /// Sequential prediction with a prepared plan, which caches its stopping
    /// thresholds and can be reused across instances.
    pub fn predict_with_plan(&self, x: &[f64], plan: &SequentialPlan, seed: u64) -> Result<(usize, usize)> {
        self.check(x)?;
        if plan.h != self.h() || plan.n_labels != self.n_labels {
            return Err(invalid("sequential plan was built for a different ensemble"));
        }
        if plan.is_exhaustive() {
            let label = self.predict_majority(x, seed)?;
            return Ok((label, self.h()));
        }
        Ok(plan.run(|i| self.predict_one(i, x), seed))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.save_with_metadata(path, &BTreeMap::new())
    }

    pub fn save_with_metadata(&self, path: impl AsRef<Path>, metadata: &BTreeMap<String, String>) -> Result<()> {
        fs::write(path, self.to_json_with_metadata(metadata)?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.to_json_with_metadata(&BTreeMap::new())
    }

    pub fn to_json_with_metadata(&self, metadata: &BTreeMap<String, String>) -> Result<String> {
        let file = ModelFile {
            version: MODEL_VERSION,
            metadata: metadata.clone(),
            ensemble: self.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str(s)?;
        if probe.version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion(probe.version));
        }
        let file: ModelFile = serde_json::from_str(s)?;
        if file.ensemble.hypotheses.len() != file.ensemble.family.h() {
            return Err(invalid("model holds a different number of hypotheses than subspaces"));
        }
        Ok(file.ensemble)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|source| match source.kind() {
            io::ErrorKind::NotFound => Error::MissingFile {
                path: path.to_path_buf(),
                source,
            },
            _ => Error::Io(source),
        })?;
        Self::from_json(&s)
    }
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n + 1];
    for i in 1..=n {
        t[i] = t[i - 1] + (i as f64).ln();
    }
    t
}

/// Stopping rule for sequential prediction.
///
/// After `t` of `h` votes the leader is ahead of the runner-up by `lead`.
/// The run stops when `lead` exceeds the unseen votes, or when the chance
/// of a sample lead at least this large, had the two labels been tied in
/// the full ensemble, falls below the per-look level. That chance is the
/// largest multivariate hypergeometric tail over all tied populations. The
/// per-look level splits `1 - confidence` evenly over every look and every
/// rival label, so the overall disagreement rate with the full vote stays
/// below `1 - confidence`.
#[derive(Debug)]
pub struct SequentialPlan {
    h: usize,
    n_labels: usize,
    confidence: f64,
    batch: usize,
    alpha: f64,
    ln_fact: Vec<f64>,
    /// Smallest lead that stops the run after `t` votes, filled on demand.
    thresholds: Vec<OnceLock<Option<usize>>>,
}

impl SequentialPlan {
    pub fn new(h: usize, n_labels: usize, confidence: f64, batch: usize) -> Result<Self> {
        if !(confidence > 0.5 && confidence <= 1.0) {
            return Err(invalid(format!("confidence {confidence} must lie in (0.5, 1]")));
        }
        if h == 0 {
            return Err(invalid("an ensemble needs at least one hypothesis"));
        }
        if batch == 0 {
            return Err(invalid("batch size must be positive"));
        }
        let looks = h.div_ceil(batch);
        let rivals = n_labels.saturating_sub(1).max(1);
        Ok(Self {
            h,
            n_labels,
            confidence,
            batch,
            alpha: (1.0 - confidence) / (looks * rivals) as f64,
            ln_fact: ln_factorials(h),
            thresholds: (0..=h).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn is_exhaustive(&self) -> bool {
        self.confidence >= 1.0
    }

    fn ln_choose(&self, n: usize, k: usize) -> f64 {
        self.ln_fact[n] - self.ln_fact[k] - self.ln_fact[n - k]
    }

    /// `tail[d]` = P(#a - #b >= d) for a sample of `t` votes drawn from `m`
    /// votes for a, `m` for b and `h - 2m` others.
    fn lead_tail(&self, t: usize, m: usize) -> Vec<f64> {
        let h = self.h;
        let others = h - 2 * m;
        let total = self.ln_choose(h, t);
        let mut pmf = vec![0.0; t + 1];
        for i in 0..=m.min(t) {
            for j in 0..=m.min(t - i).min(i) {
                let rest = t - i - j;
                if rest > others {
                    continue;
                }
                let lp = self.ln_choose(m, i) + self.ln_choose(m, j) + self.ln_choose(others, rest) - total;
                pmf[i - j] += lp.exp();
            }
        }
        let mut acc = 0.0;
        for d in (0..=t).rev() {
            acc += pmf[d];
            pmf[d] = acc;
        }
        pmf
    }

    fn compute_threshold(&self, t: usize) -> Option<usize> {
        let mut worst = vec![0.0f64; t + 1];
        for m in 0..=self.h / 2 {
            for (w, p) in worst.iter_mut().zip(self.lead_tail(t, m)) {
                *w = w.max(p);
            }
        }
        (1..=t).find(|&d| worst[d] <= self.alpha)
    }

    /// Smallest lead after `t` votes that ends the run statistically.
    pub fn threshold(&self, t: usize) -> Option<usize> {
        *self.thresholds[t].get_or_init(|| self.compute_threshold(t))
    }

    /// Whether a run with the given lead stops after `t` votes.
    pub fn should_stop(&self, t: usize, lead: usize) -> bool {
        if t >= self.h || lead > self.h - t {
            return true;
        }
        self.threshold(t).is_some_and(|d| lead >= d)
    }

    /// Runs the plan against an arbitrary vote source: `vote(i)` is the label
    /// predicted by hypothesis `i`. Returns the label and the number of votes
    /// drawn.
    pub fn run(&self, mut vote: impl FnMut(usize) -> usize, seed: u64) -> (usize, usize) {
        let mut rng: ChaCha8Rng = rng_from(seed);
        if self.is_exhaustive() {
            let mut s = VoteVector::zeros(self.n_labels);
            for i in 0..self.h {
                s.add(vote(i));
            }
            return (break_tie(&s, &mut rng), self.h);
        }
        let mut order: Vec<usize> = (0..self.h).collect();
        order.shuffle(&mut rng);
        let mut s = VoteVector::zeros(self.n_labels);
        let mut t = 0;
        while t < self.h {
            let end = (t + self.batch).min(self.h);
            for &i in &order[t..end] {
                s.add(vote(i));
            }
            t = end;
            let (leader, lead) = leader_and_lead(&s);
            if t < self.h && self.should_stop(t, lead) {
                return (leader, t);
            }
        }
        (break_tie(&s, &mut rng), self.h)
    }
}

/// Leading label (lowest on ties) and its lead over the runner-up.
fn leader_and_lead(s: &VoteVector) -> (usize, usize) {
    let c = s.counts();
    let mut best = 0;
    for y in 1..c.len() {
        if c[y] > c[best] {
            best = y;
        }
    }
    let second = (0..c.len()).filter(|&y| y != best).map(|y| c[y]).max().unwrap_or(0);
    (best, c[best] - second)
}
