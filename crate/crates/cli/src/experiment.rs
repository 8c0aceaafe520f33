//! Pieces shared by the subcommands: data, families, model selection and
//! evaluation.

use std::fs;

use rand::seq::SliceRandom;
use serde::Serialize;
use sha2::{Digest, Sha256};

use subvote::data::{binomial_ci, load_csv, permute_split, synth_redundant, CsvOptions, Dataset, Split};
use subvote::ensemble::{break_tie, train, BaseLearnerConfig, VoteVector, VotingEnsemble};
use subvote::rng::{child_rng, rng_from};
use subvote::subspaces::{
    enumerate_k_subsets, fixed_split, modulus_padded, modulus_partition, random_subspace, Method, SubspaceFamily,
};

use crate::config::{ExperimentConfig, Seeds};
use crate::Failure;

pub struct Loaded {
    pub data: Dataset,
    /// SHA-256 of the input file, when the data came from one.
    pub sha256: Option<String>,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Loaded, Failure> {
    if let Some(synth) = &cfg.data.synth {
        return Ok(Loaded {
            data: synth_redundant(synth)?,
            sha256: None,
        });
    }
    let path = cfg.data.csv.as_ref().ok_or_else(|| Failure::usage("no dataset configured"))?;
    let opts = CsvOptions {
        has_headers: cfg.data.has_headers,
        delimiter: cfg.data.delimiter as u8,
    };
    let data = load_csv(path, &cfg.data.label, &opts)?;
    let bytes = fs::read(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    Ok(Loaded {
        data,
        sha256: Some(hex::encode(Sha256::digest(&bytes))),
    })
}

pub fn split(cfg: &ExperimentConfig, data: &Dataset, seeds: &Seeds) -> Result<Split, Failure> {
    Ok(permute_split(data, cfg.split.train_fraction, cfg.split.cap, seeds.split)?)
}

/// Builds the family for one hypothesis count (ignored by methods that fix
/// their own size).
pub fn build_family(cfg: &ExperimentConfig, n: usize, h: Option<usize>, seed: u64) -> Result<SubspaceFamily, Failure> {
    let f = &cfg.family;
    let k = || f.k.ok_or_else(|| Failure::usage(format!("method {} needs k", f.method)));
    let h_or = |what: &str| h.ok_or_else(|| Failure::usage(format!("method {} needs h {what}", f.method)));
    let family = match f.method {
        Method::FixedSplit => fixed_split(n, h_or("")?, seed)?,
        Method::RandomSubspace => random_subspace(n, k()?, h_or("")?, seed)?,
        Method::KSubset => enumerate_k_subsets(n, k()?, f.enumeration_cap)?,
        Method::Modulus => match f.groups {
            Some(groups) => modulus_partition(n, k()?, groups, seed)?,
            None => modulus_padded(n, k()?)?,
        },
    };
    Ok(family)
}

/// Hypothesis-count settings to run: one per configured `h`, or a single
/// run for methods whose size follows from `n` and `k`.
pub fn h_settings(cfg: &ExperimentConfig) -> Vec<Option<usize>> {
    match cfg.family.method {
        Method::FixedSplit | Method::RandomSubspace => cfg.family.h_values().into_iter().map(Some).collect(),
        Method::KSubset | Method::Modulus => vec![None],
    }
}

pub fn learner_grid(cfg: &ExperimentConfig, seed: u64) -> Vec<BaseLearnerConfig> {
    let g = &cfg.learner;
    g.trees
        .iter()
        .flat_map(|&trees| {
            g.max_features.iter().map(move |&max_features| BaseLearnerConfig {
                kind: g.kind,
                trees,
                max_features,
                max_depth: g.max_depth,
                seed,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Selection {
    pub learner: BaseLearnerConfig,
    /// Mean cross-validation error; absent when the grid has one entry.
    pub cv_error: Option<f64>,
    pub candidates: Vec<(BaseLearnerConfig, f64)>,
}

/// K-fold cross validation over the learner grid on the training split.
/// Ties go to the earlier grid entry.
pub fn select_learner(
    train_set: &Dataset,
    family: &SubspaceFamily,
    grid: &[BaseLearnerConfig],
    folds: usize,
    seed: u64,
) -> Result<Selection, Failure> {
    if grid.len() == 1 {
        return Ok(Selection {
            learner: grid[0].clone(),
            cv_error: None,
            candidates: Vec::new(),
        });
    }
    let m = train_set.rows();
    let folds = folds.min(m);
    if folds < 2 {
        return Err(Failure::data("too few training rows for cross validation"));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng_from(seed));
    let mut candidates = Vec::with_capacity(grid.len());
    for config in grid {
        let mut wrong = 0;
        for f in 0..folds {
            let (held, kept): (Vec<usize>, Vec<usize>) = (0..m).partition(|&i| i % folds == f);
            let fit = train_set.select(&kept.iter().map(|&i| order[i]).collect::<Vec<_>>());
            let eval = train_set.select(&held.iter().map(|&i| order[i]).collect::<Vec<_>>());
            let ens = train(&fit, family, config)?;
            wrong += errors(&ens.vote_matrix(&eval)?, eval.labels(), seed);
        }
        candidates.push((config.clone(), wrong as f64 / m as f64));
    }
    let best = candidates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("grid is not empty");
    Ok(Selection {
        learner: candidates[best].0.clone(),
        cv_error: Some(candidates[best].1),
        candidates,
    })
}

/// Misclassified rows, breaking vote ties with a per-row seed.
pub fn errors(votes: &[VoteVector], labels: &[usize], tie_seed: u64) -> usize {
    votes
        .iter()
        .zip(labels)
        .enumerate()
        .filter(|(i, (s, &y))| break_tie(s, &mut child_rng(tie_seed, *i as u64)) != y)
        .count()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorEstimate {
    pub errors: usize,
    pub m: usize,
    pub error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl ErrorEstimate {
    pub fn new(errors: usize, m: usize, confidence: f64) -> Result<Self, Failure> {
        let (ci_low, ci_high) = binomial_ci(errors, m, confidence)?;
        Ok(Self {
            errors,
            m,
            error: errors as f64 / m as f64,
            ci_low,
            ci_high,
        })
    }
}

pub fn evaluate(ens: &VotingEnsemble, test: &Dataset, seeds: &Seeds, confidence: f64) -> Result<ErrorEstimate, Failure> {
    let wrong = errors(&ens.vote_matrix(test)?, test.labels(), seeds.ties);
    ErrorEstimate::new(wrong, test.rows(), confidence)
}

/// A trained system together with how its learner was chosen.
pub struct Trained {
    pub ensemble: VotingEnsemble,
    pub selection: Selection,
}

pub fn train_selected(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    family: &SubspaceFamily,
    seeds: &Seeds,
) -> Result<Trained, Failure> {
    let grid = learner_grid(cfg, seeds.learner);
    let selection = select_learner(train_set, family, &grid, cfg.learner.cv_folds, seeds.cv)?;
    let ensemble = train(train_set, family, &selection.learner)?;
    Ok(Trained { ensemble, selection })
}

/// Single learner over every feature: a fixed split with one subset.
pub fn full_feature_family(n: usize) -> Result<SubspaceFamily, Failure> {
    Ok(fixed_split(n, 1, 0)?)
}
