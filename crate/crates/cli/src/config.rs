//! Experiment configuration: a TOML file, then command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use subvote::adversary::{AdversaryKind, DEFAULT_MI_BINS};
use subvote::data::{LabelColumn, SynthConfig};
use subvote::ensemble::LearnerKind;
use subvote::rng::derive_seed;
use subvote::robustness::DEFAULT_SEARCH_BUDGET;
use subvote::subspaces::{Method, DEFAULT_ENUMERATION_CAP};
use subvote::tree::MaxFeatures;

use crate::Failure;

/// Hypothesis counts searched for the fixed-split method.
pub const FIXED_SPLIT_GRID: [usize; 9] = [3, 5, 7, 9, 11, 13, 15, 21, 31];
pub const RANDOM_SUBSPACE_H: usize = 500;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub family: FamilyConfig,
    pub learner: LearnerGrid,
    pub adversary: AdversarySection,
    pub certify: CertifySection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub csv: Option<PathBuf>,
    pub label: LabelColumn,
    pub has_headers: bool,
    pub delimiter: char,
    pub synth: Option<SynthConfig>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            csv: None,
            label: LabelColumn::Name("label".into()),
            has_headers: true,
            delimiter: ',',
            synth: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub cap: usize,
    pub seed: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            cap: 100_000,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyConfig {
    pub method: Method,
    /// Hypothesis counts; defaults depend on the method.
    pub h: Option<Vec<usize>>,
    pub k: Option<usize>,
    /// Number of cyclic groups for the modulus method. Without it the
    /// features are padded with dummies to a single group of size
    /// `ceil(n/k)`.
    pub groups: Option<usize>,
    pub seed: Option<u64>,
    pub enumeration_cap: u64,
    pub search_budget: u64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            method: Method::FixedSplit,
            h: None,
            k: None,
            groups: None,
            seed: None,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            search_budget: DEFAULT_SEARCH_BUDGET,
        }
    }
}

impl FamilyConfig {
    pub fn h_values(&self) -> Vec<usize> {
        match (&self.h, self.method) {
            (Some(h), _) => h.clone(),
            (None, Method::FixedSplit) => FIXED_SPLIT_GRID.to_vec(),
            (None, Method::RandomSubspace) => vec![RANDOM_SUBSPACE_H],
            (None, _) => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerGrid {
    pub kind: LearnerKind,
    pub trees: Vec<usize>,
    pub max_features: Vec<MaxFeatures>,
    pub max_depth: Option<usize>,
    pub cv_folds: usize,
    pub seed: Option<u64>,
}

impl Default for LearnerGrid {
    fn default() -> Self {
        Self {
            kind: LearnerKind::RandomForest,
            trees: vec![10, 20, 50, 100],
            max_features: vec![MaxFeatures::Sqrt, MaxFeatures::TwoSqrt, MaxFeatures::All],
            max_depth: None,
            cv_folds: 5,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarySection {
    pub kind: AdversaryKind,
    pub l_min: usize,
    pub l_max: usize,
    pub mi_bins: usize,
    pub seed: Option<u64>,
    /// Corruption level at which the sweep summary ranks hypothesis counts.
    pub summary_l: Option<usize>,
}

impl Default for AdversarySection {
    fn default() -> Self {
        Self {
            kind: AdversaryKind::WeakMi,
            l_min: 0,
            l_max: 35,
            mi_bins: DEFAULT_MI_BINS,
            seed: None,
            summary_l: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    pub confidence: f64,
    pub l_max: Option<usize>,
}

impl Default for CertifySection {
    fn default() -> Self {
        Self {
            confidence: 0.99,
            l_max: None,
        }
    }
}

/// Seeds actually used, derived from the master seed unless set per section.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Seeds {
    pub master: u64,
    pub split: u64,
    pub family: u64,
    pub learner: u64,
    pub cv: u64,
    pub adversary: u64,
    pub ties: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::data(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
    }

    pub fn seeds(&self) -> Seeds {
        let m = self.seed;
        Seeds {
            master: m,
            split: self.split.seed.unwrap_or_else(|| derive_seed(m, 1)),
            family: self.family.seed.unwrap_or_else(|| derive_seed(m, 2)),
            learner: self.learner.seed.unwrap_or_else(|| derive_seed(m, 3)),
            cv: derive_seed(m, 4),
            adversary: self.adversary.seed.unwrap_or_else(|| derive_seed(m, 5)),
            ties: derive_seed(m, 6),
        }
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn validate(&self) -> Result<(), Failure> {
        match (&self.data.csv, &self.data.synth) {
            (None, None) => return Err(Failure::usage("no dataset: set data.csv or data.synth")),
            (Some(_), Some(_)) => return Err(Failure::usage("set only one of data.csv and data.synth")),
            _ => {}
        }
        if let Some(path) = &self.data.csv {
            if !path.exists() {
                return Err(Failure::data(format!("data file {} does not exist", path.display())));
            }
        }
        if !self.data.delimiter.is_ascii() {
            return Err(Failure::usage("delimiter must be a single ASCII character"));
        }
        if self.adversary.l_min > self.adversary.l_max {
            return Err(Failure::usage(format!(
                "l range {}..{} is empty",
                self.adversary.l_min, self.adversary.l_max
            )));
        }
        if self.learner.trees.is_empty() || self.learner.max_features.is_empty() {
            return Err(Failure::usage("learner grid is empty"));
        }
        if self.learner.cv_folds < 2 {
            return Err(Failure::usage("cv_folds must be at least 2"));
        }
        if !(self.certify.confidence > 0.0 && self.certify.confidence < 1.0) {
            return Err(Failure::usage("confidence must lie in (0, 1)"));
        }
        if self.family.h.as_ref().is_some_and(|h| h.is_empty() || h.contains(&0)) {
            return Err(Failure::usage("hypothesis counts must be positive"));
        }
        let needs_k = matches!(
            self.family.method,
            Method::KSubset | Method::RandomSubspace | Method::Modulus
        );
        if needs_k && self.family.k.is_none() {
            return Err(Failure::usage(format!("method {} needs k", self.family.method)));
        }
        Ok(())
    }

    pub fn certify_l_max(&self) -> usize {
        self.certify.l_max.unwrap_or(self.adversary.l_max)
    }
}
