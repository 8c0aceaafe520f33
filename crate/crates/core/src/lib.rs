//! Majority-vote ensembles over feature subspaces, with certified error
//! bounds against an adversary that may overwrite up to `l` features of
//! every test instance.
//!
//! A [`SubspaceFamily`] fixes which features each voting hypothesis sees.
//! [`robustness`] turns a family and a budget `l` into the number `c` of
//! hypotheses the adversary can reach, and [`certify`] turns clean test
//! margins plus `c` into an upper bound on the corrupted error.

pub mod adversary;
pub mod binomial;
pub mod certify;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod rng;
pub mod robustness;
pub mod subspaces;
pub mod tree;

pub use adversary::{AdversaryConfig, AdversaryKind, FeatureStats};
pub use certify::{CertifiedBound, MarginHistogram};
pub use data::Dataset;
pub use ensemble::{BaseLearnerConfig, LearnerKind, VoteVector, VotingEnsemble};
pub use error::{Error, Result};
pub use robustness::{CorruptionBound, Exactness};
pub use subspaces::{Method, Subspace, SubspaceFamily};
