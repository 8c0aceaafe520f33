mod commands;
mod config;
mod experiment;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use subvote::data::{LabelColumn, SynthConfig};
use subvote::Error;

use config::ExperimentConfig;

/// A failed run: a message for stderr and the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    pub fn verify(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::InvalidParameter(_)
            | Error::BudgetExceeded { .. }
            | Error::UnsoundCertificate { .. }
            | Error::NoUsableFeatures(_) => Failure::usage(message),
            _ => Failure::data(message),
        }
    }
}

#[derive(Parser)]
#[command(name = "subvote", version, about = "Feature-subspace voting ensembles with certified robustness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a subspace family and print its corruption tolerance table.
    Generate {
        /// Number of features, instead of reading a dataset.
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the baselines and one ensemble per hypothesis count, and report clean error.
    TrainEval {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the corruption level and record the error of every system.
    AttackSweep {
        #[command(flatten)]
        common: Common,
    },
    /// Compute certified error bounds from the test margin histogram.
    Certify {
        /// Use a saved model instead of training one.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also apply the worst-case vote flip and check it against the bound.
        #[arg(long)]
        verify: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Check certificate soundness and optionally replay a recorded manifest.
    Verify {
        #[arg(long)]
        model: Option<PathBuf>,
        /// A manifest.json written by train-eval; the run is replayed and compared.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Label column, by name or zero-based index.
    #[arg(long)]
    label: Option<LabelColumn>,
    #[arg(long)]
    no_headers: bool,
    #[arg(long)]
    delimiter: Option<char>,
    /// Synthetic data, e.g. "signals=10,copies=20,noise=2,m=2000,d=2".
    #[arg(long, value_parser = parse_synth)]
    synth: Option<SynthConfig>,
    /// fixed-split, k-subset, random-subspace or modulus.
    #[arg(long, value_parser = parse_enum::<subvote::Method>)]
    method: Option<subvote::Method>,
    #[arg(long, value_delimiter = ',')]
    h: Option<Vec<usize>>,
    #[arg(long)]
    k: Option<usize>,
    /// Number of cyclic groups for the modulus method.
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    enumeration_cap: Option<u64>,
    #[arg(long)]
    search_budget: Option<u64>,
    /// decision-tree or random-forest.
    #[arg(long, value_parser = parse_enum::<subvote::LearnerKind>)]
    learner: Option<subvote::LearnerKind>,
    #[arg(long, value_delimiter = ',')]
    trees: Option<Vec<usize>>,
    /// Comma list of sqrt, 2sqrt, all.
    #[arg(long, value_delimiter = ',', value_parser = parse_enum::<subvote::tree::MaxFeatures>)]
    max_features: Option<Vec<subvote::tree::MaxFeatures>>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// none, weak-mi or worst-case-flip.
    #[arg(long, value_parser = parse_enum::<subvote::AdversaryKind>)]
    adversary: Option<subvote::AdversaryKind>,
    #[arg(long)]
    l_min: Option<usize>,
    #[arg(long)]
    l_max: Option<usize>,
    #[arg(long)]
    summary_l: Option<usize>,
    #[arg(long)]
    confidence: Option<f64>,
    /// Master seed; every other seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Maximum rows kept on each side of the split.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_synth(s: &str) -> Result<SynthConfig, String> {
    let mut table = toml::Table::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| format!("expected key=value, got `{part}`"))?;
        let v = v.trim();
        let value = if let Ok(i) = v.parse::<i64>() {
            toml::Value::Integer(i)
        } else if let Ok(f) = v.parse::<f64>() {
            toml::Value::Float(f)
        } else {
            return Err(format!("`{k}` needs a number"));
        };
        table.insert(k.trim().to_string(), value);
    }
    table.try_into().map_err(|e: toml::de::Error| e.to_string())
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = &self.data {
            cfg.data.csv = Some(p.clone());
            cfg.data.synth = None;
        }
        if let Some(s) = &self.synth {
            cfg.data.synth = Some(s.clone());
            cfg.data.csv = None;
        }
        if let Some(l) = &self.label {
            cfg.data.label = l.clone();
        }
        if self.no_headers {
            cfg.data.has_headers = false;
        }
        set(&mut cfg.data.delimiter, self.delimiter);
        set(&mut cfg.family.method, self.method);
        if self.h.is_some() {
            cfg.family.h = self.h.clone();
        }
        if self.k.is_some() {
            cfg.family.k = self.k;
        }
        if self.groups.is_some() {
            cfg.family.groups = self.groups;
        }
        set(&mut cfg.family.enumeration_cap, self.enumeration_cap);
        set(&mut cfg.family.search_budget, self.search_budget);
        set(&mut cfg.learner.kind, self.learner);
        set(&mut cfg.learner.trees, self.trees.clone());
        set(&mut cfg.learner.max_features, self.max_features.clone());
        if self.max_depth.is_some() {
            cfg.learner.max_depth = self.max_depth;
        }
        set(&mut cfg.learner.cv_folds, self.folds);
        set(&mut cfg.adversary.kind, self.adversary);
        set(&mut cfg.adversary.l_min, self.l_min);
        set(&mut cfg.adversary.l_max, self.l_max);
        if self.summary_l.is_some() {
            cfg.adversary.summary_l = self.summary_l;
        }
        set(&mut cfg.certify.confidence, self.confidence);
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.split.train_fraction, self.train_fraction);
        set(&mut cfg.split.cap, self.cap);
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { n, common } => commands::generate(&common.resolve()?, n, &common.out),
        Command::TrainEval { common } => commands::train_eval(&common.resolve()?, &common.out),
        Command::AttackSweep { common } => commands::attack_sweep(&common.resolve()?, &common.out),
        Command::Certify { model, verify, common } => {
            commands::certify(&common.resolve()?, model.as_ref(), verify, &common.out)
        }
        Command::Verify { model, manifest, common } => {
            commands::verify(&common.resolve()?, model.as_ref(), manifest.as_ref(), &common.out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
