//! Datasets: CSV ingestion and export, seeded train/test splits, the
//! majority-label baseline and a synthetic generator with redundant features.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adversary::FeatureStats;
use crate::binomial;
use crate::error::{invalid, Error, Result};
use crate::rng::{child_rng, rng_from};
use crate::tree::TrainView;

/// Numeric feature matrix (row-major) with integer-coded labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    labels: Vec<usize>,
    n_labels: usize,
    pub feature_names: Option<Vec<String>>,
    /// Original label values; index `y` names label `y`.
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, n_features: usize, labels: Vec<usize>, n_labels: usize) -> Result<Self> {
        if n_features == 0 {
            return Err(invalid("a dataset needs at least one feature"));
        }
        if features.len() != labels.len() * n_features {
            return Err(invalid(format!(
                "{} feature values do not form {} rows of {n_features}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= n_labels) {
            return Err(invalid(format!("label {bad} outside 0..{n_labels}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(invalid("feature values must be finite"));
        }
        Ok(Self {
            features,
            n_features,
            labels,
            n_labels,
            feature_names: None,
            label_names: (0..n_labels).map(|y| y.to_string()).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn view(&self) -> TrainView<'_> {
        TrainView {
            features: &self.features,
            n_features: self.n_features,
            labels: &self.labels,
            n_labels: self.n_labels,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_labels];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }

    /// The given rows, in the given order, with metadata carried over.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.n_features);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        Dataset {
            features,
            n_features: self.n_features,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            n_labels: self.n_labels,
            feature_names: self.feature_names.clone(),
            label_names: self.label_names.clone(),
        }
    }
}

/// Which CSV column holds the label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub has_headers: bool,
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_headers: true,
            delimiter: b',',
        }
    }
}

/// Loads a CSV file. Labels are coded `0..d` in order of first appearance;
/// every other column must be numeric. Parse errors carry the 1-based line
/// number and the column name.
pub fn load_csv(path: impl AsRef<Path>, label: &LabelColumn, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::MissingFile {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, label, opts)
}

pub fn read_csv<R: Read>(reader: R, label: &LabelColumn, opts: &CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.has_headers)
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Option<Vec<String>> = if opts.has_headers {
        Some(rdr.headers()?.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut records = rdr.records();
    let first = match records.next() {
        Some(r) => r?,
        None => return Err(Error::EmptyDataset),
    };
    let width = first.len();
    let label_idx = match label {
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => return Err(Error::UnknownColumn(i.to_string())),
        LabelColumn::Name(name) => headers
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::UnknownColumn(name.clone()))?,
    };
    let column_name = |c: usize| -> String {
        headers
            .as_ref()
            .and_then(|h| h.get(c).cloned())
            .unwrap_or_else(|| format!("#{c}"))
    };
    if width < 2 {
        return Err(invalid("need at least one feature column besides the label"));
    }

    let first_line = if opts.has_headers { 2 } else { 1 };
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut codes: HashMap<String, usize> = HashMap::new();
    let mut label_names = Vec::new();
    for (i, rec) in std::iter::once(Ok(first)).chain(records).enumerate() {
        let line = first_line + i;
        let rec = rec.map_err(|e| Error::Parse {
            row: line,
            column: "-".into(),
            message: e.to_string(),
        })?;
        if rec.len() != width {
            return Err(Error::Parse {
                row: line,
                column: "-".into(),
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            if c == label_idx {
                if cell.is_empty() {
                    return Err(Error::Parse {
                        row: line,
                        column: column_name(c),
                        message: "missing label".into(),
                    });
                }
                let next = codes.len();
                let code = *codes.entry(cell.to_string()).or_insert_with(|| {
                    label_names.push(cell.to_string());
                    next
                });
                labels.push(code);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                column: column_name(c),
                message: if cell.is_empty() {
                    "missing value".into()
                } else {
                    format!("`{cell}` is not numeric")
                },
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: column_name(c),
                    message: format!("`{cell}` is not finite"),
                });
            }
            features.push(v);
        }
    }
    let n_labels = label_names.len();
    if n_labels < 2 {
        return Err(invalid("the label column must take at least two values"));
    }
    let mut ds = Dataset::new(features, width - 1, labels, n_labels)?;
    ds.feature_names = headers.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|&(c, _)| c != label_idx)
            .map(|(_, name)| name)
            .collect()
    });
    ds.label_names = label_names;
    Ok(ds)
}

/// Writes features followed by a `label` column holding the original label
/// values, readable again by [`read_csv`] with `LabelColumn::Name("label")`.
pub fn write_csv<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = match &ds.feature_names {
        Some(names) => names.clone(),
        None => (0..ds.n_features).map(|i| format!("f{i}")).collect(),
    };
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..ds.rows() {
        let mut rec: Vec<String> = ds.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.label_names[ds.label(i)].clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Train and test portions with statistics from the training rows only.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub stats: FeatureStats,
}

/// Permutes all rows with `seed`, cuts at `train_fraction`, and truncates
/// each side to `cap` rows.
pub fn permute_split(ds: &Dataset, train_fraction: f64, cap: usize, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid(format!("train fraction {train_fraction} must lie in (0, 1)")));
    }
    let m = ds.rows();
    if m < 2 {
        return Err(invalid(format!("cannot split {m} instances")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng_from(seed));
    let cut = ((m as f64 * train_fraction).round() as usize).clamp(1, m - 1);
    let (tr, te) = order.split_at(cut);
    let train = ds.select(&tr[..tr.len().min(cap)]);
    let test = ds.select(&te[..te.len().min(cap)]);
    let stats = FeatureStats::from_dataset(&train)?;
    Ok(Split { train, test, stats })
}

/// Most frequent training label (lowest index on ties).
pub fn majority_label(train: &Dataset) -> usize {
    let counts = train.class_counts();
    (0..counts.len()).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap_or(0)
}

/// Test error of always predicting the training majority label.
pub fn majority_baseline(train: &Dataset, test: &Dataset) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let y = majority_label(train);
    let wrong = test.labels().iter().filter(|&&t| t != y).count();
    Ok(wrong as f64 / test.rows() as f64)
}

/// Exact two-sided binomial interval for an error count.
pub fn binomial_ci(errors: usize, m: usize, confidence: f64) -> Result<(f64, f64)> {
    binomial::clopper_pearson(errors as u64, m as u64, confidence)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub signals: usize,
    pub copies: usize,
    pub noise: f64,
    pub m: usize,
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Synthetic data whose label is carried redundantly by many features.
///
/// Recipe: labels are uniform on `0..d`. Each latent signal `j` assigns the
/// classes distinct centers `0..d` via its own random permutation. Feature
/// `j * copies + c` is signal `j`'s center for the instance's class plus
/// independent `noise * N(0, 1)`. So `n = signals * copies`, and with zero
/// noise every single feature identifies the label.
pub fn synth_redundant(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.signals == 0 || cfg.copies == 0 {
        return Err(invalid("signals and copies must be positive"));
    }
    if cfg.d < 2 {
        return Err(invalid("need at least two labels"));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(invalid("noise must be a finite non-negative number"));
    }
    let n = cfg.signals * cfg.copies;
    let mut code_rng = child_rng(cfg.seed, 0);
    let centers: Vec<Vec<f64>> = (0..cfg.signals)
        .map(|_| {
            let mut p: Vec<usize> = (0..cfg.d).collect();
            p.shuffle(&mut code_rng);
            p.into_iter().map(|c| c as f64).collect()
        })
        .collect();
    let mut rng = child_rng(cfg.seed, 1);
    let mut features = Vec::with_capacity(cfg.m * n);
    let mut labels = Vec::with_capacity(cfg.m);
    for _ in 0..cfg.m {
        let y = rng.random_range(0..cfg.d);
        labels.push(y);
        for center in &centers {
            for _ in 0..cfg.copies {
                let e: f64 = rng.sample(StandardNormal);
                features.push(center[y] + cfg.noise * e);
            }
        }
    }
    let mut ds = Dataset::new(features, n, labels, cfg.d)?;
    ds.feature_names = Some(
        (0..cfg.signals)
            .flat_map(|j| (0..cfg.copies).map(move |c| format!("s{j}c{c}")))
            .collect(),
    );
    Ok(ds)
}
