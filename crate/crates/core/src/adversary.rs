//! The l0 corruption model: an adversary may overwrite up to `l` features of
//! each test instance with arbitrary values.
//!
//! Two concrete adversaries live here. The weak adversary is model-agnostic:
//! it samples features by mutual information with the label and pushes each
//! to the training extreme on the opposite side of the training mean. The
//! worst-case flip adversary acts directly on vote vectors and realizes the
//! largest margin loss that `c` corrupt hypotheses can cause.

use rand::seq::{IndexedRandom, SliceRandom};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::ensemble::VoteVector;
use crate::error::{invalid, Error, Result};
use crate::rng::child_rng;

/// Weight given to features with zero estimated mutual information.
pub const MI_FLOOR: f64 = 1e-6;

pub const DEFAULT_MI_BINS: usize = 10;

/// Per-feature training minimum, maximum and mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
}

impl FeatureStats {
    pub fn from_dataset(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = train.n_features();
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        let mut sum = vec![0.0; n];
        for i in 0..train.rows() {
            for (f, &v) in train.row(i).iter().enumerate() {
                min[f] = min[f].min(v);
                max[f] = max[f].max(v);
                sum[f] += v;
            }
        }
        let m = train.rows() as f64;
        let mean = sum
            .into_iter()
            .enumerate()
            .map(|(f, s)| (s / m).clamp(min[f], max[f]))
            .collect();
        Ok(Self { min, max, mean })
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryKind {
    None,
    WeakMi,
    WorstCaseFlip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    pub l: usize,
    pub kind: AdversaryKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bins")]
    pub mi_bins: usize,
}

fn default_bins() -> usize {
    DEFAULT_MI_BINS
}

impl AdversaryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == AdversaryKind::WeakMi && self.mi_bins < 2 {
            return Err(invalid(format!("mi_bins={} must be at least 2", self.mi_bins)));
        }
        Ok(())
    }
}

/// Mutual information (nats) between a feature discretized into `bins`
/// equal-width bins and the label.
fn feature_mi(train: &Dataset, f: usize, bins: usize, lo: f64, hi: f64) -> f64 {
    let d = train.n_labels();
    let m = train.rows() as f64;
    let width = hi - lo;
    let mut joint = vec![0usize; bins * d];
    for i in 0..train.rows() {
        let v = train.row(i)[f];
        let b = if width > 0.0 {
            (((v - lo) / width) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize
        } else {
            0
        };
        joint[b * d + train.label(i)] += 1;
    }
    let py: Vec<f64> = (0..d)
        .map(|y| (0..bins).map(|b| joint[b * d + y]).sum::<usize>() as f64 / m)
        .collect();
    let mut mi = 0.0;
    for b in 0..bins {
        let row = &joint[b * d..(b + 1) * d];
        let pb = row.iter().sum::<usize>() as f64 / m;
        for (y, &c) in row.iter().enumerate() {
            if c > 0 {
                let p = c as f64 / m;
                mi += p * (p / (pb * py[y])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Sampling distribution over features proportional to their mutual
/// information with the label. Features with zero MI get weight
/// [`MI_FLOOR`] before renormalization; constant labels give the uniform
/// distribution.
pub fn mi_distribution(train: &Dataset, bins: usize) -> Result<Vec<f64>> {
    if train.rows() < 2 {
        return Err(invalid("mutual information needs at least two instances"));
    }
    if bins < 2 {
        return Err(invalid("mutual information needs at least two bins"));
    }
    let n = train.n_features();
    let uniform = vec![1.0 / n as f64; n];
    if train.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
        log::warn!("labels are constant; falling back to a uniform feature distribution");
        return Ok(uniform);
    }
    let stats = FeatureStats::from_dataset(train)?;
    let mi: Vec<f64> = (0..n)
        .map(|f| feature_mi(train, f, bins, stats.min[f], stats.max[f]))
        .collect();
    let total: f64 = mi.iter().sum();
    if total <= 0.0 {
        return Ok(uniform);
    }
    let floored: Vec<f64> = mi.iter().map(|&v| (v / total).max(MI_FLOOR)).collect();
    let z: f64 = floored.iter().sum();
    Ok(floored.into_iter().map(|w| w / z).collect())
}

/// Picks `l` distinct features, weighted by `dist`. Zero-weight features are
/// used only once every positive-weight feature has been taken.
pub fn choose_features(dist: &[f64], l: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let l = l.min(dist.len());
    let positive: Vec<usize> = (0..dist.len()).filter(|&f| dist[f] > 0.0).collect();
    if l <= positive.len() {
        return positive
            .choose_multiple_weighted(rng, l, |&f| dist[f])
            .expect("weights are positive and finite")
            .copied()
            .collect();
    }
    let mut rest: Vec<usize> = (0..dist.len()).filter(|&f| dist[f] <= 0.0).collect();
    rest.shuffle(rng);
    let mut chosen = positive;
    chosen.extend(rest.into_iter().take(l - chosen.len()));
    chosen
}

/// Value the weak adversary writes into feature `f`: the training maximum
/// when `v` is at or below the mean, the training minimum otherwise.
pub fn opposite_extreme(stats: &FeatureStats, f: usize, v: f64) -> f64 {
    if v <= stats.mean[f] {
        stats.max[f]
    } else {
        stats.min[f]
    }
}

/// Corrupts `l` features of `x` in place; returns the chosen features.
pub fn weak_corrupt_in_place(
    x: &mut [f64],
    stats: &FeatureStats,
    dist: &[f64],
    l: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let chosen = choose_features(dist, l, rng);
    for &f in &chosen {
        x[f] = opposite_extreme(stats, f, x[f]);
    }
    chosen
}

pub fn weak_corrupt(x: &[f64], stats: &FeatureStats, dist: &[f64], l: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = x.to_vec();
    weak_corrupt_in_place(&mut out, stats, dist, l, rng);
    out
}

/// Number of coordinates in which `a` and `b` differ.
pub fn zero_norm_distance(a: &[f64], b: &[f64]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x.to_bits() != y.to_bits()).count()
}

/// Moves up to `c` votes away from `y`, each onto the currently strongest
/// rival (lowest label on ties). Every move lowers the margin of `y` by at
/// most two.
pub fn worst_case_flip(s: &VoteVector, y: usize, c: usize) -> VoteVector {
    let mut counts = s.counts().to_vec();
    if counts.len() < 2 {
        return s.clone();
    }
    for _ in 0..c {
        if counts[y] == 0 {
            break;
        }
        let rival = (0..counts.len())
            .filter(|&j| j != y)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .expect("at least one rival");
        counts[y] -= 1;
        counts[rival] += 1;
    }
    VoteVector::from_counts(counts)
}

/// Applies the configured feature-level adversary to every test instance,
/// each with its own derived seed.
pub fn corrupt_sequence(
    test: &Dataset,
    config: &AdversaryConfig,
    stats: &FeatureStats,
    dist: &[f64],
) -> Result<Dataset> {
    config.validate()?;
    match config.kind {
        AdversaryKind::None => Ok(test.clone()),
        AdversaryKind::WorstCaseFlip => Err(invalid(
            "the worst-case flip adversary acts on vote vectors, not on instances",
        )),
        AdversaryKind::WeakMi => {
            let n = test.n_features();
            if stats.n_features() != n || dist.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: stats.n_features().min(dist.len()),
                });
            }
            let mut out = test.clone();
            for i in 0..out.rows() {
                let mut rng = child_rng(config.seed, i as u64);
                weak_corrupt_in_place(out.row_mut(i), stats, dist, config.l, &mut rng);
                let changed = zero_norm_distance(out.row(i), test.row(i));
                assert!(
                    changed <= config.l,
                    "instance {i}: {changed} features changed with budget {}",
                    config.l
                );
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::margin;
    use crate::rng::rng_from;

    fn stats_example() -> FeatureStats {
        FeatureStats {
            min: vec![-2.0],
            max: vec![3.0],
            mean: vec![1.0],
        }
    }

    #[test]
    fn opposite_side_rule() {
        let st = stats_example();
        let dist = [1.0];
        let mut rng = rng_from(0);
        assert_eq!(weak_corrupt(&[-1.0], &st, &dist, 1, &mut rng), vec![3.0]);
        assert_eq!(weak_corrupt(&[2.0], &st, &dist, 1, &mut rng), vec![-2.0]);
        // at the mean counts as the low side
        assert_eq!(weak_corrupt(&[1.0], &st, &dist, 1, &mut rng), vec![3.0]);
        assert_eq!(weak_corrupt(&[-1.0], &st, &dist, 0, &mut rng), vec![-1.0]);
    }

    #[test]
    fn chooses_distinct_positive_features_first() {
        let dist = [0.5, 0.0, 0.25, 0.0, 0.25];
        for seed in 0..200 {
            let mut rng = rng_from(seed);
            let mut c = choose_features(&dist, 2, &mut rng);
            c.sort_unstable();
            c.dedup();
            assert_eq!(c.len(), 2);
            assert!(c.iter().all(|&f| dist[f] > 0.0));
        }
        let mut rng = rng_from(1);
        let mut all = choose_features(&dist, 4, &mut rng);
        all.sort_unstable();
        assert!(all.starts_with(&[0]) && all.contains(&2) && all.contains(&4));
        assert_eq!(all.len(), 4);
    }

    #[test]
    fn mi_prefers_informative_feature() {
        let mut rng = rng_from(3);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..400 {
            let label = i % 2;
            y.push(label);
            x.push(label as f64);
            x.push(rand::Rng::random::<f64>(&mut rng));
        }
        let ds = Dataset::new(x, 2, y, 2).unwrap();
        let w = mi_distribution(&ds, 10).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[0] > 0.9, "{w:?}");
    }

    #[test]
    fn mi_uniform_for_independent_features() {
        // plug-in MI of pure noise fluctuates like a chi-square, so check the
        // average over many replicates
        let mut rng = rng_from(4);
        let (n, m, reps) = (5, 500, 200);
        let mut avg = vec![0.0; n];
        for _ in 0..reps {
            let x: Vec<f64> = (0..m * n).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
            let y: Vec<usize> = (0..m).map(|i| i % 2).collect();
            let w = mi_distribution(&Dataset::new(x, n, y, 2).unwrap(), 10).unwrap();
            for (a, v) in avg.iter_mut().zip(w) {
                *a += v / reps as f64;
            }
        }
        for &v in &avg {
            assert!((v - 0.2).abs() < 0.03, "{avg:?}");
        }
    }

    #[test]
    fn mi_constant_labels_uniform() {
        let ds = Dataset::new(vec![1.0, 2.0, 3.0, 4.0], 2, vec![1, 1], 2).unwrap();
        assert_eq!(mi_distribution(&ds, 10).unwrap(), vec![0.5, 0.5]);
        assert!(mi_distribution(&ds.select(&[0]), 10).is_err());
    }

    #[test]
    fn flip_examples() {
        let s = VoteVector::from_counts(vec![10, 5, 3]);
        let f = worst_case_flip(&s, 0, 2);
        assert_eq!(f.counts(), &[8, 7, 3]);
        assert_eq!(margin(&s, 0), 5);
        assert_eq!(margin(&f, 0), 1);
        assert_eq!(worst_case_flip(&s, 0, 0), s);
        // runs out of votes to move
        assert_eq!(worst_case_flip(&VoteVector::from_counts(vec![1, 0]), 0, 5).counts(), &[0, 1]);
    }

    #[test]
    fn sequence_respects_budget_and_seed() {
        let x: Vec<f64> = (0..60).map(|v| (v % 7) as f64).collect();
        let ds = Dataset::new(x, 6, (0..10).map(|i| i % 2).collect(), 2).unwrap();
        let stats = FeatureStats::from_dataset(&ds).unwrap();
        let dist = vec![1.0 / 6.0; 6];
        let cfg = AdversaryConfig {
            l: 2,
            kind: AdversaryKind::WeakMi,
            seed: 8,
            mi_bins: 10,
        };
        let a = corrupt_sequence(&ds, &cfg, &stats, &dist).unwrap();
        let b = corrupt_sequence(&ds, &cfg, &stats, &dist).unwrap();
        assert_eq!(a, b);
        for i in 0..ds.rows() {
            assert!(zero_norm_distance(a.row(i), ds.row(i)) <= 2);
        }
        let none = AdversaryConfig {
            kind: AdversaryKind::None,
            ..cfg.clone()
        };
        assert_eq!(corrupt_sequence(&ds, &none, &stats, &dist).unwrap(), ds);
        let flip = AdversaryConfig {
            kind: AdversaryKind::WorstCaseFlip,
            ..cfg
        };
        assert!(corrupt_sequence(&ds, &flip, &stats, &dist).is_err());
    }
}
