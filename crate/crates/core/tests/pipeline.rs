use rand::Rng;

use subvote::adversary::{corrupt_sequence, mi_distribution, AdversaryConfig, AdversaryKind, FeatureStats};
use subvote::certify::{build_histogram, certified_bound, corrupt_loss, hoeffding_epsilon};
use subvote::data::{binomial_ci, majority_baseline, permute_split, synth_redundant, Dataset, SynthConfig};
use subvote::ensemble::{train, BaseLearnerConfig, LearnerKind, VotingEnsemble, MODEL_VERSION};
use subvote::rng::{child_rng, rng_from};
use subvote::subspaces::{fixed_split, modulus_padded, random_subspace, Subspace};
use subvote::tree::MaxFeatures;
use subvote::Error;

fn synth(noise: f64, m: usize, seed: u64) -> Dataset {
    synth_redundant(&SynthConfig {
        signals: 4,
        copies: 5,
        noise,
        m,
        d: 3,
        seed,
    })
    .unwrap()
}

fn forest(seed: u64) -> BaseLearnerConfig {
    BaseLearnerConfig {
        kind: LearnerKind::RandomForest,
        trees: 5,
        max_features: MaxFeatures::Sqrt,
        max_depth: None,
        seed,
    }
}

fn trained(noise: f64) -> (VotingEnsemble, Dataset, Dataset) {
    let split = permute_split(&synth(noise, 600, 3), 0.8, 100_000, 1).unwrap();
    let family = fixed_split(20, 5, 2).unwrap();
    (train(&split.train, &family, &forest(9)).unwrap(), split.train, split.test)
}

#[test]
fn one_hypothesis_per_subspace_and_deterministic() {
    let (a, train_set, test) = trained(1.0);
    assert_eq!(a.h(), 5);
    let b = train(&train_set, &a.family, &forest(9)).unwrap();
    assert_eq!(a, b);
    for i in 0..test.rows() {
        assert_eq!(a.vote_counts(test.row(i)).unwrap(), b.vote_counts(test.row(i)).unwrap());
        assert_eq!(a.vote_counts(test.row(i)).unwrap().total(), 5);
    }
}

#[test]
fn hypotheses_ignore_features_outside_their_subspace() {
    let (ens, _, test) = trained(1.0);
    let mut rng = rng_from(4);
    for i in 0..50 {
        let x = test.row(i);
        for (j, subspace) in ens.family.subsets.iter().enumerate() {
            let mut y = x.to_vec();
            for (f, v) in y.iter_mut().enumerate() {
                if !subspace.contains(f) {
                    *v = rng.random_range(-100.0..100.0);
                }
            }
            assert_eq!(ens.predict_one(j, x), ens.predict_one(j, &y));
        }
    }
}

#[test]
fn vote_counts_do_not_depend_on_evaluation_order() {
    let (ens, _, test) = trained(1.5);
    let mut shuffled = ens.clone();
    shuffled.hypotheses.reverse();
    shuffled.family.subsets.reverse();
    for i in 0..test.rows() {
        assert_eq!(ens.vote_counts(test.row(i)).unwrap(), shuffled.vote_counts(test.row(i)).unwrap());
        assert_eq!(
            ens.predict_majority(test.row(i), i as u64).unwrap(),
            shuffled.predict_majority(test.row(i), i as u64).unwrap()
        );
    }
}

#[test]
fn training_rejects_bad_inputs() {
    let ds = synth(0.5, 50, 1);
    // 20 real features padded to 21 leaves one subset of dummies only
    let mut family = modulus_padded(20, 3).unwrap();
    family.subsets.push(Subspace::new(vec![20], 21).unwrap());
    let err = train(&ds, &family, &forest(0)).unwrap_err();
    assert!(matches!(err, Error::NoUsableFeatures(7)), "{err}");

    let empty = ds.select(&[]);
    assert!(matches!(train(&empty, &fixed_split(20, 2, 0).unwrap(), &forest(0)), Err(Error::EmptyDataset)));

    let (ens, _, _) = trained(1.0);
    assert!(matches!(ens.vote_counts(&[0.0; 3]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn single_class_training_gives_constant_votes() {
    let ds = synth(1.0, 80, 2);
    let rows: Vec<usize> = (0..ds.rows()).filter(|&i| ds.label(i) == 2).collect();
    let one_class = ds.select(&rows);
    let ens = train(&one_class, &fixed_split(20, 4, 1).unwrap(), &forest(1)).unwrap();
    for i in 0..ds.rows() {
        assert_eq!(ens.vote_counts(ds.row(i)).unwrap().counts(), &[0, 0, 4]);
    }
}

#[test]
fn dummy_features_are_never_read() {
    let ds = synth(1.0, 200, 5);
    let family = modulus_padded(20, 3).unwrap();
    assert_eq!(family.n, 21);
    let ens = train(&ds, &family, &forest(2)).unwrap();
    assert_eq!(ens.h(), 7);
    for i in 0..ds.rows() {
        ens.vote_counts(ds.row(i)).unwrap();
    }
}

#[test]
fn sequential_prediction_matches_full_vote_at_confidence_one() {
    let (ens, _, test) = trained(2.0);
    for i in 0..test.rows() {
        let seed = 1000 + i as u64;
        let (label, used) = ens.predict_sequential(test.row(i), 1.0, seed).unwrap();
        assert_eq!(used, ens.h());
        assert_eq!(label, ens.predict_majority(test.row(i), seed).unwrap());
    }
    assert!(ens.predict_sequential(test.row(0), 0.4, 0).is_err());
}

#[test]
fn sequential_prediction_saves_work_on_a_large_ensemble() {
    let ds = synth(0.3, 400, 8);
    let family = random_subspace(20, 4, 60, 1).unwrap();
    let config = BaseLearnerConfig {
        kind: LearnerKind::DecisionTree,
        ..forest(4)
    };
    let ens = train(&ds, &family, &config).unwrap();
    let mut used = 0;
    let mut disagree = 0;
    for i in 0..ds.rows() {
        let (label, n) = ens.predict_sequential(ds.row(i), 0.99, i as u64).unwrap();
        used += n;
        disagree += usize::from(label != ens.predict_majority(ds.row(i), i as u64).unwrap());
    }
    assert!(used < ds.rows() * 60 / 2, "evaluated {used}");
    assert!(disagree as f64 / ds.rows() as f64 <= 0.01 + 3.0 * (0.01 * 0.99 / 400.0f64).sqrt());
}

#[test]
fn model_round_trip_and_version_check() {
    let (ens, _, test) = trained(1.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    ens.save(&path).unwrap();
    let back = VotingEnsemble::load(&path).unwrap();
    assert_eq!(back, ens);
    assert_eq!(back.vote_counts(test.row(0)).unwrap(), ens.vote_counts(test.row(0)).unwrap());

    let text = ens.to_json().unwrap();
    let bumped = text.replacen(&format!("\"version\":{MODEL_VERSION}"), "\"version\":99", 1);
    assert!(matches!(VotingEnsemble::from_json(&bumped), Err(Error::UnsupportedVersion(99))));
    assert!(matches!(
        VotingEnsemble::load(dir.path().join("missing.json")),
        Err(Error::MissingFile { .. })
    ));
}

#[test]
fn histogram_counts_every_test_instance() {
    let (ens, _, test) = trained(1.0);
    let hist = build_histogram(&ens, &test).unwrap();
    assert_eq!(hist.m as usize, test.rows());
    assert!(hist.counts.keys().all(|d| d.abs() <= 5));
}

#[test]
fn feature_corruption_never_beats_the_certificate() {
    // any change to l features reaches at most l hypotheses of a fixed
    // split, so an instance with margin above 2l stays correct
    let (ens, train_set, test) = trained(2.0);
    let stats = FeatureStats::from_dataset(&train_set).unwrap();
    let hist = build_histogram(&ens, &test).unwrap();
    for l in 0..=3usize {
        let bound = certified_bound(&hist, l, 0.99).unwrap();
        let mut worst_errors = 0;
        for trial in 0..30u64 {
            let mut rng = child_rng(trial, l as u64);
            let mut errors = 0;
            for i in 0..test.rows() {
                let mut x = test.row(i).to_vec();
                for f in rand::seq::index::sample(&mut rng, x.len(), l) {
                    x[f] = rng.random_range(stats.min[f] - 3.0..stats.max[f] + 3.0);
                }
                let y = test.label(i);
                let wrong = ens.predict_majority(&x, i as u64).unwrap() != y;
                let clean = ens.vote_counts(test.row(i)).unwrap();
                if wrong {
                    assert_eq!(corrupt_loss(&clean, y, l), 1, "instance {i} broke with margin above 2l");
                }
                errors += usize::from(wrong);
            }
            worst_errors = worst_errors.max(errors);
        }
        assert!(worst_errors as f64 / test.rows() as f64 <= bound.empirical_loss);
    }
}

#[test]
fn weak_attack_is_reproducible_and_budgeted() {
    let split = permute_split(&synth(1.0, 300, 4), 0.8, 100_000, 6).unwrap();
    let dist = mi_distribution(&split.train, 10).unwrap();
    let config = AdversaryConfig {
        l: 4,
        kind: AdversaryKind::WeakMi,
        seed: 12,
        mi_bins: 10,
    };
    let a = corrupt_sequence(&split.test, &config, &split.stats, &dist).unwrap();
    assert_eq!(a, corrupt_sequence(&split.test, &config, &split.stats, &dist).unwrap());
    let changed = (0..a.rows())
        .map(|i| subvote::adversary::zero_norm_distance(a.row(i), split.test.row(i)))
        .collect::<Vec<_>>();
    assert!(changed.iter().all(|&c| c <= 4));
    assert!(changed.contains(&4));
    // the baseline ignores features
    assert_eq!(
        majority_baseline(&split.train, &a).unwrap(),
        majority_baseline(&split.train, &split.test).unwrap()
    );
}

#[test]
fn split_statistics_ignore_test_rows() {
    let ds = synth(1.0, 200, 1);
    let split = permute_split(&ds, 0.8, 100_000, 3).unwrap();
    let mut poisoned = ds.clone();
    let train_rows: std::collections::HashSet<Vec<u64>> = (0..split.train.rows())
        .map(|i| split.train.row(i).iter().map(|v| v.to_bits()).collect())
        .collect();
    for i in 0..poisoned.rows() {
        let key: Vec<u64> = poisoned.row(i).iter().map(|v| v.to_bits()).collect();
        if !train_rows.contains(&key) {
            poisoned.row_mut(i).iter_mut().for_each(|v| *v = 1e6);
        }
    }
    let again = permute_split(&poisoned, 0.8, 100_000, 3).unwrap();
    assert_eq!(again.stats, split.stats);
    assert_eq!(again.train, split.train);
}

#[test]
fn large_split_respects_cap() {
    let ds = synth(1.0, 5000, 2);
    let split = permute_split(&ds, 0.8, 700, 1).unwrap();
    assert_eq!(split.train.rows(), 700);
    assert_eq!(split.test.rows(), 700);
}

#[test]
fn noiseless_copies_each_classify_perfectly() {
    let ds = synth_redundant(&SynthConfig {
        signals: 3,
        copies: 20,
        noise: 0.0,
        m: 300,
        d: 4,
        seed: 1,
    })
    .unwrap();
    let family = fixed_split(60, 60, 0).unwrap();
    let config = BaseLearnerConfig {
        kind: LearnerKind::DecisionTree,
        ..forest(0)
    };
    let ens = train(&ds, &family, &config).unwrap();
    for i in 0..ds.rows() {
        assert_eq!(ens.vote_counts(ds.row(i)).unwrap().counts()[ds.label(i)], 60);
    }
}

#[test]
fn corrupting_one_signal_only_moves_its_hypotheses() {
    // with signals=4, copies=5 and a fixed split of 4 groups in natural
    // order, group j holds exactly the copies of signal j
    let ds = synth(0.3, 400, 7);
    let order: Vec<usize> = (0..20).collect();
    let family = subvote::subspaces::fixed_split_with_order(&order, 4).unwrap();
    let ens = train(&ds, &family, &forest(3)).unwrap();
    let stats = FeatureStats::from_dataset(&ds).unwrap();
    let mut moved = [0usize; 4];
    for i in 0..ds.rows() {
        let mut x = ds.row(i).to_vec();
        for (f, v) in x.iter_mut().enumerate().take(5) {
            *v = if *v <= stats.mean[f] { stats.max[f] } else { stats.min[f] };
        }
        for (j, m) in moved.iter_mut().enumerate() {
            *m += usize::from(ens.predict_one(j, &x) != ens.predict_one(j, ds.row(i)));
        }
    }
    assert!(moved[0] > ds.rows() / 4, "{moved:?}");
    assert_eq!(&moved[1..], &[0, 0, 0]);
}

#[test]
fn interval_coverage() {
    for &p in &[0.1, 0.5] {
        let mut rng = rng_from(17);
        let reps = 10_000;
        let covered = (0..reps)
            .filter(|_| {
                let errors = (0..200).filter(|_| rng.random::<f64>() < p).count();
                let (lo, hi) = binomial_ci(errors, 200, 0.95).unwrap();
                lo <= p && p <= hi
            })
            .count();
        assert!(covered as f64 / reps as f64 >= 0.94, "p={p}: {covered}");
    }
}

#[test]
fn bounds_converge_to_the_empirical_loss() {
    for &m in &[100u64, 10_000, 1_000_000] {
        let errors = m / 10;
        let hist = subvote::certify::MarginHistogram {
            h: 3,
            m,
            counts: [(-1, errors), (3, m - errors)].into_iter().collect(),
        };
        let b = certified_bound(&hist, 0, 0.99).unwrap();
        assert_eq!(b.epsilon, hoeffding_epsilon(m, 0.99).unwrap());
        let tol = 2.0 / (m as f64).sqrt();
        assert!(b.hoeffding_bound - 0.1 <= tol && b.binomial_bound - 0.1 <= tol, "m={m}: {b:?}");
    }
}
