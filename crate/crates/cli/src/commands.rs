use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use subvote::adversary::{corrupt_sequence, mi_distribution, worst_case_flip, AdversaryConfig, AdversaryKind};
use subvote::certify::{bound_curve, build_histogram, write_curve_csv, CurvePoint};
use subvote::data::{majority_label, Dataset};
use subvote::ensemble::VotingEnsemble;
use subvote::rng::derive_seed;
use subvote::robustness::{family_bound, write_bound_csv};
use subvote::subspaces::SubspaceFamily;
use subvote::Error;

use crate::config::{ExperimentConfig, Seeds};
use crate::experiment::{
    build_family, errors, evaluate, full_feature_family, h_settings, load_data, split, train_selected, ErrorEstimate,
    Trained,
};
use crate::Failure;

/// Provenance shared by every file a run writes.
struct Stamp {
    hash: String,
    seeds: Seeds,
}

impl Stamp {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            hash: cfg.hash(),
            seeds: cfg.seeds(),
        }
    }

    fn csv_header(&self) -> String {
        let s = &self.seeds;
        format!(
            "# config_hash={} seeds=master:{},split:{},family:{},learner:{},cv:{},adversary:{},ties:{}\n",
            self.hash, s.master, s.split, s.family, s.learner, s.cv, s.adversary, s.ties
        )
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("config_hash".to_string(), self.hash.clone()),
            ("seeds".to_string(), serde_json::to_string(&self.seeds).unwrap()),
        ])
    }

    fn json(&self, cfg: &ExperimentConfig, body: Value) -> Value {
        let mut v = json!({
            "config_hash": self.hash,
            "seeds": self.seeds,
            "config": cfg,
        });
        if let (Value::Object(out), Value::Object(extra)) = (&mut v, body) {
            out.extend(extra);
        }
        v
    }
}

fn prepare_out(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::data(format!("cannot create {}: {e}", out.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(v).expect("json value serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_stamped_csv(
    path: &Path,
    stamp: &Stamp,
    body: impl FnOnce(&mut Vec<u8>) -> subvote::Result<()>,
) -> Result<(), Failure> {
    let mut buf = stamp.csv_header().into_bytes();
    body(&mut buf)?;
    write_file(path, &buf)
}

fn family_label(family: &SubspaceFamily) -> String {
    format!("{}-h{}", family.method, family.h())
}

fn size_summary(family: &SubspaceFamily) -> String {
    let sizes: BTreeSet<usize> = family.subsets.iter().map(|s| s.len()).collect();
    let list: Vec<String> = sizes.iter().rev().map(usize::to_string).collect();
    format!("{{{}}}", list.join(","))
}

fn family_json(family: &SubspaceFamily) -> Value {
    json!({
        "method": family.method,
        "n": family.n,
        "h": family.h(),
        "subset_sizes": family.subsets.iter().map(|s| s.len()).collect::<BTreeSet<_>>(),
        "dummy_features": family.dummy_indices.len(),
    })
}

pub fn generate(cfg: &ExperimentConfig, n: Option<usize>, out: &Path) -> Result<(), Failure> {
    let n = match n {
        Some(n) => n,
        None => {
            cfg.validate()?;
            load_data(cfg)?.data.n_features()
        }
    };
    let hs = h_settings(cfg);
    if hs.len() != 1 {
        return Err(Failure::usage(format!(
            "generate builds one family but {} hypothesis counts are configured; pass a single --h",
            hs.len()
        )));
    }
    let stamp = Stamp::new(cfg);
    let family = build_family(cfg, n, hs[0], stamp.seeds.family)?;
    prepare_out(out)?;
    write_json(
        &out.join("family.json"),
        &json!({"config_hash": stamp.hash, "seeds": stamp.seeds, "family": family}),
    )?;
    let l_max = cfg.certify_l_max();
    let bounds: Vec<_> = (0..=l_max)
        .map(|l| family_bound(&family, l, cfg.family.search_budget))
        .collect();
    write_stamped_csv(&out.join("tolerance.csv"), &stamp, |w| write_bound_csv(&bounds, w))?;

    println!(
        "{}: n={} h={} subset sizes {}",
        family.method,
        family.real_feature_count(),
        family.h(),
        size_summary(&family)
    );
    if !family.dummy_indices.is_empty() {
        println!(
            "padded to n'={} with {} dummy features; group size {}",
            family.n,
            family.dummy_indices.len(),
            family.h()
        );
    }
    println!("{:>4} {:>6} {:>9}  exactness", "l", "c", "r");
    for b in &bounds {
        println!("{:>4} {:>6} {:>9.4}  {}", b.l, b.c, b.r, b.exactness.as_str());
    }
    println!("wrote {}", out.join("family.json").display());
    Ok(())
}

struct System {
    name: String,
    trained: Trained,
}

fn train_systems(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    seeds: &Seeds,
) -> Result<(System, Vec<System>), Failure> {
    let n = train_set.n_features();
    let single = System {
        name: "single".into(),
        trained: train_selected(cfg, train_set, &full_feature_family(n)?, seeds)?,
    };
    let mut ensembles = Vec::new();
    for h in h_settings(cfg) {
        let family = build_family(cfg, n, h, seeds.family)?;
        let trained = train_selected(cfg, train_set, &family, seeds)?;
        ensembles.push(System {
            name: family_label(&family),
            trained,
        });
    }
    Ok((single, ensembles))
}

pub fn train_eval(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    cfg.validate()?;
    let stamp = Stamp::new(cfg);
    let seeds = &stamp.seeds;
    let loaded = load_data(cfg)?;
    let sp = split(cfg, &loaded.data, seeds)?;
    let conf = cfg.certify.confidence;
    prepare_out(out)?;

    let majority = majority_estimate(&sp.train, &sp.test, conf)?;
    let (single, ensembles) = train_systems(cfg, &sp.train, seeds)?;
    let single_clean = evaluate(&single.trained.ensemble, &sp.test, seeds, conf)?;
    let meta = stamp.metadata();
    single
        .trained
        .ensemble
        .save_with_metadata(out.join("model-single.json"), &meta)?;

    let mut rows = Vec::new();
    println!("{:<24} {:>8} {:>19}", "system", "error", "99% interval");
    println!("{:<24} {:>8.4} [{:.4}, {:.4}]", "majority-label", majority.error, majority.ci_low, majority.ci_high);
    println!(
        "{:<24} {:>8.4} [{:.4}, {:.4}]",
        "single", single_clean.error, single_clean.ci_low, single_clean.ci_high
    );
    for sys in &ensembles {
        let ens = &sys.trained.ensemble;
        let clean = evaluate(ens, &sp.test, seeds, conf)?;
        ens.save_with_metadata(out.join(format!("model-{}.json", sys.name)), &meta)?;
        println!("{:<24} {:>8.4} [{:.4}, {:.4}]", sys.name, clean.error, clean.ci_low, clean.ci_high);
        rows.push(json!({
            "name": sys.name,
            "family": family_json(&ens.family),
            "selection": sys.trained.selection,
            "clean": clean,
        }));
    }

    let manifest = stamp.json(
        cfg,
        json!({
            "data": {
                "rows": loaded.data.rows(),
                "features": loaded.data.n_features(),
                "labels": loaded.data.label_names,
                "sha256": loaded.sha256,
            },
            "split": {
                "train_rows": sp.train.rows(),
                "test_rows": sp.test.rows(),
                "train_class_counts": sp.train.class_counts(),
                "test_class_counts": sp.test.class_counts(),
            },
            "confidence": conf,
            "majority_baseline": majority,
            "single": {"selection": single.trained.selection, "clean": single_clean},
            "ensembles": rows,
        }),
    );
    write_json(&out.join("manifest.json"), &manifest)?;
    println!("wrote {}", out.join("manifest.json").display());
    Ok(())
}

fn majority_estimate(train_set: &Dataset, test: &Dataset, conf: f64) -> Result<ErrorEstimate, Failure> {
    let y = majority_label(train_set);
    let wrong = test.labels().iter().filter(|&&t| t != y).count();
    ErrorEstimate::new(wrong, test.rows(), conf)
}

pub fn attack_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    cfg.validate()?;
    if cfg.adversary.kind == AdversaryKind::WorstCaseFlip {
        return Err(Failure::usage(
            "the worst-case flip adversary acts on votes; use `certify --verify` instead",
        ));
    }
    let stamp = Stamp::new(cfg);
    let seeds = &stamp.seeds;
    let conf = cfg.certify.confidence;
    let loaded = load_data(cfg)?;
    let sp = split(cfg, &loaded.data, seeds)?;
    prepare_out(out)?;
    let dist = mi_distribution(&sp.train, cfg.adversary.mi_bins)?;
    let (single, ensembles) = train_systems(cfg, &sp.train, seeds)?;
    let y_major = majority_label(&sp.train);

    let ls: Vec<usize> = (cfg.adversary.l_min..=cfg.adversary.l_max).collect();
    // each l gets its own derived seed, so results do not depend on scheduling
    let per_l: Vec<Vec<(String, Option<usize>, ErrorEstimate)>> = ls
        .par_iter()
        .map(|&l| -> Result<_, Failure> {
            let adv = AdversaryConfig {
                l,
                kind: cfg.adversary.kind,
                seed: derive_seed(seeds.adversary, l as u64),
                mi_bins: cfg.adversary.mi_bins,
            };
            let corrupted = corrupt_sequence(&sp.test, &adv, &sp.stats, &dist)?;
            let wrong = corrupted.labels().iter().filter(|&&t| t != y_major).count();
            let mut rows = vec![("majority".to_string(), None, ErrorEstimate::new(wrong, corrupted.rows(), conf)?)];
            rows.push(("single".to_string(), None, evaluate(&single.trained.ensemble, &corrupted, seeds, conf)?));
            for sys in &ensembles {
                let e = evaluate(&sys.trained.ensemble, &corrupted, seeds, conf)?;
                rows.push((sys.name.clone(), Some(sys.trained.ensemble.h()), e));
            }
            Ok(rows)
        })
        .collect::<Result<_, _>>()?;

    let mut csv_text = String::from("system,h,l,errors,m,error,ci_low,ci_high\n");
    for (l, rows) in ls.iter().zip(&per_l) {
        for (name, h, e) in rows {
            csv_text += &format!(
                "{name},{},{l},{},{},{:.6},{:.6},{:.6}\n",
                h.map_or(String::new(), |h| h.to_string()),
                e.errors,
                e.m,
                e.error,
                e.ci_low,
                e.ci_high
            );
        }
    }
    let mut bytes = stamp.csv_header().into_bytes();
    bytes.extend(csv_text.as_bytes());
    write_file(&out.join("sweep.csv"), &bytes)?;

    let summary_l = cfg.adversary.summary_l.unwrap_or(cfg.adversary.l_max);
    let at = ls
        .iter()
        .position(|&l| l == summary_l)
        .ok_or_else(|| Failure::usage(format!("summary_l={summary_l} is outside the swept range")))?;
    let ranking: Vec<Value> = per_l[at]
        .iter()
        .map(|(name, h, e)| json!({"system": name, "h": h, "error": e.error, "ci_low": e.ci_low, "ci_high": e.ci_high}))
        .collect();
    let best = per_l[at]
        .iter()
        .filter(|(_, h, _)| h.is_some())
        .min_by(|a, b| a.2.error.total_cmp(&b.2.error))
        .map(|(name, _, _)| name.clone());
    let summary = stamp.json(
        cfg,
        json!({"summary_l": summary_l, "systems": ranking, "best_ensemble": best}),
    );
    write_json(&out.join("summary.json"), &summary)?;

    println!("{:<24} {}", "system", ls.iter().map(|l| format!("l={l:<5}")).collect::<String>());
    for i in 0..per_l[0].len() {
        let line: String = per_l.iter().map(|rows| format!("{:<7.4}", rows[i].2.error)).collect();
        println!("{:<24} {line}", per_l[0][i].0);
    }
    if let Some(best) = best {
        println!("lowest ensemble error at l={summary_l}: {best}");
    }
    println!("wrote {}", out.join("sweep.csv").display());
    Ok(())
}

/// Ensembles to certify: the saved model, or one trained per configured
/// hypothesis count.
fn certify_ensembles(
    cfg: &ExperimentConfig,
    model: Option<&PathBuf>,
    train_set: &Dataset,
    seeds: &Seeds,
) -> Result<Vec<VotingEnsemble>, Failure> {
    if let Some(path) = model {
        return Ok(vec![VotingEnsemble::load(path)?]);
    }
    h_settings(cfg)
        .into_iter()
        .map(|h| {
            let family = build_family(cfg, train_set.n_features(), h, seeds.family)?;
            Ok(train_selected(cfg, train_set, &family, seeds)?.ensemble)
        })
        .collect()
}

/// Certifies every ensemble. With more than one, each gets its own
/// subdirectory of `out`. Returns a verification failure only after all
/// outputs are written.
pub fn certify(cfg: &ExperimentConfig, model: Option<&PathBuf>, verify: bool, out: &Path) -> Result<(), Failure> {
    cfg.validate()?;
    let stamp = Stamp::new(cfg);
    let loaded = load_data(cfg)?;
    let sp = split(cfg, &loaded.data, &stamp.seeds)?;
    let ensembles = certify_ensembles(cfg, model, &sp.train, &stamp.seeds)?;
    let mut violated = Vec::new();
    for ens in &ensembles {
        let dir = if ensembles.len() == 1 {
            out.to_path_buf()
        } else {
            out.join(family_label(&ens.family))
        };
        println!("{}", family_label(&ens.family));
        if !certify_one(cfg, &stamp, ens, &sp.test, verify, &dir)? {
            violated.push(family_label(&ens.family));
        }
    }
    if !violated.is_empty() {
        return Err(Failure::verify(format!("certified bound violated for {}", violated.join(", "))));
    }
    if verify {
        println!("verified: worst-case flip error stays under the certified bound for every l");
    }
    Ok(())
}

/// Writes the histogram, curve and report for one ensemble. Returns false
/// when verification finds the bound violated.
fn certify_one(
    cfg: &ExperimentConfig,
    stamp: &Stamp,
    ens: &VotingEnsemble,
    test: &Dataset,
    verify: bool,
    out: &Path,
) -> Result<bool, Failure> {
    let seeds = &stamp.seeds;
    let conf = cfg.certify.confidence;
    prepare_out(out)?;
    let hist = build_histogram(ens, test)?;
    let budget = cfg.family.search_budget;
    let l_max = cfg.certify_l_max();
    let curve = bound_curve(&hist, |l| family_bound(&ens.family, l, budget), l_max, conf).map_err(|e| match e {
        Error::UnsoundCertificate { .. } => Failure::usage(format!(
            "{e}; raise family.search_budget or choose a family with an analytic bound"
        )),
        other => other.into(),
    })?;
    write_stamped_csv(&out.join("histogram.csv"), stamp, |w| hist.write_csv(w))?;
    write_stamped_csv(&out.join("curve.csv"), stamp, |w| write_curve_csv(&curve, w))?;
    let clean = evaluate(ens, test, seeds, conf)?;
    let mut body = json!({
        "family": family_json(&ens.family),
        "clean": clean,
        "confidence": conf,
        "curve": curve,
    });

    println!("{:>4} {:>5} {:>10} {:>10} {:>10}", "l", "c", "empirical", "hoeffding", "binomial");
    for p in &curve {
        let b = &p.bound;
        println!(
            "{:>4} {:>5} {:>10.4} {:>10.4} {:>10.4}",
            p.l, b.c, b.empirical_loss, b.hoeffding_bound, b.binomial_bound
        );
    }

    let mut sound = true;
    if verify {
        let (rows, violations) = verify_curve(ens, test, &curve, seeds)?;
        let mut text = String::from("l,c,flip_error,binomial,ok\n");
        for r in &rows {
            text += &format!("{},{},{:.6},{:.6},{}\n", r.0, r.1, r.2, r.3, r.2 <= r.3);
        }
        let mut bytes = stamp.csv_header().into_bytes();
        bytes.extend(text.as_bytes());
        write_file(&out.join("verify.csv"), &bytes)?;
        body["verified"] = json!(violations.is_empty());
        if !violations.is_empty() {
            eprintln!(
                "certified bound violated at l = {}",
                violations.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
            );
            sound = false;
        }
    }
    write_json(&out.join("certify.json"), &stamp.json(cfg, body))?;
    println!("wrote {}", out.join("curve.csv").display());
    Ok(sound)
}

/// Applies the worst-case vote flip with each curve point's `c` and compares
/// the resulting test error with the certified binomial bound.
#[allow(clippy::type_complexity)]
fn verify_curve(
    ens: &VotingEnsemble,
    test: &Dataset,
    curve: &[CurvePoint],
    seeds: &Seeds,
) -> Result<(Vec<(usize, usize, f64, f64)>, Vec<usize>), Failure> {
    let votes = ens.vote_matrix(test)?;
    let labels = test.labels();
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for p in curve {
        let flipped: Vec<_> = votes.iter().zip(labels).map(|(s, &y)| worst_case_flip(s, y, p.bound.c)).collect();
        let err = errors(&flipped, labels, seeds.ties) as f64 / labels.len() as f64;
        if err > p.bound.binomial_bound {
            violations.push(p.l);
        }
        rows.push((p.l, p.bound.c, err, p.bound.binomial_bound));
    }
    Ok((rows, violations))
}

/// Runs the certification soundness check and, given a manifest, replays
/// `train-eval` and requires identical output.
pub fn verify(cfg: &ExperimentConfig, model: Option<&PathBuf>, manifest: Option<&PathBuf>, out: &Path) -> Result<(), Failure> {
    certify(cfg, model, true, out)?;
    if let Some(path) = manifest {
        let recorded = fs::read(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
        let replay_dir = out.join("replay");
        train_eval(cfg, &replay_dir)?;
        let fresh = fs::read(replay_dir.join("manifest.json")).map_err(|e| Failure::data(e.to_string()))?;
        if fresh != recorded {
            return Err(Failure::verify(format!(
                "replayed manifest differs from {}",
                path.display()
            )));
        }
        println!("replay matches {}", path.display());
    }
    Ok(())
}
