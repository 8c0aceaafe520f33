use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SYNTH: &str = "signals=4,copies=5,noise=1.5,m=300,d=2,seed=11";

fn subvote(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subvote"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A fast synthetic run: `cmd` then `extra`, then the shared settings.
fn small_run<'a>(cmd: &'a str, h: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![cmd];
    args.extend_from_slice(extra);
    args.extend([
        "--synth", SYNTH, "--method", "fixed-split", "--h", h, "--trees", "5", "--max-features", "sqrt",
        "--l-max", "4", "--seed", "9",
    ]);
    args
}

/// Data lines of a stamped CSV, without the provenance comment.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn generate_reports_fixed_split_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let o = subvote(&["generate", "--n", "409", "--method", "fixed-split", "--h", "25", "--l-max", "3"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("subset sizes {17,16}"));
    let family: Value = serde_json::from_slice(&fs::read(dir.path().join("family.json")).unwrap()).unwrap();
    let subsets = family["family"]["subsets"].as_array().unwrap();
    assert_eq!(subsets.len(), 25);
    let seventeen = subsets.iter().filter(|s| s.as_array().unwrap().len() == 17).count();
    assert_eq!(seventeen, 409 % 25);
    let tol = fs::read_to_string(dir.path().join("tolerance.csv")).unwrap();
    assert!(tol.starts_with("# config_hash="));
}

#[test]
fn generate_reports_modulus_padding() {
    let dir = tempfile::tempdir().unwrap();
    let o = subvote(&["generate", "--n", "10", "--method", "modulus", "--k", "3", "--l-max", "2"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("padded to n'=12 with 2 dummy features"), "{text}");
}

#[test]
fn oversized_random_family_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = subvote(&["generate", "--n", "6", "--method", "random-subspace", "--k", "2", "--h", "100"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("C(6,2)=15"), "{err}");
    assert!(!err.contains("panicked"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_flag = subvote(&["train-eval", "--bogus"], dir.path());
    assert_eq!(bad_flag.status.code(), Some(2));
    let no_data = subvote(&["train-eval"], dir.path());
    assert_eq!(no_data.status.code(), Some(2));
    let missing = subvote(&["train-eval", "--data", "/nonexistent/x.csv"], dir.path());
    assert_eq!(missing.status.code(), Some(3));

    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "a,b,label\n1,2,x\n3,oops,y\n").unwrap();
    let o = subvote(&["train-eval", "--data", csv.to_str().unwrap(), "--h", "1"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 3") && err.contains("column b"), "{err}");
}

#[test]
fn train_eval_replays_byte_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = small_run("train-eval", "3,5", &[]);
    assert!(subvote(&args, a.path()).status.success());
    assert!(subvote(&args, b.path()).status.success());
    for file in ["manifest.json", "model-single.json", "model-fixed-split-h3.json", "model-fixed-split-h5.json"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }

    let manifest = a.path().join("manifest.json");
    let o = subvote(&small_run("verify", "3,5", &["--manifest", manifest.to_str().unwrap()]), b.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("replay matches"));

    let m: Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
    assert_eq!(m["ensembles"].as_array().unwrap().len(), 2);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn replay_mismatch_exits_with_verification_code() {
    let a = tempfile::tempdir().unwrap();
    assert!(subvote(&small_run("train-eval", "3,5", &[]), a.path()).status.success());
    let manifest = a.path().join("manifest.json");
    // a larger learner grid must not reproduce the recorded manifest
    let o = subvote(
        &small_run("verify", "3,5", &["--manifest", manifest.to_str().unwrap(), "--trees", "6"]),
        a.path().join("v").as_path(),
    );
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn sweep_majority_is_constant_and_l0_is_clean() {
    let a = tempfile::tempdir().unwrap();
    let o = subvote(&small_run("attack-sweep", "3,5", &[]), a.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&a.path().join("sweep.csv"));
    let majority: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] == "majority").collect();
    assert_eq!(majority.len(), 5);
    assert!(majority.iter().all(|r| r[3] == majority[0][3]));

    let b = tempfile::tempdir().unwrap();
    assert!(subvote(&small_run("train-eval", "3,5", &[]), b.path()).status.success());
    let m: Value = serde_json::from_slice(&fs::read(b.path().join("manifest.json")).unwrap()).unwrap();
    for e in m["ensembles"].as_array().unwrap() {
        let name = e["name"].as_str().unwrap();
        let at0 = rows.iter().find(|r| r[0] == name && r[2] == "0").unwrap();
        assert_eq!(at0[3], e["clean"]["errors"].to_string(), "{name}");
    }
    let single0 = rows.iter().find(|r| r[0] == "single" && r[2] == "0").unwrap();
    assert_eq!(single0[3], m["single"]["clean"]["errors"].to_string());

    let summary: Value = serde_json::from_slice(&fs::read(a.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["summary_l"], 4);
}

#[test]
fn certify_verify_holds_and_loads_saved_models() {
    let a = tempfile::tempdir().unwrap();
    let o = subvote(&small_run("certify", "5", &["--verify"]), a.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let verify = csv_rows(&a.path().join("verify.csv"));
    assert_eq!(verify.len(), 5);
    assert!(verify.iter().all(|r| r[4] == "true"));
    let curve = csv_rows(&a.path().join("curve.csv"));
    let cs: Vec<usize> = curve.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(cs.windows(2).all(|w| w[0] <= w[1]));

    let t = tempfile::tempdir().unwrap();
    assert!(subvote(&small_run("train-eval", "3,5", &[]), t.path()).status.success());
    let model = t.path().join("model-fixed-split-h3.json");
    let o = subvote(&small_run("certify", "3,5", &["--model", model.to_str().unwrap()]), t.path().join("c").as_path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&fs::read(t.path().join("c/certify.json")).unwrap()).unwrap();
    assert_eq!(report["family"]["h"], 3);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        "seed = 9\n[data.synth]\nsignals = 4\ncopies = 5\nnoise = 1.5\nm = 300\nd = 2\nseed = 11\n\
         [family]\nmethod = \"fixed-split\"\nh = [3]\n[learner]\ntrees = [5]\nmax_features = [\"sqrt\"]\n",
    )
    .unwrap();
    let o = subvote(&["train-eval", "--config", cfg.to_str().unwrap(), "--h", "5"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["family"]["h"], serde_json::json!([5]));

    fs::write(&cfg, "sed = 1\n").unwrap();
    let o = subvote(&["train-eval", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
