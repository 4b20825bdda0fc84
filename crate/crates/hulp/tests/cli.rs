use std::path::Path;
use std::process::{Command, Output};

const QUICK: &str = r#"
folds = 5
seeds = [0]
[cohort]
n_patients = 200
noise_sigma = 6.0
missing_rates = [0.3]
[train]
epochs = 12
[sweep]
rates = [0.3, 0.4, 0.5, 0.7]
fractions = [0.0, 0.5, 1.0]
"#;

fn hulp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hulp"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("quick.toml"), QUICK).unwrap();
    dir
}

#[test]
fn generate_is_deterministic() {
    let dir = setup();
    for name in ["a.jsonl", "b.jsonl"] {
        let out = hulp(dir.path(), &["generate", "--seed", "7", "--out", name]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    let out = hulp(dir.path(), &["generate", "--seed", "8", "--out", "c.jsonl"]);
    assert!(out.status.success());
    assert_ne!(a, std::fs::read(dir.path().join("c.jsonl")).unwrap());
}

#[test]
fn train_then_evaluate_with_interventions() {
    let dir = setup();
    let p = dir.path();
    assert!(hulp(p, &["generate", "--config", "quick.toml", "--out", "cohort.jsonl"]).status.success());
    for out in ["run1", "run2"] {
        let o = hulp(p, &["train", "--config", "quick.toml", "--cohort", "cohort.jsonl", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ckpt = std::fs::read(p.join("run1/checkpoint.json")).unwrap();
    assert_eq!(ckpt, std::fs::read(p.join("run2/checkpoint.json")).unwrap());
    let csv = std::fs::read_to_string(p.join("run1/fit_report.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "epoch,l1,ll,rank,total,val_cindex,lr");
    assert_eq!(csv.lines().count(), 13);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("run1/fit_report.json")).unwrap()).unwrap();
    assert_eq!(report["epochs"].as_array().unwrap().len(), 12);

    let o = hulp(
        p,
        &[
            "evaluate",
            "--config",
            "quick.toml",
            "--checkpoint",
            "run1/checkpoint.json",
            "--cohort",
            "cohort.jsonl",
            "--with-interventions",
            "--out",
            "eval",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("eval/evaluate.json")).unwrap()).unwrap();
    let without = summary["cindex_mean"].as_f64().unwrap();
    let with = summary["cindex_with_interventions_mean"].as_f64().unwrap();
    assert!(with >= without, "{with} < {without}");

    let o = hulp(
        p,
        &["sweep-intervention", "--config", "quick.toml", "--checkpoint", "run1/checkpoint.json", "--cohort", "cohort.jsonl", "--out", "sw"],
    );
    assert!(o.status.success());
    let csv = std::fs::read_to_string(p.join("sw/intervention_sweep.csv")).unwrap();
    let fractions: Vec<&str> = csv.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(fractions, ["fraction", "0", "0.5", "1"]);
}

#[test]
fn sweep_missingness_emits_table_shape() {
    let dir = setup();
    let toml = "seeds = [0]\n[cohort]\nn_patients = 120\n[train]\nepochs = 3\n";
    std::fs::write(dir.path().join("tiny.toml"), toml).unwrap();
    let o = hulp(dir.path(), &["sweep-missingness", "--config", "tiny.toml", "--out", "sweep"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("sweep/missingness_table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "method,0.3,0.4,0.5,0.7");
    let methods: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["Mode", "kNN (k=1)", "HuLP"]);
    let rows = std::fs::read_to_string(dir.path().join("sweep/missingness_rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 3 * 4);
}

#[test]
fn compare_emits_one_row_per_method_and_fold() {
    let dir = setup();
    let toml = "seeds = [0]\nfolds = 2\n[cohort]\nn_patients = 80\nmissing_rates = [0.2]\n[train]\nepochs = 2\n";
    std::fs::write(dir.path().join("tiny.toml"), toml).unwrap();
    let o = hulp(dir.path(), &["compare", "--config", "tiny.toml", "--out", "cmp"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("cmp/comparison.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,modality,seed,fold,cindex");
    assert_eq!(lines.len(), 1 + 4 * 2);
}

#[test]
fn exit_codes() {
    let dir = setup();
    let p = dir.path();
    assert_eq!(hulp(p, &["train", "--config", "missing.toml"]).status.code(), Some(2));
    std::fs::write(p.join("bad.toml"), "[train]\nlearning_rate = -1.0\n").unwrap();
    assert_eq!(hulp(p, &["train", "--config", "bad.toml"]).status.code(), Some(2));
    assert_eq!(hulp(p, &["bogus-command"]).status.code(), Some(2));
    std::fs::write(p.join("empty.jsonl"), "").unwrap();
    assert_eq!(hulp(p, &["train", "--cohort", "empty.jsonl"]).status.code(), Some(3));
    std::fs::write(p.join("ckpt.json"), "{\"format\":\"hulp-ckpt/1\"").unwrap();
    assert_eq!(hulp(p, &["serve", "--checkpoint", "ckpt.json"]).status.code(), Some(3));
    std::fs::write(p.join("diverge.toml"), "[cohort]\nn_patients = 60\n[train]\nepochs = 3\nlearning_rate = 1e300\nwarmup_epochs = 0\ngrad_clip = 1e300\n").unwrap();
    assert_eq!(hulp(p, &["train", "--config", "diverge.toml"]).status.code(), Some(4));
}

#[test]
fn serve_bind_failure_exits_with_five() {
    let dir = setup();
    let p = dir.path();
    assert!(hulp(p, &["generate", "--config", "quick.toml", "--out", "c.jsonl"]).status.success());
    let tiny = "[cohort]\nn_patients = 60\n[train]\nepochs = 1\n";
    std::fs::write(p.join("tiny.toml"), tiny).unwrap();
    assert!(hulp(p, &["train", "--config", "tiny.toml", "--out", "m"]).status.success());
    let taken = std::net::TcpListener::bind("0.0.0.0:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = hulp(p, &["serve", "--checkpoint", "m/checkpoint.json", "--port", &port]);
    assert_eq!(o.status.code(), Some(5), "{}", String::from_utf8_lossy(&o.stderr));
}
