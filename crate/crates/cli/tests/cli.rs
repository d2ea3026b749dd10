use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn putree(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_putree"))
        .args(args)
        .current_dir(dir)
        .env_remove("PUTREE_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Gaussian tables plus a smoke-sized config that reads them.
fn csv_workspace() -> TempDir {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let o = putree(
        d,
        &[
            "synth", "--kind", "gaussian", "--train-rows", "2000", "--test-rows", "400", "--prior", "0.5", "--out",
            "syn",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let smoke = stdout(&putree(d, &["config", "--preset", "smoke"]));
    let start = smoke.find("[source]").unwrap();
    let end = smoke.find("[sizes]").unwrap();
    let config = format!(
        "{}[source]\nkind = \"csv\"\ntrain = \"syn/train.csv\"\ntest = \"syn/test.csv\"\nschema = \"syn/schema.toml\"\n\n{}",
        &smoke[..start],
        &smoke[end..]
    )
    .replace("prior = 0.124", "prior = 0.5");
    fs::write(d.join("csv.toml"), config).unwrap();
    tmp
}

#[test]
fn help_and_usage_errors() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&putree(tmp.path(), &["--help"])), 0);
    assert_eq!(code(&putree(tmp.path(), &["bogus"])), 1);
    assert_eq!(code(&putree(tmp.path(), &["config"])), 1);
    assert_eq!(code(&putree(tmp.path(), &["config", "--preset", "nope"])), 1);
    assert_eq!(code(&putree(tmp.path(), &["config", "--preset", "nsl-kdd-desk"])), 1);
    assert_eq!(code(&putree(tmp.path(), &["export-tree", "--model", "missing.json"])), 1);
}

#[test]
fn config_document_roundtrips() {
    let tmp = TempDir::new().unwrap();
    let first = putree(tmp.path(), &["config", "--preset", "diabetes-desk"]);
    assert_eq!(code(&first), 0);
    fs::write(tmp.path().join("c.toml"), &first.stdout).unwrap();
    let second = putree(tmp.path(), &["config", "--config", "c.toml"]);
    assert_eq!(stdout(&second), stdout(&first));
    let text = stdout(&first);
    for key in ["[tree]", "[tree.augment]", "[tree.explain]", "[tree.fusion]", "[network]", "lambda"] {
        assert!(text.contains(key), "{key} missing");
    }
}

#[test]
fn benchmark_preset_reads_data_dir_from_env() {
    let tmp = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_putree"))
        .args(["config", "--preset", "nsl-kdd-desk"])
        .env("PUTREE_DATA_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("nsl_kdd_train.csv"));
}

#[test]
fn train_evaluate_export_cycle() {
    let tmp = csv_workspace();
    let d = tmp.path();
    let o = putree(d, &["train", "--config", "csv.toml", "--method", "putree", "--seed", "3", "--out", "tree.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let o = putree(d, &["evaluate", "--model", "tree.json", "--config", "csv.toml", "--seed", "3", "--json", "m.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let records: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(records[0]["n_runs"], 1);
    assert_eq!(records[0]["std"]["f1"], 0.0);

    let o = putree(d, &["evaluate", "--model", "tree.json", "--test", "syn/test.csv", "--schema", "syn/schema.toml"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("tree"));

    let dot = putree(d, &["export-tree", "--model", "tree.json", "--format", "dot"]);
    assert_eq!(code(&dot), 0);
    assert!(stdout(&dot).starts_with("digraph"));
    let json = putree(d, &["export-tree", "--model", "tree.json", "--format", "json", "--out", "tree_skeleton.json"]);
    assert_eq!(code(&json), 0);
    assert!(d.join("tree_skeleton.json").exists());
    assert_eq!(code(&putree(d, &["export-tree", "--model", "tree.json", "--format", "xml"])), 1);

    let o = putree(d, &["train", "--config", "csv.toml", "--method", "nnpu", "--out", "nn.json"]);
    assert_eq!(code(&o), 0);
    assert_eq!(code(&putree(d, &["export-tree", "--model", "nn.json"])), 1);
}

#[test]
fn run_writes_artifacts_and_is_repeatable() {
    let tmp = csv_workspace();
    let d = tmp.path();
    let args = ["run", "--config", "csv.toml", "--method", "naive", "--runs", "3", "--artifacts", "art"];
    let a = putree(d, &args);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let b = putree(d, &args);
    assert_eq!(stdout(&a), stdout(&b));
    let n = fs::read_dir(d.join("art")).unwrap().count();
    assert_eq!(n, 3);
}

#[test]
fn ablate_single_variant_and_rejects_non_variants() {
    let tmp = TempDir::new().unwrap();
    let o = putree(tmp.path(), &["ablate", "--preset", "smoke", "--variant", "IV", "--runs", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("variant-iv"));
    assert_eq!(code(&putree(tmp.path(), &["ablate", "--preset", "smoke", "--variant", "putree"])), 1);
}

#[test]
fn runtime_failure_exits_two() {
    let tmp = csv_workspace();
    let d = tmp.path();
    let config = fs::read_to_string(d.join("csv.toml"))
        .unwrap()
        .replace("labeled_positive = 40", "labeled_positive = 1000000");
    fs::write(d.join("big.toml"), config).unwrap();
    let o = putree(d, &["run", "--config", "big.toml", "--method", "naive"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn prepare_converts_raw_nsl_files() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_eq!(code(&putree(d, &["prepare", "--raw", "raw", "--out", "data"])), 1);

    fs::create_dir(d.join("raw")).unwrap();
    let row = |proto: &str, label: &str| {
        let mut f = vec!["0".to_string(), proto.into(), "http".into(), "SF".into(), "181".into(), "5450".into()];
        f.extend(std::iter::repeat_n("0".to_string(), 35));
        f.push(label.into());
        f.push("21".into());
        f.join(",")
    };
    fs::write(d.join("raw/KDDTrain+.txt"), format!("{}\n{}\n", row("tcp", "normal"), row("udp", "neptune"))).unwrap();
    fs::write(d.join("raw/KDDTest+.txt"), format!("{}\n", row("icmp", "smurf"))).unwrap();
    let o = putree(d, &["prepare", "--raw", "raw", "--out", "data"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let train = fs::read_to_string(d.join("data/nsl_kdd_train.csv")).unwrap();
    assert_eq!(train.lines().count(), 3);
    assert!(train.lines().next().unwrap().starts_with("duration,protocol_type"));
    let schema = fs::read_to_string(d.join("data/nsl_kdd_schema.toml")).unwrap();
    assert!(schema.contains("icmp") && schema.contains("normal"));
}
