use std::path::Path;
use std::process::{Command, Output};

use clickqc::pipeline::exit;

fn clickqc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clickqc")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn simulate_and_extract(dir: &Path) {
    let sim = clickqc(&[
        "simulate",
        "--images",
        "4",
        "--workers",
        "4",
        "--crews",
        "2",
        "--size",
        "48",
        "--seed",
        "2",
        "--out",
        &p(dir, "data"),
    ]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    let ext = clickqc(&["extract", "--dataset", &p(dir, "data"), "--out", &p(dir, "features.tsv")]);
    assert!(ext.status.success(), "{}", String::from_utf8_lossy(&ext.stderr));
}

#[test]
fn estimate_with_foreign_model_schema_exits_with_schema_code() {
    let dir = tempfile::tempdir().unwrap();
    simulate_and_extract(dir.path());
    let train = clickqc(&[
        "train",
        "--features",
        &p(dir.path(), "features.tsv"),
        "--trees",
        "5",
        "--out",
        &p(dir.path(), "model.txt"),
    ]);
    assert!(train.status.success());

    let model = std::fs::read_to_string(dir.path().join("model.txt")).unwrap();
    let schema_line = model.lines().nth(1).unwrap().to_string();
    std::fs::write(dir.path().join("old.txt"), model.replacen(&schema_line, "schema clickqc-features-v0", 1)).unwrap();
    let est = clickqc(&[
        "estimate",
        "--model",
        &p(dir.path(), "old.txt"),
        "--features",
        &p(dir.path(), "features.tsv"),
        "--out",
        &p(dir.path(), "e.tsv"),
    ]);
    assert_eq!(code(&est), exit::SCHEMA);
    assert!(String::from_utf8_lossy(&est.stderr).contains("schema mismatch"));

    let table = std::fs::read_to_string(dir.path().join("features.tsv")).unwrap();
    std::fs::write(dir.path().join("old.tsv"), table.replacen("clickqc-features-v1", "clickqc-features-v0", 1))
        .unwrap();
    let est = clickqc(&[
        "estimate",
        "--model",
        &p(dir.path(), "model.txt"),
        "--features",
        &p(dir.path(), "old.tsv"),
        "--out",
        &p(dir.path(), "e.tsv"),
    ]);
    assert_eq!(code(&est), exit::SCHEMA);

    let ok = clickqc(&[
        "estimate",
        "--model",
        &p(dir.path(), "model.txt"),
        "--features",
        &p(dir.path(), "features.tsv"),
        "--out",
        &p(dir.path(), "e.tsv"),
    ]);
    assert!(ok.status.success());
}

#[test]
fn named_exit_codes_for_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let missing = clickqc(&["extract", "--dataset", &p(dir.path(), "nope"), "--out", &p(dir.path(), "f.tsv")]);
    assert_eq!(code(&missing), exit::IO);

    std::fs::write(dir.path().join("model.txt"), "not a model\n").unwrap();
    std::fs::write(dir.path().join("f.tsv"), "# schema_version=clickqc-features-v1\nworker_id\n").unwrap();
    let bad = clickqc(&[
        "estimate",
        "--model",
        &p(dir.path(), "model.txt"),
        "--features",
        &p(dir.path(), "f.tsv"),
        "--out",
        &p(dir.path(), "e.tsv"),
    ]);
    assert_eq!(code(&bad), exit::PARSE);

    let mix =
        clickqc(&["simulate", "--images", "2", "--workers", "2", "--mix", "lazy=1", "--out", &p(dir.path(), "d")]);
    assert_eq!(code(&mix), exit::USAGE);

    simulate_and_extract(dir.path());
    let fuse =
        clickqc(&["fuse", "--method", "cw-mv", "--dataset", &p(dir.path(), "data"), "--out", &p(dir.path(), "r.tsv")]);
    assert_eq!(code(&fuse), exit::USAGE);
    let method =
        clickqc(&["fuse", "--method", "median", "--dataset", &p(dir.path(), "data"), "--out", &p(dir.path(), "r.tsv")]);
    assert_ne!(code(&method), 0);
}

#[test]
fn fuse_without_estimates_reports_every_image() {
    let dir = tempfile::tempdir().unwrap();
    simulate_and_extract(dir.path());
    let out = clickqc(&[
        "fuse",
        "--method",
        "staple",
        "--lambda",
        "3",
        "--dataset",
        &p(dir.path(), "data"),
        "--out",
        &p(dir.path(), "r.tsv"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("r.tsv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("image_id\tmethod\tlambda\tphi\tepsilon_t\tdsc\tshort"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn cost_table_from_shipped_params() {
    let params = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/cost_params.toml");
    let out = clickqc(&["cost", "--params", params, "--max-a", "1000", "--step", "1000"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("a\tproposed\tbaseline\tmanual_grading"));
    assert!(text.contains("1000\t11428.5714\t3433.3333\t1331.5579"), "{text}");
}

#[test]
fn experiment_config_parses() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/experiment.toml")).unwrap();
    let cfg = clickqc::pipeline::ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(cfg.fusion.lambdas, vec![1, 3, 5]);
    assert_eq!(cfg.dataset_config().unwrap().n_images, 100);
}
