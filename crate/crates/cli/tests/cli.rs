use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn heavyball(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heavyball"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .env_remove("OPT_TRACE_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const HARD_PSG: &[&str] = &[
    "run", "--problem", "hard", "--T", "200", "--c", "2", "--optimizer", "psg", "--alpha", "2", "--iters", "200",
];

#[test]
fn run_writes_trace_and_summary() {
    let dir = TempDir::new().unwrap();
    let out = heavyball(dir.path(), HARD_PSG);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("hard-T200-c2_psg_seed0.csv")).unwrap();
    assert!(csv.starts_with("t,"));
    assert_eq!(csv.lines().count(), 201);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("hard-T200-c2_psg_seed0.json")).unwrap()).unwrap();
    let checks = summary["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["name"] == "gd_floor" && c["passed"] == true));
}

#[test]
fn repeated_stochastic_runs_are_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/synth-10k.libsvm");
    let args = [
        "run", "--problem", "hinge", "--dataset", data, "--tau", "20", "--optimizer", "adahb_tv", "--alpha", "0.1",
        "--iters", "300", "--batch", "16", "--seed", "5", "--f-star", "0.5", "--trace", "trace.csv",
    ];
    assert_eq!(code(&heavyball(a.path(), &args)), 0);
    assert_eq!(code(&heavyball(b.path(), &args)), 0);
    let (x, y) = (fs::read(a.path().join("trace.csv")).unwrap(), fs::read(b.path().join("trace.csv")).unwrap());
    assert!(!x.is_empty());
    assert!(x == y);
}

#[test]
fn failed_check_exits_with_one() {
    let dir = TempDir::new().unwrap();
    // ten points are too few for a rate fit, so the check fails
    let out = heavyball(
        dir.path(),
        &[
            "run", "--problem", "hard", "--T", "50", "--c", "2", "--optimizer", "psg", "--alpha", "2", "--iters", "10",
            "--checks", "rate",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("rate_averaged"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let bad_alpha = heavyball(
        dir.path(),
        &["run", "--problem", "hard", "--T", "10", "--optimizer", "psg", "--alpha", "-1", "--iters", "5"],
    );
    assert_eq!(code(&bad_alpha), 2);
    let lemma3_on_psg = heavyball(
        dir.path(),
        &[
            "run", "--problem", "hard", "--T", "10", "--optimizer", "psg", "--alpha", "1", "--iters", "5", "--checks",
            "lemma3",
        ],
    );
    assert_eq!(code(&lemma3_on_psg), 2);
    let missing_dataset = heavyball(
        dir.path(),
        &[
            "run", "--problem", "hinge", "--dataset", "/nonexistent.libsvm", "--optimizer", "psg", "--alpha", "1",
            "--iters", "5",
        ],
    );
    assert_eq!(code(&missing_dataset), 2);
}

#[test]
fn compare_writes_wide_csv() {
    let dir = TempDir::new().unwrap();
    let out = heavyball(
        dir.path(),
        &[
            "compare", "--problem", "hard", "--T", "100", "--c", "2", "--iters", "100", "--run", "psg:2", "--run",
            "hb_tv:8", "--run", "hb_const:0.5:0.9", "--output", "cmp.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("cmp.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "t,psg_gap_individual,psg_gap_averaged,hb_tv_gap_individual,hb_tv_gap_averaged,\
         hb_const_gap_individual,hb_const_gap_averaged"
    );
    assert_eq!(csv.lines().count(), 101);
    let combined: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("cmp.json")).unwrap()).unwrap();
    assert_eq!(combined.as_array().unwrap().len(), 3);
}

#[test]
fn compare_rejects_empty_and_mixed_runs() {
    let dir = TempDir::new().unwrap();
    let empty = heavyball(dir.path(), &["compare", "--problem", "hard", "--T", "10"]);
    assert_eq!(code(&empty), 2);

    let cfg = dir.path().join("other.json");
    fs::write(
        &cfg,
        r#"{"problem": {"kind": "hard", "T": 20, "c": 1.0}, "optimizer": "psg", "alpha": 1.0, "iterations": 5}"#,
    )
    .unwrap();
    let mixed = heavyball(
        dir.path(),
        &[
            "compare", "--problem", "hard", "--T", "10", "--iters", "5", "--run", "psg:1", "--configs",
            cfg.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&mixed), 2);
}

#[test]
fn verify_projections_passes() {
    let dir = TempDir::new().unwrap();
    let out = heavyball(dir.path(), &["verify", "projections", "--seed", "3"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("checks passed"));
}

#[test]
fn synth_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a.libsvm"), dir.path().join("b.libsvm"));
    for p in [&a, &b] {
        let out = heavyball(
            dir.path(),
            &["synth", "--output", p.to_str().unwrap(), "--samples", "40", "--features", "12", "--nnz", "4"],
        );
        assert_eq!(code(&out), 0);
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 40);
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let bad = heavyball(dir.path(), &["synth", "--output", a.to_str().unwrap(), "--flip", "2"]);
    assert_eq!(code(&bad), 2);
}
