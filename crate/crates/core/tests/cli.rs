mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::*;
use dpgen::corpus::{read_jsonl, DatasetRecord};
use dpgen::eval::{MetricsReport, TABLE_HEADER};

fn dpgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpgen")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `--offline` flags against the shipped mock fixtures.
fn offline() -> Vec<String> {
    vec![
        "--offline".into(),
        "--mock-dir".into(),
        fixture("mock").display().to_string(),
        "--config".into(),
        fixture("offline.toml").display().to_string(),
    ]
}

fn offline_run(extra: &[&str]) -> Output {
    let mut args = offline();
    args.extend(extra.iter().map(|a| a.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    dpgen(&refs)
}

fn gen(command: &str, out: &Path) -> Output {
    let seeds = fixture("seeds.jsonl");
    let scenarios = fixture("scenarios.jsonl");
    offline_run(&[command, "--seeds", s(&seeds), "--scenarios", s(&scenarios), "--out", s(out)])
}

#[test]
fn shipped_mock_rules_are_current() {
    let path = fixture("mock").join("rules.json");
    let expected = serde_json::to_string_pretty(&world_rules()).unwrap() + "\n";
    if std::env::var_os("DPGEN_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &expected).unwrap();
    }
    let shipped = std::fs::read_to_string(&path).unwrap_or_default();
    assert!(shipped == expected, "fixtures/mock/rules.json is stale; rerun with DPGEN_BLESS=1");
}

#[test]
fn solve_prints_value_and_oracle() {
    let o = dpgen(&["solve", s(&fixture("warehouse.json"))]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("value: 28.0510204081632"), "{text}");
    assert!(text.contains("enumeration agrees"), "{text}");
    assert!(text.contains("0 -> up_to_4"), "{text}");
}

#[test]
fn solve_methods_and_json() {
    let o = dpgen(&["solve", "--method", "value", "--json", s(&fixture("warehouse_capped.json"))]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["value"].as_f64().unwrap() - 29.071428571428573).abs() < 1e-6);
    let avg = dpgen(&["solve", "--method", "relative", s(&fixture("admission.json"))]);
    assert_eq!(avg.status.code(), Some(0));
    assert!(stdout(&avg).contains("value: 0.5"));
    let wrong = dpgen(&["solve", "--method", "backward", s(&fixture("admission.json"))]);
    assert_eq!(wrong.status.code(), Some(1));
}

#[test]
fn validate_reports_problems() {
    assert_eq!(dpgen(&["validate", s(&fixture("machine.json"))]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, broken_row(&load_spec("machine.json")).to_json_pretty()).unwrap();
    let o = dpgen(&["validate", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sums to"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(dpgen(&[]).status.code(), Some(2));
    assert_eq!(dpgen(&["solve"]).status.code(), Some(2));
    assert_eq!(dpgen(&["solve", "x.json", "--method", "magic"]).status.code(), Some(2));
    assert_eq!(dpgen(&["--help"]).status.code(), Some(0));
}

#[test]
fn offline_without_rules_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty-mock");
    std::fs::create_dir_all(&empty).unwrap();
    let o = dpgen(&[
        "--offline",
        "--mock-dir",
        s(&empty),
        "gen-forward",
        "--seeds",
        s(&fixture("seeds.jsonl")),
        "--scenarios",
        s(&fixture("scenarios.jsonl")),
        "--out",
        s(&dir.path().join("out")),
    ]);
    // Every task fails at the provider; the run still completes and reports it.
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/forward_stats.json")).unwrap()).unwrap();
    assert_eq!(stats["provider_failures"], 6, "{stats}");
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn forward_backward_and_corpora_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        for cmd in ["gen-forward", "gen-backward"] {
            let o = gen(cmd, out);
            assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
    }
    for name in ["forward.jsonl", "forward_attempts.jsonl", "forward_stats.json", "backward.jsonl", "recovery_report.json"] {
        assert_eq!(read(&a, name), read(&b, name), "{name} is not reproducible");
    }

    let forward: Vec<DatasetRecord> = read_jsonl(&a.join("forward.jsonl")).unwrap();
    let backward: Vec<DatasetRecord> = read_jsonl(&a.join("backward.jsonl")).unwrap();
    assert_eq!(forward.len(), 24);
    assert_eq!(backward.len(), 21);
    let report: serde_json::Value = serde_json::from_slice(&read(&a, "recovery_report.json")).unwrap();
    assert_eq!(report["header"]["tool"], "dpgen");
    assert_eq!(report["recovered"], 1, "{report}");

    let sft = dir.path().join("sft");
    let o = dpgen(&["build-sft", "--input", s(&a.join("forward.jsonl")), "--input", s(&a.join("backward.jsonl")), "--out", s(&sft)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&read(&sft, "sft_manifest.json")).unwrap();
    assert_eq!(manifest["total"], 45, "{manifest}");

    let prefs = dir.path().join("prefs.jsonl");
    let o = dpgen(&["build-prefs", "--input", s(&a.join("forward_attempts.jsonl")), "--out", s(&prefs)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let pairs = std::fs::read_to_string(&prefs).unwrap();
    assert_eq!(pairs.lines().count(), 6, "one pair per consensus problem");

    let rl = dir.path().join("rl");
    let o = dpgen(&["build-rl-corpus", "--backward", s(&a.join("backward.jsonl")), "--seeds", s(&fixture("seeds.jsonl")), "--out", s(&rl)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rl_manifest: serde_json::Value = serde_json::from_slice(&read(&rl, "rl_manifest.json")).unwrap();
    assert_eq!(rl_manifest["total"], 4, "{rl_manifest}");

    let o = dpgen(&["stats", s(&a.join("backward.jsonl"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("1 reflected"), "{}", stdout(&o));
}

#[test]
fn eval_and_rescore_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval");
    let bench = fixture("bench.jsonl");
    let o = offline_run(&["eval", "--bench", s(&bench), "--samples", "2", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.starts_with(TABLE_HEADER));
    assert!(table.contains("| mock-model | 100.0 | 0.0 | 50.0 | 50.0 |"), "{table}");
    let report: MetricsReport = serde_json::from_slice(&read(&out, "report.json")).unwrap();
    assert!(report.is_consistent());

    let again = dir.path().join("rescored");
    let transcript: PathBuf = out.join("transcript.jsonl");
    let o = offline_run(&["eval", "--bench", s(&bench), "--rescore", s(&transcript), "--out", s(&again)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&out, "report.json"), read(&again, "report.json"));

    let o = offline_run(&["eval", "--bench", s(&bench), "--mode", "rag", "--store", s(&fixture("seeds.jsonl")), "--out", s(&dir.path().join("rag"))]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}
