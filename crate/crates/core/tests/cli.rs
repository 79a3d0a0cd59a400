mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{stub_command, MockEndpoint, CLI};

fn privmem(args: &[&str]) -> Output {
    Command::new(CLI)
        .args(args)
        .env_remove("PRIVMEM_ENDPOINT")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(dir: &Path) -> std::path::PathBuf {
    let dump = dir.join("d.bin");
    let out = privmem(&[
        "gen-fixture", "dump", "--output", s(&dump), "--size", "262144", "--sensitive", "4",
        "--benign", "10", "--msisdns", "1", "--seed", "9",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dump
}

#[test]
fn exit_codes_by_stage() {
    let dir = tempfile::tempdir().unwrap();
    let spool = dir.path().join("spool");
    let code = |args: &[&str]| privmem(args).status.code().unwrap();

    assert_eq!(code(&["scan", "--dump", "/nonexistent/dump", "--spool-dir", s(&spool)]), 3);
    let dump = fixture(dir.path());
    assert_eq!(code(&["scan", "--dump", s(&dump), "--keep-dump", "--threshold", "0"]), 2);
    let bad_cfg = dir.path().join("bad.json");
    fs::write(&bad_cfg, "{\"bogus\": true}").unwrap();
    assert_eq!(code(&["scan", "--config", s(&bad_cfg), "--dump", s(&dump), "--keep-dump"]), 2);
    assert_eq!(
        code(&["scan", "--dump", s(&dump), "--keep-dump", "--plugin", "/nonexistent/scorer"]),
        4
    );
    let table = dir.path().join("procs.ndjson");
    fs::write(&table, "{\"name\":\"bash\",\"pid\":1}\n").unwrap();
    assert_eq!(
        code(&["scan", "--dump", s(&dump), "--keep-dump", "--process-table", s(&table)]),
        3
    );
    // spool directory path occupied by a file
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    assert_eq!(
        code(&["scan", "--dump", s(&dump), "--keep-dump", "--spool-dir", s(&blocker)]),
        5
    );
    assert_eq!(code(&["flush-spool", "--spool-dir", s(&spool)]), 2);
}

#[test]
fn scan_deletes_dump_unless_kept() {
    let dir = tempfile::tempdir().unwrap();
    let dump = fixture(dir.path());
    let spool = dir.path().join("spool");
    let out = privmem(&["scan", "--dump", s(&dump), "--keep-dump", "--spool-dir", s(&spool)]);
    assert!(out.status.success());
    assert!(dump.exists());
    let out = privmem(&["scan", "--dump", s(&dump), "--spool-dir", s(&spool)]);
    assert!(out.status.success());
    assert!(!dump.exists());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["released"], 4);
    assert_eq!(summary["spooled"], 4);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let dump = fixture(dir.path());
    let spool = dir.path().join("spool");
    let cfg = dir.path().join("cfg.json");
    let plugin = stub_command(&["--constant-is-not-a-flag"]);
    fs::write(
        &cfg,
        serde_json::json!({
            "classifier": {"plugin": plugin},
            "keep_dump": true,
            "alert": {"spool_dir": spool},
        })
        .to_string(),
    )
    .unwrap();
    // the broken plugin from the file is replaced by the flag
    let out = privmem(&[
        "scan", "--config", s(&cfg), "--dump", s(&dump), "--plugin",
        &stub_command(&["--default", "0.9"]),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["scorer_id"], "plugin:scorer-stub");
    assert_eq!(summary["suppressed"], 0);
    assert!(dump.exists());
}

#[test]
fn scan_then_flush_via_environment_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let dump = fixture(dir.path());
    let spool = dir.path().join("spool");
    let out = privmem(&["scan", "--dump", s(&dump), "--spool-dir", s(&spool)]);
    assert!(out.status.success());
    let spooled = fs::read(spool.join("alerts.spool.ndjson")).unwrap();
    let server = MockEndpoint::start(vec![]);
    let out = Command::new(CLI)
        .args(["flush-spool", "--spool-dir", s(&spool)])
        .env("PRIVMEM_ENDPOINT", &server.url)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut resent = Vec::new();
    for body in server.accepted() {
        resent.extend(body);
        resent.push(b'\n');
    }
    assert_eq!(resent, spooled);
}

#[test]
fn watch_runs_bounded_and_identical() {
    let dir = tempfile::tempdir().unwrap();
    let dump = fixture(dir.path());
    let spool = dir.path().join("spool");
    let out = privmem(&[
        "watch", "--dump", s(&dump), "--keep-dump", "--spool-dir", s(&spool), "--interval", "1",
        "--max-runs", "2",
    ]);
    assert!(out.status.success());
    let stream = serde_json::Deserializer::from_slice(&out.stdout).into_iter::<serde_json::Value>();
    let runs: Vec<serde_json::Value> = stream.map(|v| v.unwrap()).collect();
    assert_eq!(runs.len(), 2);
    for key in ["strings", "candidates", "released", "suppressed", "dump_digest"] {
        assert_eq!(runs[0][key], runs[1][key], "{key}");
    }
    let audit = fs::read_to_string(spool.join("audit.ndjson")).unwrap();
    assert_eq!(audit.lines().count(), 2);
}

#[test]
fn stage_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let dump = fixture(dir.path());
    let text = dir.path().join("strings.txt");
    assert!(privmem(&["extract-strings", "--input", s(&dump), "--output", s(&text), "--min-len", "3"])
        .status
        .success());
    let rendered = fs::read_to_string(&text).unwrap();
    let truth: serde_json::Value =
        serde_json::from_slice(&fs::read(format!("{}.truth.json", dump.display())).unwrap()).unwrap();
    for p in truth["planted_sensitive"].as_array().unwrap() {
        assert!(rendered.lines().any(|l| l == p["text"].as_str().unwrap()));
    }
    let out = privmem(&["retrieve", "--input", s(&text)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).lines().count() >= 4);

    let data = dir.path().join("data.ndjson");
    let model = dir.path().join("model.json");
    assert!(privmem(&["gen-fixture", "dataset", "--output", s(&data), "--n-per-class", "40", "--seed", "5"])
        .status
        .success());
    assert!(privmem(&["train", "--dataset", s(&data), "--output", s(&model)]).status.success());
    let out = privmem(&["evaluate", "--dataset", s(&data), "--model", s(&model), "--sweep"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["matrix"]["tp"].as_u64().unwrap() + report["matrix"]["fn"].as_u64().unwrap(), 40);
    assert_eq!(report["sweep"].as_array().unwrap().len(), 11);
}

#[test]
fn fixtures_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    for p in [&a, &b] {
        assert!(privmem(&["gen-fixture", "dump", "--output", s(p), "--size", "65536", "--sensitive", "3", "--seed", "11"])
            .status
            .success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}
