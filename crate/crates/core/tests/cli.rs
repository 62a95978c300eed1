use std::fs::OpenOptions;
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::process::{Command, Output};

use branchdb::Engine;

fn run(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_branchdb"))
        .arg("--store")
        .arg(store)
        .args(args)
        .output()
        .expect("spawn branchdb")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn ok(store: &Path, args: &[&str]) -> String {
    let o = run(store, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

const A: &str = "id,name,city\n1,Ann,Oslo\n2,\"Bo, Jr\",Rome\n3,Cy,\"Li\nma\"\n";
const B: &str = "id,name,city\n1,Ann,Oslo\n2,\"Bo, Jr\",Paris\n3,Cy,\"Li\nma\"\n";

fn setup() -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    std::fs::write(dir.path().join("a.csv"), A).unwrap();
    std::fs::write(dir.path().join("b.csv"), B).unwrap();
    ok(&store, &["init", "--pattern-bits", "8"]);
    (dir, store)
}

#[test]
fn load_and_select_rows_round_trip() {
    let (dir, store) = setup();
    let a = dir.path().join("a.csv");
    ok(&store, &["load-csv", a.to_str().unwrap(), "--key", "ds", "--key-column", "id"]);
    let rows = ok(&store, &["select", "ds", "--rows"]);
    assert_eq!(rows, &A["id,name,city\n".len()..]);
    let one = ok(&store, &["select", "ds", "--lo", "2", "--hi", "3"]);
    assert_eq!(one, "2\t2,\"Bo, Jr\",Rome\n");
}

#[test]
fn diff_exit_codes_and_lines() {
    let (dir, store) = setup();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    ok(&store, &["load-csv", a.to_str().unwrap(), "--key", "ds", "--key-column", "id"]);
    ok(&store, &["branch", "ds", "vendor"]);
    ok(&store, &["load-csv", b.to_str().unwrap(), "--key", "ds", "--key-column", "id", "-b", "vendor"]);

    let same = run(&store, &["diff", "ds", "master", "master"]);
    assert_eq!(same.status.code(), Some(0));
    assert_eq!(stdout(&same), "# 0 added, 0 removed, 0 modified\n");

    let d = run(&store, &["diff", "ds", "master", "vendor"]);
    assert_eq!(d.status.code(), Some(1));
    assert_eq!(
        stdout(&d),
        "~ 2\t2,\"Bo, Jr\",Rome\t2,\"Bo, Jr\",Paris\n# 0 added, 0 removed, 1 modified\n"
    );

    let j = run(&store, &["diff", "ds", "master", "vendor", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&j.stdout).unwrap();
    assert_eq!(v["changes"][0]["op"], "~");
    assert_eq!(v["summary"]["modified"], 1);

    let bad = run(&store, &["diff", "ds", "master", "nope"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn history_shows_merge_bases() {
    let (_dir, store) = setup();
    ok(&store, &["put", "kv", "--set", "a=1", "--set", "b=2", "-m", "first"]);
    ok(&store, &["branch", "kv", "dev"]);
    let m1 = ok(&store, &["put", "kv", "--set", "a=10", "-m", "master edit"]);
    let d1 = ok(&store, &["put", "kv", "-b", "dev", "--set", "b=20", "-m", "dev edit"]);
    let merged = ok(&store, &["merge", "kv", "master", "dev"]);
    assert!(merged.starts_with("merged "));

    let log = ok(&store, &["log", "kv"]);
    let lines: Vec<&str> = log.lines().collect();
    assert!(lines[0].ends_with("merge dev into master"));
    assert_eq!(lines[1], format!("    bases {} {}", m1.trim(), d1.trim()));
    assert_eq!(ok(&store, &["log", "kv", "-n", "1"]).lines().count(), 2);

    let json: serde_json::Value = serde_json::from_str(&ok(&store, &["log", "kv", "--json"])).unwrap();
    assert_eq!(json["versions"][0]["bases"].as_array().unwrap().len(), 2);

    assert_eq!(ok(&store, &["get", "kv"]), "a\t10\nb\t20\n");
    assert_eq!(ok(&store, &["get", "kv", "master@~1"]), "a\t10\nb\t2\n");
    let latest = ok(&store, &["latest", "kv"]);
    assert_eq!(latest.lines().count(), 2);

    let remerge = ok(&store, &["merge", "kv", "master", "dev"]);
    assert!(remerge.starts_with("up-to-date "));
}

#[test]
fn merge_conflict_exit_code() {
    let (_dir, store) = setup();
    ok(&store, &["put", "kv", "--set", "a=1"]);
    ok(&store, &["branch", "kv", "dev"]);
    ok(&store, &["put", "kv", "--set", "a=2"]);
    ok(&store, &["put", "kv", "-b", "dev", "--set", "a=3"]);
    let o = run(&store, &["merge", "kv", "master", "dev"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout(&o), "conflict a\n");
}

#[test]
fn unknown_branch_is_an_error() {
    let (_dir, store) = setup();
    ok(&store, &["put", "kv", "--set", "a=1"]);
    let o = run(&store, &["log", "kv", "-b", "empty"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown branch"));
    assert_eq!(run(&store, &["head", "missing"]).status.code(), Some(2));
}

#[test]
fn blob_put_get() {
    let (dir, store) = setup();
    let file = dir.path().join("blob.bin");
    let bytes: Vec<u8> = (0..=255u8).cycle().take(100_000).collect();
    std::fs::write(&file, &bytes).unwrap();
    ok(&store, &["put", "doc", "--blob", file.to_str().unwrap()]);
    let o = run(&store, &["get", "doc"]);
    assert_eq!(o.stdout, bytes);
}

#[test]
fn tampering_is_reported() {
    let (dir, store) = setup();
    let a = dir.path().join("a.csv");
    let uid = ok(&store, &["load-csv", a.to_str().unwrap(), "--key", "ds", "--key-column", "id", "--json"]);
    let uid: serde_json::Value = serde_json::from_str(&uid).unwrap();
    let uid = uid["uid"].as_str().unwrap().to_string();
    assert!(ok(&store, &["verify", "ds"]).starts_with("PASS "));

    // Corrupt the first record's payload (the leaf written first).
    let log = OpenOptions::new().read(true).write(true).open(store.join("chunks.log")).unwrap();
    let mut b = [0u8];
    log.read_exact_at(&mut b, 10).unwrap();
    log.write_all_at(&[b[0] ^ 1], 10).unwrap();
    drop(log);

    let v = run(&store, &["verify", "ds", &uid.to_lowercase()]);
    assert_eq!(v.status.code(), Some(1));
    assert!(stdout(&v).starts_with("FAIL "), "{}", stdout(&v));
    let g = run(&store, &["get", "ds", "--verify"]);
    assert_eq!(g.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&g.stderr).contains("verification failed"));
}

#[test]
fn store_guards() {
    let (_dir, store) = setup();
    assert_eq!(run(&store, &["init"]).status.code(), Some(2));
    let held = Engine::open(&store).unwrap();
    let o = run(&store, &["stat"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("locked"));
    drop(held);
    let s: serde_json::Value = serde_json::from_str(&ok(&store, &["stat", "--json"])).unwrap();
    assert_eq!(s["chunk_count"], 0);
}
