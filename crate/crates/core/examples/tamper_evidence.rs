// Commit a short history to an on-disk store, flip one byte of a stored
// chunk, and let verification find it from the head uid alone.

use std::fs::OpenOptions;
use std::os::unix::fs::FileExt;

use branchdb::store::LOG_FILE;
use branchdb::{Engine, EngineConfig};

pub fn run() -> branchdb::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("store");
    let head = {
        let db = Engine::init(&path, EngineConfig::default())?;
        let rows: Vec<_> = (0..3000)
            .map(|i| (format!("acct{i:05}").into_bytes(), format!("balance={}", i * 13).into_bytes()))
            .collect();
        db.put_map("ledger", "master", rows, "opening balances")?;
        db.update("ledger", "master", vec![(b"acct00010".to_vec(), Some(b"balance=0".to_vec()))], "withdrawal")?;
        let head = db.update("ledger", "master", vec![(b"acct02999".to_vec(), None)], "close account")?;
        let report = db.verify("ledger", "master", None)?;
        println!(
            "clean store: passed={} ({} versions, {} chunks checked)",
            report.passed(),
            report.versions_checked,
            report.chunks_checked
        );
        head
    };

    // Flip a byte in the middle of the chunk log, where tree nodes live.
    let log = path.join(LOG_FILE);
    let file = OpenOptions::new().read(true).write(true).open(&log).expect("open log");
    let offset = file.metadata().expect("metadata").len() / 2;
    let mut byte = [0u8];
    file.read_exact_at(&mut byte, offset).expect("read");
    file.write_all_at(&[byte[0] ^ 0x20], offset).expect("write");
    drop(file);

    let db = Engine::open(&path)?;
    let report = db.verify("ledger", &head.to_string(), None)?;
    match report.failure {
        Some(f) => println!("after flipping byte {offset}: FAIL at chunk {} ({})", f.chunk, f.reason),
        None => println!("after flipping byte {offset}: unexpectedly passed"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> branchdb::Result<()> {
    run()
}
