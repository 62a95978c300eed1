// Branch, edit both sides, merge. Disjoint edits merge cleanly into a commit
// with two bases; edits to the same key with different values conflict.

use branchdb::{BranchMerge, Engine, EngineConfig};

fn row(k: &str, v: &str) -> (Vec<u8>, Option<Vec<u8>>) {
    (k.as_bytes().to_vec(), Some(v.as_bytes().to_vec()))
}

pub fn run() -> branchdb::Result<()> {
    let db = Engine::in_memory(EngineConfig::default())?;
    let base: Vec<_> = (0..2000)
        .map(|i| (format!("item{i:04}").into_bytes(), b"stock=10".to_vec()))
        .collect();
    db.put_map("inventory", "master", base, "initial stock")?;
    db.branch("inventory", "warehouse-b", "master")?;

    db.update("inventory", "master", vec![row("item0007", "stock=3")], "sale")?;
    db.update("inventory", "warehouse-b", vec![row("item1500", "stock=25")], "delivery")?;
    match db.merge("inventory", "master", "warehouse-b", None)? {
        BranchMerge::Merged(uid) => {
            let (_, f) = db.fnode("inventory", &uid.to_string())?;
            println!("merged into {uid}");
            println!("  bases {} {}", f.bases[0], f.bases[1]);
        }
        other => println!("unexpected: {other:?}"),
    }
    let merged = db.select("inventory", "master", Some(b"item0007"), Some(b"item0008"))?;
    println!("  item0007 -> {}", String::from_utf8_lossy(&merged[0].1));
    println!("  item1500 -> {}", String::from_utf8_lossy(&db.lookup("inventory", "master", b"item1500")?.unwrap()));

    db.update("inventory", "master", vec![row("item0100", "stock=0")], "sold out")?;
    db.update("inventory", "warehouse-b", vec![row("item0100", "stock=40")], "restock")?;
    match db.merge("inventory", "master", "warehouse-b", None)? {
        BranchMerge::Conflicts(keys) => {
            for k in keys {
                println!("conflict on {}", String::from_utf8_lossy(&k));
            }
        }
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> branchdb::Result<()> {
    run()
}
