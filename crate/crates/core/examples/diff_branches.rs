// A vendor branch edits a few rows of a shared dataset; the diff touches
// only the nodes that differ.

use branchdb::{Engine, EngineConfig};

pub fn run() -> branchdb::Result<()> {
    let db = Engine::in_memory(EngineConfig::default())?;
    let mut csv = String::from("sku,product,price\n");
    for i in 0..20_000 {
        csv.push_str(&format!("P{i:05},widget model {i},{}.99\n", 5 + i % 90));
    }
    db.load_csv_bytes(csv.as_bytes(), "catalog", "master", "sku", "import catalog")?;
    db.branch("catalog", "vendor-x", "master")?;
    db.update(
        "catalog",
        "vendor-x",
        vec![
            (b"P00042".to_vec(), Some(b"P00042,widget model 42,39.99".to_vec())),
            (b"P13000".to_vec(), None),
            (b"P99999".to_vec(), Some(b"P99999,vendor special,1.00".to_vec())),
        ],
        "vendor price update",
    )?;

    let (changes, stats) = db.diff("catalog", "master", "vendor-x")?;
    print!("{}", changes.to_text());
    println!(
        "{} changes; read {} nodes, compared {} ids, pruned {} identical subtrees",
        changes.len(),
        stats.node_reads,
        stats.id_comparisons,
        stats.pruned
    );
    let (none, _) = db.diff("catalog", "master", "master")?;
    assert!(none.is_empty());
    Ok(())
}

#[allow(dead_code)]
fn main() -> branchdb::Result<()> {
    run()
}
