// The tree shape depends only on its entries: shuffled inserts, batched
// edits and a one-shot build all arrive at the same root id, and a single
// insert rewrites only the nodes on one root-to-leaf path.

use branchdb::{ChunkStore, Chunker, ChunkerConfig, MemStore, PosTree};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run() -> branchdb::Result<()> {
    let store = MemStore::new();
    let chunker = Chunker::new(ChunkerConfig::new(16, 8))?;
    let trees = PosTree::new(&store, &chunker);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut entries: Vec<(Vec<u8>, Vec<u8>)> = (0..5000)
        .map(|i| (format!("user:{i:06}").into_bytes(), format!("score={}", i * 7 % 1000).into_bytes()))
        .collect();

    let built = trees.build(entries.clone())?;
    println!("built   {} (height {}, {} entries)", built.root, built.height, built.entry_count);

    entries.shuffle(&mut rng);
    let mut grown = trees.empty()?;
    for batch in entries.chunks(97) {
        grown = trees.apply(&grown, batch.iter().map(|(k, v)| (k.clone(), Some(v.clone()))))?;
    }
    println!("shuffled inserts    {}", grown.root);

    let mut one_by_one = trees.empty()?;
    for (k, v) in entries.iter().rev() {
        one_by_one = trees.insert(&one_by_one, k.clone(), v.clone())?;
    }
    println!("reverse single inserts {}", one_by_one.root);
    assert_eq!(built, grown);
    assert_eq!(built, one_by_one);

    let before = store.stats();
    let updated = trees.insert(&built, b"user:002500x".to_vec(), b"score=1".to_vec())?;
    let written = store.stats().since(&before).chunk_count;
    println!(
        "one insert wrote {written} new chunks for a tree of height {}",
        updated.height
    );

    let range = trees.scan(&updated, Some(b"user:002499"), Some(b"user:002501"))?;
    for (k, v) in range {
        println!("  {} = {}", String::from_utf8_lossy(&k), String::from_utf8_lossy(&v));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> branchdb::Result<()> {
    run()
}
