// Content-defined boundaries: segment sizes over random entries, and how few
// segments change when one entry is inserted in the middle.

use std::collections::HashSet;

use branchdb::{Chunker, ChunkerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn entries(n: usize, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(16..128);
            (0..len).map(|_| rng.gen()).collect()
        })
        .collect()
}

fn segments(splits: &[usize], items: &[Vec<u8>]) -> Vec<Vec<u8>> {
    let mut start = 0;
    splits
        .iter()
        .map(|&end| {
            let seg = items[start..end].concat();
            start = end;
            seg
        })
        .collect()
}

pub fn run() -> branchdb::Result<()> {
    let chunker = Chunker::new(ChunkerConfig::default())?;
    let items = entries(20_000, 1);
    let splits = chunker.segment_entries(&items)?;
    let segs = segments(&splits, &items);
    let sizes: Vec<usize> = segs.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();
    println!(
        "{} bytes in {} segments: mean {} bytes, max {} (limit {})",
        total,
        sizes.len(),
        total / sizes.len(),
        sizes.iter().max().unwrap(),
        chunker.config().max_node_bytes
    );

    let mut edited = items.clone();
    edited.insert(items.len() / 2, b"one more entry".to_vec());
    let edited_segs = segments(&chunker.segment_entries(&edited)?, &edited);
    let before: HashSet<&Vec<u8>> = segs.iter().collect();
    let shared = edited_segs.iter().filter(|s| before.contains(s)).count();
    println!(
        "after one insertion {shared}/{} segments are byte-identical",
        edited_segs.len()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> branchdb::Result<()> {
    run()
}
