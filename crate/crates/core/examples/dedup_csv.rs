// Load two CSV datasets that differ by a single word and report how much
// new storage the second one costs.
//
// ```text
// cargo run --release --example dedup_csv [pattern_bits] [seed]
// ```

use branchdb::{ChunkerConfig, Engine, EngineConfig, LoadReport};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NAMES: &[&str] = &[
    "Alice", "Bruno", "Chen", "Dara", "Emeka", "Farah", "Goran", "Hana", "Ivan", "Jia", "Kofi", "Lena",
];
const CITIES: &[&str] = &[
    "Oslo", "Lagos", "Lima", "Hanoi", "Quito", "Perth", "Tunis", "Riga", "Cusco", "Dakar",
];
const WORDS: &[&str] = &[
    "red", "blue", "fast", "late", "boxed", "fragile", "bulk", "spare", "gift", "urgent", "return",
];

/// A deterministic sales-style CSV with `rows` data rows of about 68 bytes (about 340 KB for 5000 rows).
pub fn demo_csv(rows: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("order_id,customer,city,sku,quantity,price,note\n");
    for i in 0..rows {
        let note: Vec<&str> = (0..3).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
        out.push_str(&format!(
            "ORD{:06},{} {},{},SKU-{:05},{},{}.{:02},\"{}\"\n",
            i,
            NAMES.choose(&mut rng).unwrap(),
            NAMES.choose(&mut rng).unwrap(),
            CITIES.choose(&mut rng).unwrap(),
            rng.gen_range(0..100_000),
            rng.gen_range(1..500),
            rng.gen_range(1..2000),
            rng.gen_range(0..100),
            note.join(" "),
        ));
    }
    out
}

/// Replaces the first note word of the middle row.
pub fn change_one_word(csv: &str) -> String {
    let lines: Vec<&str> = csv.lines().collect();
    let mid = lines.len() / 2;
    let mut out = String::with_capacity(csv.len() + 8);
    for (i, line) in lines.iter().enumerate() {
        if i == mid {
            let (head, note) = line.rsplit_once(",\"").expect("note column");
            let rest = note.split_once(' ').map_or("", |(_, r)| r);
            out.push_str(&format!("{head},\"changed {rest}\n"));
        } else {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

pub fn run_demo(pattern_bits: u32, seed: u64) -> branchdb::Result<(LoadReport, LoadReport)> {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = EngineConfig {
        chunker: ChunkerConfig::new(16, pattern_bits),
    };
    let db = Engine::init(dir.path().join("store"), config)?;
    let first = demo_csv(5000, seed);
    let second = change_one_word(&first);
    let a = db.load_csv_bytes(first.as_bytes(), "dataset-1", "master", "order_id", "load dataset 1")?;
    let b = db.load_csv_bytes(second.as_bytes(), "dataset-2", "master", "order_id", "load dataset 2")?;
    Ok((a, b))
}

pub fn run() -> branchdb::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<u64>().ok());
    let q = args.next().flatten().unwrap_or(12) as u32;
    let seed = args.next().flatten().unwrap_or(7);
    let (a, b) = run_demo(q, seed)?;
    println!("pattern bits      {q}");
    for (name, r) in [("dataset-1", &a), ("dataset-2", &b)] {
        println!(
            "{name}: {} rows, {} input bytes, {} new chunks, {} new payload bytes, {}/{} chunks deduplicated",
            r.rows, r.input_bytes, r.new_chunks, r.new_payload_bytes, r.dedup_hits, r.put_requests
        );
    }
    println!(
        "second load adds {:.3}% of the first load's bytes",
        100.0 * b.new_payload_bytes as f64 / a.new_payload_bytes as f64
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> branchdb::Result<()> {
    run()
}
