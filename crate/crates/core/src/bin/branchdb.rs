//! Command-line front end.
//!
//! Exit codes: 0 success (and empty diff / passing verify), 1 non-empty diff,
//! failed verification or merge conflicts, 2 any error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value as Json};

use branchdb::diff::{escape, unescape};
use branchdb::version::ValueRef;
use branchdb::{BranchMerge, Change, ChunkerConfig, Engine, EngineConfig, Error, Result, Value};

#[derive(Parser)]
#[command(name = "branchdb", version, about = "Versioned, deduplicating key-value store")]
struct Cli {
    /// Store directory.
    #[arg(long, global = true, default_value = "store")]
    store: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a new store.
    Init {
        #[arg(long, default_value_t = branchdb::chunker::DEFAULT_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = branchdb::chunker::DEFAULT_PATTERN_BITS)]
        pattern_bits: u32,
        /// Defaults to 4 * 2^pattern_bits.
        #[arg(long)]
        max_node_bytes: Option<usize>,
        #[arg(long, default_value_t = branchdb::chunker::DEFAULT_SEED)]
        seed: u64,
    },
    /// Commit a value: a blob from a file, a map from a TSV file, or edits.
    Put {
        key: String,
        #[arg(short, long, default_value = "master")]
        branch: String,
        #[arg(short, long, default_value = "put")]
        message: String,
        /// Store the file's bytes as a blob.
        #[arg(long, conflicts_with_all = ["map_file", "set", "delete"])]
        blob: Option<PathBuf>,
        /// Replace the map with `key<TAB>value` lines (escaped text form).
        #[arg(long, conflicts_with_all = ["set", "delete"])]
        map_file: Option<PathBuf>,
        /// Upsert `key=value` into the current map.
        #[arg(long, value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Remove a key from the current map.
        #[arg(long, value_name = "KEY")]
        delete: Vec<String>,
    },
    /// Print a value at a branch, `branch@~n` or uid.
    Get {
        key: String,
        #[arg(default_value = "master")]
        reference: String,
        /// Verify the version and its history first.
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        json: bool,
    },
    /// Print map entries with lo <= key < hi.
    Select {
        key: String,
        #[arg(default_value = "master")]
        reference: String,
        #[arg(long)]
        lo: Option<String>,
        #[arg(long)]
        hi: Option<String>,
        /// Print raw values only, one per line.
        #[arg(long)]
        rows: bool,
        #[arg(long)]
        json: bool,
    },
    /// Load a CSV file as one commit, keyed by a header column.
    LoadCsv {
        file: PathBuf,
        #[arg(long)]
        key: String,
        #[arg(long)]
        key_column: String,
        #[arg(short, long, default_value = "master")]
        branch: String,
        #[arg(long)]
        json: bool,
    },
    /// Show entry-level differences between two versions.
    Diff {
        key: String,
        a: String,
        b: String,
        #[arg(long)]
        json: bool,
    },
    /// Create a branch.
    Branch {
        key: String,
        name: String,
        #[arg(long, default_value = "master")]
        from: String,
    },
    /// Merge branch `src` into `dst`.
    Merge {
        key: String,
        dst: String,
        src: String,
        #[arg(short, long)]
        message: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Uid at the head of a branch
    Head {
        key: String,
        #[arg(short, long, default_value = "master")]
        branch: String,
        #[arg(long)]
        json: bool,
    },
    /// Heads of every branch of a key.
    Latest {
        key: String,
        #[arg(long)]
        json: bool,
    },
    /// History in first-parent order, newest first.
    Log {
        key: String,
        #[arg(short, long, default_value = "master")]
        branch: String,
        #[arg(short = 'n', long, default_value_t = usize::MAX)]
        limit: usize,
        #[arg(long)]
        json: bool,
    },
    /// Recompute every digest under a version.
    Verify {
        key: String,
        #[arg(default_value = "master")]
        reference: String,
        /// Ancestor generations to check; full history by default.
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Store statistics.
    Stat {
        #[arg(long)]
        json: bool,
    },
}

fn parse_text(s: &str) -> Result<Vec<u8>> {
    unescape(s).ok_or_else(|| Error::InvalidKey(format!("bad escape in {s:?}")))
}

fn print_json(v: &Json) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn entries_json(entries: &[(Vec<u8>, Vec<u8>)]) -> Json {
    entries
        .iter()
        .map(|(k, v)| json!({"key": escape(k), "value": escape(v)}))
        .collect()
}

fn change_json(c: &Change) -> Json {
    match c {
        Change::Added { key, value } => json!({"op": "+", "key": escape(key), "value": escape(value)}),
        Change::Removed { key, value } => json!({"op": "-", "key": escape(key), "value": escape(value)}),
        Change::Modified { key, old, new } => {
            json!({"op": "~", "key": escape(key), "old": escape(old), "new": escape(new)})
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let out = std::io::stdout();
    let mut out = out.lock();
    let w = |e: std::io::Error| Error::io("<stdout>", e);
    if let Command::Init {
        window,
        pattern_bits,
        max_node_bytes,
        seed,
    } = cli.command
    {
        let mut chunker = ChunkerConfig::new(window, pattern_bits).with_seed(seed);
        if let Some(m) = max_node_bytes {
            chunker = chunker.with_max_node_bytes(m);
        }
        Engine::init(&cli.store, EngineConfig { chunker })?;
        writeln!(out, "initialized {}", cli.store.display()).map_err(w)?;
        return Ok(0);
    }
    let db = Engine::open(&cli.store)?;
    match cli.command {
        Command::Init { .. } => unreachable!(),
        Command::Put {
            key,
            branch,
            message,
            blob,
            map_file,
            set,
            delete,
        } => {
            let uid = if let Some(path) = blob {
                let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                db.put_blob(&key, &branch, bytes, &message)?
            } else if let Some(path) = map_file {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let mut entries = Vec::new();
                for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
                    let (k, v) = line.split_once('\t').ok_or_else(|| Error::Csv {
                        line: n as u64 + 1,
                        message: "expected key<TAB>value".into(),
                    })?;
                    entries.push((parse_text(k)?, parse_text(v)?));
                }
                db.put_map(&key, &branch, entries, &message)?
            } else {
                let mut edits = Vec::new();
                for s in &set {
                    let (k, v) = s
                        .split_once('=')
                        .ok_or_else(|| Error::InvalidKey(format!("expected KEY=VALUE, got {s:?}")))?;
                    edits.push((parse_text(k)?, Some(parse_text(v)?)));
                }
                for k in &delete {
                    edits.push((parse_text(k)?, None));
                }
                db.update(&key, &branch, edits, &message)?
            };
            writeln!(out, "{uid}").map_err(w)?;
        }
        Command::Get {
            key,
            reference,
            verify,
            json,
        } => {
            let uid = db.resolve(&key, &reference)?;
            let value = if verify {
                db.get_verified(&key, &uid.to_string())?
            } else {
                db.get(&key, &uid.to_string())?
            };
            match (value, json) {
                (Value::Map(entries), true) => {
                    print_json(&json!({"uid": uid, "type": "map", "entries": entries_json(&entries)}))
                }
                (Value::Blob(bytes), true) => {
                    print_json(&json!({"uid": uid, "type": "blob", "length": bytes.len(), "data": escape(&bytes)}))
                }
                (Value::Map(entries), false) => {
                    for (k, v) in entries {
                        writeln!(out, "{}\t{}", escape(&k), escape(&v)).map_err(w)?;
                    }
                }
                (Value::Blob(bytes), false) => out.write_all(&bytes).map_err(w)?,
            }
        }
        Command::Select {
            key,
            reference,
            lo,
            hi,
            rows,
            json,
        } => {
            let lo = lo.as_deref().map(parse_text).transpose()?;
            let hi = hi.as_deref().map(parse_text).transpose()?;
            let entries = db.select(&key, &reference, lo.as_deref(), hi.as_deref())?;
            if json {
                print_json(&json!({"entries": entries_json(&entries)}));
            } else {
                for (k, v) in entries {
                    if rows {
                        out.write_all(&v).map_err(w)?;
                        out.write_all(b"\n").map_err(w)?;
                    } else {
                        writeln!(out, "{}\t{}", escape(&k), escape(&v)).map_err(w)?;
                    }
                }
            }
        }
        Command::LoadCsv {
            file,
            key,
            key_column,
            branch,
            json,
        } => {
            let report = db.load_csv(&file, &key, &branch, &key_column)?;
            if json {
                print_json(&serde_json::to_value(&report).expect("json"));
            } else {
                writeln!(out, "uid               {}", report.uid).map_err(w)?;
                writeln!(out, "rows              {}", report.rows).map_err(w)?;
                writeln!(out, "input bytes       {}", report.input_bytes).map_err(w)?;
                writeln!(out, "new chunks        {}", report.new_chunks).map_err(w)?;
                writeln!(out, "new payload bytes {}", report.new_payload_bytes).map_err(w)?;
                writeln!(out, "dedup hits        {}/{}", report.dedup_hits, report.put_requests).map_err(w)?;
            }
        }
        Command::Diff { key, a, b, json } => {
            let (ua, ub) = (db.resolve(&key, &a)?, db.resolve(&key, &b)?);
            let (result, stats) = db.diff(&key, &ua.to_string(), &ub.to_string())?;
            let changes = result.changes();
            let summary = json!({
                "added": result.added.len(),
                "removed": result.removed.len(),
                "modified": result.modified.len(),
            });
            if json {
                print_json(&json!({
                    "a": ua,
                    "b": ub,
                    "changes": changes.iter().map(change_json).collect::<Vec<_>>(),
                    "summary": summary,
                    "stats": stats,
                }));
            } else {
                for c in &changes {
                    writeln!(out, "{}", c.to_line()).map_err(w)?;
                }
                writeln!(
                    out,
                    "# {} added, {} removed, {} modified",
                    result.added.len(),
                    result.removed.len(),
                    result.modified.len()
                )
                .map_err(w)?;
            }
            return Ok(u8::from(!result.is_empty()));
        }
        Command::Branch { key, name, from } => {
            let uid = db.branch(&key, &name, &from)?;
            writeln!(out, "{uid}").map_err(w)?;
        }
        Command::Merge {
            key,
            dst,
            src,
            message,
            json,
        } => {
            let outcome = db.merge(&key, &dst, &src, message.as_deref())?;
            let (status, uid, conflicts) = match &outcome {
                BranchMerge::UpToDate(u) => ("up-to-date", Some(*u), vec![]),
                BranchMerge::FastForward(u) => ("fast-forward", Some(*u), vec![]),
                BranchMerge::Merged(u) => ("merged", Some(*u), vec![]),
                BranchMerge::Conflicts(c) => ("conflicts", None, c.iter().map(|k| escape(k)).collect()),
            };
            if json {
                print_json(&json!({"status": status, "uid": uid, "conflicts": conflicts}));
            } else {
                match uid {
                    Some(u) => writeln!(out, "{status} {u}").map_err(w)?,
                    None => {
                        for c in &conflicts {
                            writeln!(out, "conflict {c}").map_err(w)?;
                        }
                    }
                }
            }
            return Ok(u8::from(uid.is_none()));
        }
        Command::Head { key, branch, json } => {
            let uid = db.head(&key, &branch)?;
            if json {
                print_json(&json!({"key": key, "branch": branch, "uid": uid}));
            } else {
                writeln!(out, "{uid}").map_err(w)?;
            }
        }
        Command::Latest { key, json } => {
            let heads = db.latest(&key)?;
            if json {
                let list: Vec<Json> = heads.iter().map(|(b, u)| json!({"branch": b, "uid": u})).collect();
                print_json(&json!({"key": key, "heads": list}));
            } else {
                for (b, u) in heads {
                    writeln!(out, "{b}\t{u}").map_err(w)?;
                }
            }
        }
        Command::Log {
            key,
            branch,
            limit,
            json,
        } => {
            let log = db.log(&key, &branch, limit)?;
            if json {
                let list: Vec<Json> = log
                    .iter()
                    .map(|(u, f)| {
                        let (ty, count) = match f.value {
                            ValueRef::Map(t) => ("map", t.entry_count),
                            ValueRef::Blob { len, .. } => ("blob", len),
                        };
                        json!({
                            "uid": u,
                            "bases": f.bases,
                            "message": f.message,
                            "type": ty,
                            "size": count,
                            "root": f.value.root(),
                        })
                    })
                    .collect();
                print_json(&json!({"key": key, "branch": branch, "versions": list}));
            } else {
                for (u, f) in log {
                    writeln!(out, "{u} {}", f.message).map_err(w)?;
                    if !f.bases.is_empty() {
                        let bases: Vec<String> = f.bases.iter().map(|b| b.to_string()).collect();
                        writeln!(out, "    bases {}", bases.join(" ")).map_err(w)?;
                    }
                }
            }
        }
        Command::Verify {
            key,
            reference,
            depth,
            json,
        } => {
            let report = db.verify(&key, &reference, depth)?;
            if json {
                print_json(&json!({
                    "uid": report.uid,
                    "passed": report.passed(),
                    "versions_checked": report.versions_checked,
                    "chunks_checked": report.chunks_checked,
                    "failure": report.failure,
                }));
            } else {
                match &report.failure {
                    None => writeln!(
                        out,
                        "PASS {} ({} versions, {} chunks)",
                        report.uid, report.versions_checked, report.chunks_checked
                    )
                    .map_err(w)?,
                    Some(f) => writeln!(out, "FAIL {}: chunk {}: {}", report.uid, f.chunk, f.reason).map_err(w)?,
                }
            }
            return Ok(u8::from(!report.passed()));
        }
        Command::Stat { json } => {
            let s = db.stats();
            if json {
                print_json(&json!({
                    "chunk_count": s.chunk_count,
                    "total_payload_bytes": s.total_payload_bytes,
                    "put_requests": s.put_requests,
                    "dedup_hits": s.dedup_hits,
                    "dedup_ratio": s.dedup_ratio(),
                    "keys": db.keys(),
                }));
            } else {
                writeln!(out, "chunks         {}", s.chunk_count).map_err(w)?;
                writeln!(out, "payload bytes  {}", s.total_payload_bytes).map_err(w)?;
                writeln!(out, "put requests   {}", s.put_requests).map_err(w)?;
                writeln!(out, "dedup hits     {}", s.dedup_hits).map_err(w)?;
                writeln!(out, "dedup ratio    {:.4}", s.dedup_ratio()).map_err(w)?;
                writeln!(out, "keys           {}", db.keys().len()).map_err(w)?;
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
