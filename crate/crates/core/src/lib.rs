//! A versioned, deduplicating, tamper-evident key-value store.
//!
//! Values are ordered maps kept in a content-defined Merkle search tree
//! (the pattern-oriented split tree) or opaque blobs. Tree nodes and version
//! records are chunks addressed by their SHA-256 digest, so identical content
//! is stored once, a root id commits to the whole value, and a version uid
//! commits to the value plus its full derivation history.
//!
//! Node boundaries depend only on content, which makes a tree's shape a
//! function of its entry set: any insertion order yields the same root, an
//! update rewrites one root-to-leaf path, and diff can prune subtrees whose
//! ids match on both sides.
//!
//! Start with [`Engine`]; the lower layers are public for direct use:
//!
//! - [`chunker`]: rolling hash and boundary detection
//! - [`store`]: chunk storage (in memory or an append-only log)
//! - [`tree`]: build, lookup, scan and copy-on-write edits
//! - [`diff`] and [`merge`]: pruned diff and three-way merge
//! - [`version`]: commits, branches and verification
//!
//! ```
//! use branchdb::{Engine, EngineConfig};
//!
//! let db = Engine::in_memory(EngineConfig::default()).unwrap();
//! let entries = vec![(b"alice".to_vec(), b"1".to_vec()), (b"bob".to_vec(), b"2".to_vec())];
//! let v1 = db.put_map("people", "master", entries, "initial").unwrap();
//! db.branch("people", "dev", "master").unwrap();
//! db.update("people", "dev", vec![(b"carol".to_vec(), Some(b"3".to_vec()))], "add carol").unwrap();
//!
//! let (changes, _) = db.diff("people", "master", "dev").unwrap();
//! assert_eq!(changes.to_text(), "+ carol\t3\n");
//! assert!(db.verify("people", &v1.to_string(), None).unwrap().passed());
//! ```

pub mod chunker;
pub mod dataset;
pub mod diff;
pub mod engine;
pub mod error;
pub mod id;
pub mod merge;
pub mod node;
pub mod store;
pub mod tree;
pub mod version;

pub use chunker::{Chunker, ChunkerConfig};
pub use dataset::LoadReport;
pub use diff::{Change, DiffResult, DiffStats};
pub use engine::{Engine, EngineConfig, Value};
pub use error::{Error, Result};
pub use id::{NodeId, Uid};
pub use merge::{merge3, MergeOutcome};
pub use store::{ChunkStore, FileStore, MemStore, StoreStats};
pub use tree::{PosTree, TreeRef};
pub use version::{BranchMerge, FNode, ValueRef, VerificationReport};
