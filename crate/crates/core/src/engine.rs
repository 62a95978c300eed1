//! The library facade: one store directory, one chunker configuration,
//! branch heads per object key.
//!
//! Store layout:
//!
//! ```text
//! <store>/config        chunker parameters, `key = value` lines
//! <store>/chunks.log    chunk records
//! <store>/chunks.idx    digest -> offset index
//! <store>/branches.log  branch head journal
//! <store>/LOCK          advisory lock held by the opening process
//! ```

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use crate::chunker::{Chunker, ChunkerConfig};
use crate::dataset::{parse_csv, LoadReport};
use crate::diff::{diff_with_stats, DiffResult, DiffStats};
use crate::error::{Error, Result};
use crate::id::Uid;
use crate::node::Slot;
use crate::store::{Chunk, ChunkKind, ChunkStore, FileStore, MemStore, StoreStats};
use crate::tree::{Edit, Entry, PosTree, TreeRef};
use crate::version::{BranchMerge, BranchTable, FNode, ValueRef, VerificationReport, Versions, BRANCH_JOURNAL};

pub const CONFIG_FILE: &str = "config";
pub const LOCK_FILE: &str = "LOCK";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EngineConfig {
    pub chunker: ChunkerConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            chunker: ChunkerConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn to_text(&self) -> String {
        let c = &self.chunker;
        format!(
            "format = {FORMAT_VERSION}\nchunker.k = {}\nchunker.q = {}\nchunker.max_node_bytes = {}\nchunker.seed = {}\n",
            c.k, c.q, c.max_node_bytes, c.seed
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ChunkerConfig::default();
        let mut format = None;
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("bad line {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| -> Result<u64> {
                v.parse().map_err(|_| Error::InvalidConfig(format!("{k}: not a number: {v:?}")))
            };
            match k {
                "format" => format = Some(num(v)?),
                "chunker.k" => c.k = num(v)? as usize,
                "chunker.q" => c.q = num(v)? as u32,
                "chunker.max_node_bytes" => c.max_node_bytes = num(v)? as usize,
                "chunker.seed" => c.seed = num(v)?,
                _ => return Err(Error::InvalidConfig(format!("unknown setting {k:?}"))),
            }
        }
        if format != Some(FORMAT_VERSION as u64) {
            return Err(Error::InvalidConfig(format!("unsupported format {format:?}")));
        }
        c.validate()?;
        Ok(EngineConfig { chunker: c })
    }
}

/// A materialized value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Value {
    Map(Vec<Entry>),
    Blob(Vec<u8>),
}

pub struct Engine {
    dir: Option<PathBuf>,
    config: EngineConfig,
    store: Box<dyn ChunkStore>,
    branches: BranchTable,
    chunker: Chunker,
    _lock: Option<File>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("dir", &self.dir)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

fn lock(dir: &Path) -> Result<File> {
    let path = dir.join(LOCK_FILE);
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(std::fs::TryLockError::WouldBlock) => Err(Error::Locked(dir.to_path_buf())),
        Err(std::fs::TryLockError::Error(e)) => Err(Error::io(&path, e)),
    }
}

impl Engine {
    /// Creates a new store directory with `config`.
    pub fn init(dir: impl AsRef<Path>, config: EngineConfig) -> Result<Self> {
        let dir = dir.as_ref();
        config.chunker.validate()?;
        let cfg = dir.join(CONFIG_FILE);
        if cfg.exists() {
            return Err(Error::StoreExists(dir.to_path_buf()));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let lock = lock(dir)?;
        fs::write(&cfg, config.to_text()).map_err(|e| Error::io(&cfg, e))?;
        Self::open_locked(dir, config, lock)
    }

    /// Opens an existing store with its recorded configuration.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let cfg = dir.join(CONFIG_FILE);
        let text = match fs::read_to_string(&cfg) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::NoStore(dir.to_path_buf())),
            Err(e) => return Err(Error::io(&cfg, e)),
        };
        let config = EngineConfig::parse(&text)?;
        let lock = lock(dir)?;
        Self::open_locked(dir, config, lock)
    }

    /// Opens an existing store, refusing if its configuration differs.
    pub fn open_with(dir: impl AsRef<Path>, config: EngineConfig) -> Result<Self> {
        let engine = Self::open(&dir)?;
        if engine.config != config {
            return Err(Error::ConfigMismatch(dir.as_ref().to_path_buf()));
        }
        Ok(engine)
    }

    fn open_locked(dir: &Path, config: EngineConfig, lock: File) -> Result<Self> {
        let store = FileStore::open(dir)?;
        let branches = BranchTable::open(dir.join(BRANCH_JOURNAL))?;
        Ok(Engine {
            dir: Some(dir.to_path_buf()),
            config,
            store: Box::new(store),
            branches,
            chunker: Chunker::new(config.chunker)?,
            _lock: Some(lock),
        })
    }

    pub fn in_memory(config: EngineConfig) -> Result<Self> {
        Self::with_store(Box::new(MemStore::new()), config)
    }

    /// An engine over any chunk store, with in-memory branch heads.
    pub fn with_store(store: Box<dyn ChunkStore>, config: EngineConfig) -> Result<Self> {
        Ok(Engine {
            dir: None,
            config,
            store,
            branches: BranchTable::in_memory(),
            chunker: Chunker::new(config.chunker)?,
            _lock: None,
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &dyn ChunkStore {
        self.store.as_ref()
    }

    pub fn chunker(&self) -> &Chunker {
        &self.chunker
    }

    pub fn trees(&self) -> PosTree<'_> {
        PosTree::new(self.store.as_ref(), &self.chunker)
    }

    pub fn versions(&self) -> Versions<'_> {
        Versions::new(self.store.as_ref(), &self.branches)
    }

    pub fn branch_table(&self) -> &BranchTable {
        &self.branches
    }

    pub fn stats(&self) -> StoreStats {
        self.store.stats()
    }

    fn commit(&self, key: &str, branch: &str, value: ValueRef, message: &str) -> Result<Uid> {
        let uid = self.versions().commit(key, branch, value, message)?;
        self.branches.sync()?;
        Ok(uid)
    }

    /// Commits a map built from `entries` (any order, unique keys).
    pub fn put_map<I>(&self, key: &str, branch: &str, entries: I, message: &str) -> Result<Uid>
    where
        I: IntoIterator<Item = Entry>,
    {
        let mut entries: Vec<Entry> = entries.into_iter().collect();
        entries.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let tree = self.trees().build(entries)?;
        self.commit(key, branch, ValueRef::Map(tree), message)
    }

    pub fn put_blob(&self, key: &str, branch: &str, bytes: Vec<u8>, message: &str) -> Result<Uid> {
        let len = bytes.len() as u64;
        let id = self.store.put(&Chunk::new(ChunkKind::RawBlob, bytes))?;
        self.commit(key, branch, ValueRef::Blob { id, len }, message)
    }

    /// Applies edits to the map at the head of `branch` (an empty map if the
    /// key is new) and commits the result.
    pub fn update(&self, key: &str, branch: &str, edits: Vec<Edit>, message: &str) -> Result<Uid> {
        let trees = self.trees();
        let base = match self.branches.head(key, branch) {
            Some(h) => *self.versions().fnode(&h)?.value.as_map()?,
            None => trees.empty()?,
        };
        let tree = trees.apply(&base, edits)?;
        self.commit(key, branch, ValueRef::Map(tree), message)
    }

    /// Resolves `branch`, `branch@~n` or a Base32 uid belonging to `key`.
    pub fn resolve(&self, key: &str, reference: &str) -> Result<Uid> {
        let versions = self.versions();
        if let Some((branch, back)) = reference.split_once("@~") {
            let n: usize = back
                .parse()
                .map_err(|_| Error::UnknownRef(reference.to_string()))?;
            let mut uid = versions.head(key, branch)?;
            for _ in 0..n {
                uid = *versions
                    .fnode(&uid)?
                    .bases
                    .first()
                    .ok_or_else(|| Error::UnknownRef(format!("{reference}: history is shorter than {n}")))?;
            }
            return Ok(uid);
        }
        if let Some(uid) = self.branches.head(key, reference) {
            return Ok(uid);
        }
        if let Ok(uid) = Uid::parse(reference) {
            let f = match versions.fnode(&uid) {
                Ok(f) => f,
                Err(Error::NotFound(_)) => return Err(Error::UnknownRef(reference.to_string())),
                Err(e) => return Err(e),
            };
            if f.key != key {
                return Err(Error::UnknownRef(format!("{reference} belongs to key {:?}", f.key)));
            }
            return Ok(uid);
        }
        if self.branches.has_key(key) {
            Err(Error::UnknownRef(reference.to_string()))
        } else {
            Err(Error::UnknownKey(key.to_string()))
        }
    }

    pub fn fnode(&self, key: &str, reference: &str) -> Result<(Uid, FNode)> {
        let uid = self.resolve(key, reference)?;
        Ok((uid, self.versions().fnode(&uid)?))
    }

    pub fn tree(&self, key: &str, reference: &str) -> Result<TreeRef> {
        Ok(*self.fnode(key, reference)?.1.value.as_map()?)
    }

    pub fn get(&self, key: &str, reference: &str) -> Result<Value> {
        let (_, f) = self.fnode(key, reference)?;
        self.materialize(&f.value)
    }

    /// Like [`Engine::get`], but verifies the version and its history first.
    pub fn get_verified(&self, key: &str, reference: &str) -> Result<Value> {
        let (uid, f) = self.fnode(key, reference)?;
        let report = self.versions().verify(&uid, None);
        if let Some(fail) = report.failure {
            return Err(Error::Verification {
                chunk: fail.chunk,
                reason: fail.reason.to_string(),
            });
        }
        self.materialize(&f.value)
    }

    fn materialize(&self, value: &ValueRef) -> Result<Value> {
        match value {
            ValueRef::Map(t) => Ok(Value::Map(self.trees().entries(t)?)),
            ValueRef::Blob { id, .. } => Ok(Value::Blob(self.trees().resolve(&Slot::Blob(*id))?)),
        }
    }

    pub fn lookup(&self, key: &str, reference: &str, entry_key: &[u8]) -> Result<Option<Vec<u8>>> {
        let tree = self.tree(key, reference)?;
        self.trees().lookup(&tree, entry_key)
    }

    /// Entries with `lo <= key < hi`, in key order.
    pub fn select(&self, key: &str, reference: &str, lo: Option<&[u8]>, hi: Option<&[u8]>) -> Result<Vec<Entry>> {
        let tree = self.tree(key, reference)?;
        self.trees().scan(&tree, lo, hi)
    }

    /// Loads a CSV file as one commit of `key/branch`.
    pub fn load_csv(&self, path: impl AsRef<Path>, key: &str, branch: &str, key_column: &str) -> Result<LoadReport> {
        let path = path.as_ref();
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        let message = format!("load {}", path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into()));
        self.load_csv_bytes(&data, key, branch, key_column, &message)
    }

    pub fn load_csv_bytes(
        &self,
        data: &[u8],
        key: &str,
        branch: &str,
        key_column: &str,
        message: &str,
    ) -> Result<LoadReport> {
        let dataset = parse_csv(data, key_column)?;
        let before = self.store.stats();
        let rows = dataset.rows.len() as u64;
        let tree = self.trees().build(dataset.rows)?;
        let uid = self.commit(key, branch, ValueRef::Map(tree), message)?;
        let delta = self.store.stats().since(&before);
        Ok(LoadReport::new(uid, rows, data.len() as u64, delta))
    }

    pub fn diff(&self, key: &str, ref_a: &str, ref_b: &str) -> Result<(DiffResult, DiffStats)> {
        let a = self.tree(key, ref_a)?;
        let b = self.tree(key, ref_b)?;
        diff_with_stats(&self.trees(), &a, &b)
    }

    pub fn branch(&self, key: &str, new_branch: &str, from: &str) -> Result<Uid> {
        let uid = self.resolve(key, from)?;
        self.versions().branch(key, new_branch, uid)?;
        self.branches.sync()?;
        Ok(uid)
    }

    pub fn merge(&self, key: &str, dst: &str, src: &str, message: Option<&str>) -> Result<BranchMerge> {
        let out = self.versions().merge_branches(&self.chunker, key, dst, src, message)?;
        self.branches.sync()?;
        Ok(out)
    }

    pub fn head(&self, key: &str, branch: &str) -> Result<Uid> {
        self.versions().head(key, branch)
    }

    pub fn latest(&self, key: &str) -> Result<Vec<(String, Uid)>> {
        self.versions().latest(key)
    }

    pub fn log(&self, key: &str, branch: &str, limit: usize) -> Result<Vec<(Uid, FNode)>> {
        self.versions().log(key, branch, limit)
    }

    pub fn keys(&self) -> Vec<String> {
        self.branches.keys()
    }

    pub fn verify(&self, key: &str, reference: &str, depth_limit: Option<usize>) -> Result<VerificationReport> {
        let uid = match self.resolve(key, reference) {
            Ok(u) => u,
            // A uid whose chunk is missing or mangled still gets a report.
            Err(Error::Corrupt { .. }) => Uid::parse(reference)?,
            Err(e) => return Err(e),
        };
        Ok(self.versions().verify(&uid, depth_limit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EngineConfig {
        EngineConfig {
            chunker: ChunkerConfig::new(8, 6),
        }
    }

    fn entries(n: u32, tag: &str) -> Vec<Entry> {
        (0..n).map(|i| (format!("r{i:05}").into_bytes(), format!("{tag}-{i}").into_bytes())).collect()
    }

    #[test]
    fn config_text_roundtrip() {
        let c = small();
        assert_eq!(EngineConfig::parse(&c.to_text()).unwrap(), c);
        assert!(EngineConfig::parse("format = 1\nchunker.q = 99\n").is_err());
        assert!(EngineConfig::parse("format = 1\nbogus = 1\n").is_err());
    }

    #[test]
    fn init_open_lock_and_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s");
        let e = Engine::init(&path, small()).unwrap();
        let uid = e.put_map("ds", "master", entries(100, "a"), "first").unwrap();
        assert!(matches!(Engine::open(&path), Err(Error::Locked(_))));
        drop(e);
        assert!(matches!(Engine::init(&path, small()), Err(Error::StoreExists(_))));
        assert!(matches!(
            Engine::open_with(&path, EngineConfig::default()),
            Err(Error::ConfigMismatch(_))
        ));
        let e = Engine::open(&path).unwrap();
        assert_eq!(e.head("ds", "master").unwrap(), uid);
        assert_eq!(e.get("ds", "master").unwrap(), Value::Map(entries(100, "a")));
        assert!(matches!(Engine::open(dir.path().join("none")), Err(Error::NoStore(_))));
    }

    #[test]
    fn refs_resolve() {
        let e = Engine::in_memory(small()).unwrap();
        let u0 = e.put_map("ds", "master", entries(10, "a"), "0").unwrap();
        let u1 = e.update("ds", "master", vec![(b"r00001".to_vec(), Some(b"x".to_vec()))], "1").unwrap();
        assert_eq!(e.resolve("ds", "master").unwrap(), u1);
        assert_eq!(e.resolve("ds", "master@~1").unwrap(), u0);
        assert_eq!(e.resolve("ds", &u0.to_string().to_lowercase()).unwrap(), u0);
        assert!(e.resolve("ds", "master@~2").is_err());
        assert!(matches!(e.resolve("other", "master"), Err(Error::UnknownKey(_))));
        assert_eq!(e.lookup("ds", "master@~1", b"r00001").unwrap(), Some(b"a-1".to_vec()));
        assert_eq!(e.lookup("ds", "master", b"r00001").unwrap(), Some(b"x".to_vec()));
    }

    #[test]
    fn blob_roundtrip() {
        let e = Engine::in_memory(small()).unwrap();
        e.put_blob("doc", "master", b"hello".to_vec(), "b").unwrap();
        assert_eq!(e.get("doc", "master").unwrap(), Value::Blob(b"hello".to_vec()));
        assert!(matches!(e.select("doc", "master", None, None), Err(Error::TypeMismatch { .. })));
    }

    #[test]
    fn same_csv_twice_dedups() {
        let e = Engine::in_memory(small()).unwrap();
        let mut csv = String::from("id,v\n");
        for i in 0..500 {
            csv.push_str(&format!("{i:04},value number {i}\n"));
        }
        let a = e.load_csv_bytes(csv.as_bytes(), "one", "master", "id", "a").unwrap();
        let b = e.load_csv_bytes(csv.as_bytes(), "two", "master", "id", "b").unwrap();
        assert_eq!(a.rows, 500);
        // Only the new FNode chunk is written.
        assert_eq!(b.new_chunks, 1);
        assert!(b.new_payload_bytes < 200);
        let rows = e.select("one", "master", None, None).unwrap();
        let joined: Vec<u8> = rows.iter().flat_map(|(_, v)| v.iter().copied().chain([b'\n'])).collect();
        assert_eq!(joined, csv.as_bytes()[5..]);
    }

    #[test]
    fn get_verified_names_bad_chunk() {
        use crate::store::RawChunk;
        use crate::id::NodeId;
        use std::sync::Arc;

        struct Flip {
            inner: Arc<MemStore>,
            victim: std::sync::Mutex<Option<NodeId>>,
        }
        impl ChunkStore for Flip {
            fn put(&self, c: &Chunk) -> Result<NodeId> {
                self.inner.put(c)
            }
            fn get_raw(&self, id: &NodeId) -> Result<Option<RawChunk>> {
                let mut raw = self.inner.get_raw(id)?;
                if Some(*id) == *self.victim.lock().unwrap() {
                    if let Some(r) = raw.as_mut() {
                        r.payload[0] ^= 1;
                    }
                }
                Ok(raw)
            }
            fn contains(&self, id: &NodeId) -> Result<bool> {
                self.inner.contains(id)
            }
            fn stats(&self) -> StoreStats {
                self.inner.stats()
            }
        }

        let inner = Arc::new(MemStore::new());
        let flip = Flip {
            inner: inner.clone(),
            victim: Default::default(),
        };
        let e = Engine::with_store(Box::new(flip), small()).unwrap();
        e.put_map("ds", "master", entries(300, "a"), "a").unwrap();
        let tree = e.tree("ds", "master").unwrap();
        let leaf = e.trees().leaf_ids(&tree).unwrap()[1];
        assert!(e.get_verified("ds", "master").is_ok());
        // Reach the wrapper through a fresh engine sharing the same chunks.
        let flip = Flip {
            inner,
            victim: std::sync::Mutex::new(Some(leaf)),
        };
        let e2 = Engine::with_store(Box::new(flip), small()).unwrap();
        let uid = e.head("ds", "master").unwrap();
        e2.branch_table().compare_and_set("ds", "master", None, uid).unwrap();
        match e2.get_verified("ds", "master") {
            Err(Error::Verification { chunk, .. }) => assert_eq!(chunk, leaf),
            other => panic!("{other:?}"),
        }
    }
}
