//! Content-addressable chunk storage.
//!
//! Every chunk is keyed by `SHA-256(kind ‖ payload)` and stored once. Two
//! backends are provided: [`MemStore`] and the append-only [`FileStore`].
//!
//! File layout inside the store directory:
//!
//! ```text
//! chunks.log   records of [u32 LE payload length][u8 kind][payload]
//! chunks.idx   records of [32-byte digest][u64 LE offset into chunks.log]
//! ```
//!
//! The index is an accelerator only. On open it is validated against the log,
//! extended by scanning any unindexed log tail, and rebuilt from scratch when
//! missing. A torn record at the end of the log is truncated away.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::id::NodeId;

pub const DEFAULT_MAX_CHUNK_BYTES: usize = 16 << 20;

pub const LOG_FILE: &str = "chunks.log";
pub const INDEX_FILE: &str = "chunks.idx";

const RECORD_HEADER: u64 = 5;
const INDEX_RECORD: u64 = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ChunkKind {
    RawBlob = 0,
    Leaf = 1,
    Index = 2,
    FNode = 3,
}

impl ChunkKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(ChunkKind::RawBlob),
            1 => Some(ChunkKind::Leaf),
            2 => Some(ChunkKind::Index),
            3 => Some(ChunkKind::FNode),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChunkKind::RawBlob => "raw-blob",
            ChunkKind::Leaf => "leaf-node",
            ChunkKind::Index => "index-node",
            ChunkKind::FNode => "fnode",
        }
    }
}

/// An immutable, typed byte sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chunk {
    kind: ChunkKind,
    payload: Vec<u8>,
}

impl Chunk {
    pub fn new(kind: ChunkKind, payload: Vec<u8>) -> Self {
        Chunk { kind, payload }
    }

    pub fn kind(&self) -> ChunkKind {
        self.kind
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn into_payload(self) -> Vec<u8> {
        self.payload
    }

    pub fn id(&self) -> NodeId {
        NodeId::digest(self.kind as u8, &self.payload)
    }
}

/// Bytes exactly as a backend returned them, before any digest check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawChunk {
    pub kind: u8,
    pub payload: Vec<u8>,
}

impl RawChunk {
    pub fn digest(&self) -> NodeId {
        NodeId::digest(self.kind, &self.payload)
    }

    /// Checks the bytes against `id` and converts them into a typed chunk.
    pub fn verify(self, id: &NodeId) -> Result<Chunk> {
        if self.digest() != *id {
            return Err(Error::Corrupt {
                id: *id,
                reason: "digest mismatch".into(),
            });
        }
        let kind = ChunkKind::from_byte(self.kind).ok_or_else(|| Error::Corrupt {
            id: *id,
            reason: format!("unknown chunk kind {}", self.kind),
        })?;
        Ok(Chunk::new(kind, self.payload))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StoreStats {
    pub chunk_count: u64,
    pub total_payload_bytes: u64,
    pub put_requests: u64,
    pub dedup_hits: u64,
}

impl StoreStats {
    /// Fraction of put requests absorbed by chunks that already existed.
    pub fn dedup_ratio(&self) -> f64 {
        if self.put_requests == 0 {
            0.0
        } else {
            self.dedup_hits as f64 / self.put_requests as f64
        }
    }

    /// Component-wise `self - earlier`.
    pub fn since(&self, earlier: &StoreStats) -> StoreStats {
        StoreStats {
            chunk_count: self.chunk_count - earlier.chunk_count,
            total_payload_bytes: self.total_payload_bytes - earlier.total_payload_bytes,
            put_requests: self.put_requests - earlier.put_requests,
            dedup_hits: self.dedup_hits - earlier.dedup_hits,
        }
    }
}

pub trait ChunkStore: Send + Sync {
    /// Stores the chunk unless an identical one exists; returns its id.
    fn put(&self, chunk: &Chunk) -> Result<NodeId>;

    /// Raw bytes for `id` without any digest check, or `None` if unknown.
    fn get_raw(&self, id: &NodeId) -> Result<Option<RawChunk>>;

    fn contains(&self, id: &NodeId) -> Result<bool>;

    fn stats(&self) -> StoreStats;

    /// Fetches and verifies a chunk. A digest mismatch is reported as
    /// corruption, never returned as data.
    fn get(&self, id: &NodeId) -> Result<Chunk> {
        match self.get_raw(id)? {
            Some(raw) => raw.verify(id),
            None => Err(Error::NotFound(*id)),
        }
    }

    fn sync(&self) -> Result<()> {
        Ok(())
    }
}

impl<S: ChunkStore + ?Sized> ChunkStore for &S {
    fn put(&self, chunk: &Chunk) -> Result<NodeId> {
        (**self).put(chunk)
    }
    fn get_raw(&self, id: &NodeId) -> Result<Option<RawChunk>> {
        (**self).get_raw(id)
    }
    fn contains(&self, id: &NodeId) -> Result<bool> {
        (**self).contains(id)
    }
    fn stats(&self) -> StoreStats {
        (**self).stats()
    }
    fn sync(&self) -> Result<()> {
        (**self).sync()
    }
}

impl<S: ChunkStore + ?Sized> ChunkStore for std::sync::Arc<S> {
    fn put(&self, chunk: &Chunk) -> Result<NodeId> {
        (**self).put(chunk)
    }
    fn get_raw(&self, id: &NodeId) -> Result<Option<RawChunk>> {
        (**self).get_raw(id)
    }
    fn contains(&self, id: &NodeId) -> Result<bool> {
        (**self).contains(id)
    }
    fn stats(&self) -> StoreStats {
        (**self).stats()
    }
    fn sync(&self) -> Result<()> {
        (**self).sync()
    }
}

fn check_size(len: usize, limit: usize) -> Result<()> {
    if len > limit {
        return Err(Error::OversizeChunk { size: len, limit });
    }
    Ok(())
}

#[derive(Debug)]
pub struct MemStore {
    chunks: RwLock<HashMap<NodeId, (u8, Vec<u8>)>>,
    stats: Mutex<StoreStats>,
    max_chunk_bytes: usize,
}

impl Default for MemStore {
    fn default() -> Self {
        MemStore::new()
    }
}

impl MemStore {
    pub fn new() -> Self {
        MemStore::with_max_chunk_bytes(DEFAULT_MAX_CHUNK_BYTES)
    }

    pub fn with_max_chunk_bytes(max_chunk_bytes: usize) -> Self {
        MemStore {
            chunks: RwLock::new(HashMap::new()),
            stats: Mutex::new(StoreStats::default()),
            max_chunk_bytes,
        }
    }

    /// All stored ids in unspecified order.
    pub fn ids(&self) -> Vec<NodeId> {
        self.chunks.read().unwrap().keys().copied().collect()
    }
}

impl ChunkStore for MemStore {
    fn put(&self, chunk: &Chunk) -> Result<NodeId> {
        check_size(chunk.payload.len(), self.max_chunk_bytes)?;
        let id = chunk.id();
        let mut stats = self.stats.lock().unwrap();
        let mut chunks = self.chunks.write().unwrap();
        stats.put_requests += 1;
        if chunks.contains_key(&id) {
            stats.dedup_hits += 1;
        } else {
            chunks.insert(id, (chunk.kind as u8, chunk.payload.clone()));
            stats.chunk_count += 1;
            stats.total_payload_bytes += chunk.payload.len() as u64;
        }
        Ok(id)
    }

    fn get_raw(&self, id: &NodeId) -> Result<Option<RawChunk>> {
        Ok(self
            .chunks
            .read()
            .unwrap()
            .get(id)
            .map(|(kind, payload)| RawChunk {
                kind: *kind,
                payload: payload.clone(),
            }))
    }

    fn contains(&self, id: &NodeId) -> Result<bool> {
        Ok(self.chunks.read().unwrap().contains_key(id))
    }

    fn stats(&self) -> StoreStats {
        *self.stats.lock().unwrap()
    }
}

struct Writer {
    end: u64,
    index_end: u64,
    index: File,
    stats: StoreStats,
}

/// Append-only, file-backed chunk store.
pub struct FileStore {
    dir: PathBuf,
    log_path: PathBuf,
    index_path: PathBuf,
    log: File,
    offsets: RwLock<HashMap<NodeId, u64>>,
    writer: Mutex<Writer>,
    max_chunk_bytes: usize,
}

impl std::fmt::Debug for FileStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FileStore").field("dir", &self.dir).finish()
    }
}

impl FileStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        FileStore::open_with_limit(dir, DEFAULT_MAX_CHUNK_BYTES)
    }

    /// Opens (creating if needed) the store in `dir` and recovers its index.
    pub fn open_with_limit(dir: impl AsRef<Path>, max_chunk_bytes: usize) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let log_path = dir.join(LOG_FILE);
        let index_path = dir.join(INDEX_FILE);
        let open_rw = |p: &Path| {
            OpenOptions::new()
                .read(true)
                .write(true)
                .create(true)
                .truncate(false)
                .open(p)
                .map_err(|e| Error::io(p, e))
        };
        let log = open_rw(&log_path)?;
        let index = open_rw(&index_path)?;

        let log_len = log.metadata().map_err(|e| Error::io(&log_path, e))?.len();
        let (mut offsets, mut index_end, scan_from) =
            load_index(&index, &index_path, &log, &log_path, log_len)?;
        if index_end == 0 {
            offsets.clear();
        }

        // Catch up on records the index has not seen, truncating a torn tail.
        let mut pos = scan_from;
        let mut appended = Vec::new();
        while pos < log_len {
            let mut header = [0u8; RECORD_HEADER as usize];
            if pos + RECORD_HEADER > log_len {
                break;
            }
            read_at(&log, &log_path, &mut header, pos)?;
            let len = u32::from_le_bytes(header[..4].try_into().unwrap()) as u64;
            if pos + RECORD_HEADER + len > log_len {
                break;
            }
            let mut payload = vec![0u8; len as usize];
            read_at(&log, &log_path, &mut payload, pos + RECORD_HEADER)?;
            let id = NodeId::digest(header[4], &payload);
            if let std::collections::hash_map::Entry::Vacant(v) = offsets.entry(id) {
                v.insert(pos);
                appended.extend_from_slice(id.as_bytes());
                appended.extend_from_slice(&pos.to_le_bytes());
            }
            pos += RECORD_HEADER + len;
        }
        let valid_len = pos;
        if valid_len < log_len {
            log.set_len(valid_len).map_err(|e| Error::io(&log_path, e))?;
        }
        index.set_len(index_end).map_err(|e| Error::io(&index_path, e))?;
        if !appended.is_empty() {
            write_at(&index, &index_path, &appended, index_end)?;
            index_end += appended.len() as u64;
        }

        let count = offsets.len() as u64;
        let stats = StoreStats {
            chunk_count: count,
            total_payload_bytes: valid_len - RECORD_HEADER * count,
            put_requests: count,
            dedup_hits: 0,
        };
        Ok(FileStore {
            dir,
            log_path,
            index_path,
            log,
            offsets: RwLock::new(offsets),
            writer: Mutex::new(Writer {
                end: valid_len,
                index_end,
                index,
                stats,
            }),
            max_chunk_bytes,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    /// Byte offset of the record holding `id` in the log.
    pub fn offset_of(&self, id: &NodeId) -> Option<u64> {
        self.offsets.read().unwrap().get(id).copied()
    }
}

fn read_at(file: &File, path: &Path, buf: &mut [u8], offset: u64) -> Result<()> {
    file.read_exact_at(buf, offset).map_err(|source| Error::IoAt {
        path: path.to_path_buf(),
        offset,
        source,
    })
}

fn write_at(file: &File, path: &Path, buf: &[u8], offset: u64) -> Result<()> {
    file.write_all_at(buf, offset).map_err(|source| Error::IoAt {
        path: path.to_path_buf(),
        offset,
        source,
    })
}

/// Loads the index file. Returns the offset map, the length of the valid index
/// prefix, and the log offset where unindexed records begin. Any inconsistency
/// discards the index so the caller rebuilds it from the log.
fn load_index(
    index: &File,
    index_path: &Path,
    log: &File,
    log_path: &Path,
    log_len: u64,
) -> Result<(HashMap<NodeId, u64>, u64, u64)> {
    let mut bytes = Vec::new();
    let mut handle = index;
    handle
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(index_path, e))?;
    let usable = bytes.len() as u64 / INDEX_RECORD * INDEX_RECORD;
    let mut offsets = HashMap::with_capacity((usable / INDEX_RECORD) as usize);
    let mut max_offset: Option<u64> = None;
    for rec in bytes[..usable as usize].chunks_exact(INDEX_RECORD as usize) {
        let id = NodeId::from_bytes(rec[..32].try_into().unwrap());
        let off = u64::from_le_bytes(rec[32..].try_into().unwrap());
        if off + RECORD_HEADER > log_len || max_offset.is_some_and(|m| off <= m) {
            return Ok((HashMap::new(), 0, 0));
        }
        max_offset = Some(off);
        offsets.insert(id, off);
    }
    let scan_from = match max_offset {
        None => 0,
        Some(off) => {
            let mut header = [0u8; RECORD_HEADER as usize];
            read_at(log, log_path, &mut header, off)?;
            let len = u32::from_le_bytes(header[..4].try_into().unwrap()) as u64;
            if off + RECORD_HEADER + len > log_len {
                return Ok((HashMap::new(), 0, 0));
            }
            off + RECORD_HEADER + len
        }
    };
    Ok((offsets, usable, scan_from))
}

impl ChunkStore for FileStore {
    fn put(&self, chunk: &Chunk) -> Result<NodeId> {
        check_size(chunk.payload.len(), self.max_chunk_bytes)?;
        let id = chunk.id();
        let mut w = self.writer.lock().unwrap();
        w.stats.put_requests += 1;
        if self.offsets.read().unwrap().contains_key(&id) {
            w.stats.dedup_hits += 1;
            return Ok(id);
        }
        let mut record = Vec::with_capacity(RECORD_HEADER as usize + chunk.payload.len());
        record.extend_from_slice(&(chunk.payload.len() as u32).to_le_bytes());
        record.push(chunk.kind as u8);
        record.extend_from_slice(&chunk.payload);
        let offset = w.end;
        write_at(&self.log, &self.log_path, &record, offset)?;
        w.end += record.len() as u64;

        let mut idx = [0u8; INDEX_RECORD as usize];
        idx[..32].copy_from_slice(id.as_bytes());
        idx[32..].copy_from_slice(&offset.to_le_bytes());
        let index_end = w.index_end;
        write_at(&w.index, &self.index_path, &idx, index_end)?;
        w.index_end += INDEX_RECORD;

        self.offsets.write().unwrap().insert(id, offset);
        w.stats.chunk_count += 1;
        w.stats.total_payload_bytes += chunk.payload.len() as u64;
        Ok(id)
    }

    fn get_raw(&self, id: &NodeId) -> Result<Option<RawChunk>> {
        let Some(offset) = self.offset_of(id) else {
            return Ok(None);
        };
        let mut header = [0u8; RECORD_HEADER as usize];
        read_at(&self.log, &self.log_path, &mut header, offset)?;
        let len = u32::from_le_bytes(header[..4].try_into().unwrap()) as usize;
        if len > self.max_chunk_bytes {
            return Err(Error::Corrupt {
                id: *id,
                reason: format!("record at offset {offset} claims {len} bytes"),
            });
        }
        let mut payload = vec![0u8; len];
        match self.log.read_exact_at(&mut payload, offset + RECORD_HEADER) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                return Err(Error::Corrupt {
                    id: *id,
                    reason: format!("record at offset {offset} runs past end of log"),
                })
            }
            Err(source) => {
                return Err(Error::IoAt {
                    path: self.log_path.clone(),
                    offset,
                    source,
                })
            }
        }
        Ok(Some(RawChunk {
            kind: header[4],
            payload,
        }))
    }

    fn contains(&self, id: &NodeId) -> Result<bool> {
        Ok(self.offsets.read().unwrap().contains_key(id))
    }

    fn stats(&self) -> StoreStats {
        self.writer.lock().unwrap().stats
    }

    fn sync(&self) -> Result<()> {
        let w = self.writer.lock().unwrap();
        self.log.sync_data().map_err(|e| Error::io(&self.log_path, e))?;
        w.index
            .sync_data()
            .map_err(|e| Error::io(&self.index_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(s: &str) -> Chunk {
        Chunk::new(ChunkKind::RawBlob, s.as_bytes().to_vec())
    }

    fn exercise_basic(store: &dyn ChunkStore) {
        assert_eq!(store.stats(), StoreStats::default());
        let a = store.put(&blob("alpha")).unwrap();
        let a2 = store.put(&blob("alpha")).unwrap();
        assert_eq!(a, a2);
        let s = store.stats();
        assert_eq!(s.chunk_count, 1);
        assert_eq!(s.put_requests, 2);
        assert_eq!(s.dedup_hits, 1);
        assert_eq!(s.total_payload_bytes, 5);
        assert_eq!(store.get(&a).unwrap(), blob("alpha"));
        let missing = NodeId::digest(0, b"nope");
        assert!(matches!(store.get(&missing), Err(Error::NotFound(_))));
        for i in 0..10 {
            store.put(&blob(&format!("c{i}"))).unwrap();
        }
        assert_eq!(store.stats().chunk_count, 11);
    }

    #[test]
    fn mem_store_basics() {
        exercise_basic(&MemStore::new());
    }

    #[test]
    fn file_store_basics() {
        let dir = tempfile::tempdir().unwrap();
        exercise_basic(&FileStore::open(dir.path()).unwrap());
    }

    #[test]
    fn empty_raw_blob_id_is_sha256_of_kind_byte() {
        let id = Chunk::new(ChunkKind::RawBlob, vec![]).id();
        // sha256(b"\x00"), computed with an external tool.
        let expected = "6e340b9cffb37a989ca544e6bb780a2c78901d3fb33738768511a30617afa01d";
        let hex: String = id.as_bytes().iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hex, expected);
    }

    #[test]
    fn kind_separates_domains() {
        let a = Chunk::new(ChunkKind::RawBlob, b"same".to_vec()).id();
        let b = Chunk::new(ChunkKind::Leaf, b"same".to_vec()).id();
        assert_ne!(a, b);
    }

    #[test]
    fn oversize_rejected() {
        let store = MemStore::with_max_chunk_bytes(4);
        assert!(matches!(
            store.put(&blob("12345")),
            Err(Error::OversizeChunk { size: 5, limit: 4 })
        ));
    }

    #[test]
    fn reopen_preserves_chunks() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<_> = {
            let s = FileStore::open(dir.path()).unwrap();
            (0..50).map(|i| s.put(&blob(&format!("chunk {i}"))).unwrap()).collect()
        };
        let s = FileStore::open(dir.path()).unwrap();
        assert_eq!(s.stats().chunk_count, 50);
        for (i, id) in ids.iter().enumerate() {
            assert_eq!(s.get(id).unwrap().payload(), format!("chunk {i}").as_bytes());
        }
    }

    #[test]
    fn rebuilds_missing_index() {
        let dir = tempfile::tempdir().unwrap();
        let id = FileStore::open(dir.path()).unwrap().put(&blob("x")).unwrap();
        std::fs::remove_file(dir.path().join(INDEX_FILE)).unwrap();
        let s = FileStore::open(dir.path()).unwrap();
        assert_eq!(s.get(&id).unwrap(), blob("x"));
        drop(s);
        assert_eq!(
            std::fs::metadata(dir.path().join(INDEX_FILE)).unwrap().len(),
            INDEX_RECORD
        );
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = {
            let s = FileStore::open(dir.path()).unwrap();
            (s.put(&blob("first")).unwrap(), s.put(&blob("second")).unwrap())
        };
        let log = dir.path().join(LOG_FILE);
        let len = std::fs::metadata(&log).unwrap().len();
        let f = OpenOptions::new().write(true).open(&log).unwrap();
        f.set_len(len - 3).unwrap();
        drop(f);
        let s = FileStore::open(dir.path()).unwrap();
        assert_eq!(s.get(&a).unwrap(), blob("first"));
        assert!(matches!(s.get(&b), Err(Error::NotFound(_))));
        assert_eq!(s.stats().chunk_count, 1);
        // Store remains appendable after recovery.
        let c = s.put(&blob("third")).unwrap();
        drop(s);
        let s = FileStore::open(dir.path()).unwrap();
        assert_eq!(s.get(&c).unwrap(), blob("third"));
        assert_eq!(s.stats().chunk_count, 2);
    }

    #[test]
    fn unindexed_records_are_recovered() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<_> = {
            let s = FileStore::open(dir.path()).unwrap();
            (0..5).map(|i| s.put(&blob(&format!("r{i}"))).unwrap()).collect()
        };
        // Drop the last two index records plus a partial one.
        let idx = dir.path().join(INDEX_FILE);
        let f = OpenOptions::new().write(true).open(&idx).unwrap();
        f.set_len(INDEX_RECORD * 3 - 7).unwrap();
        drop(f);
        let s = FileStore::open(dir.path()).unwrap();
        for id in &ids {
            assert!(s.contains(id).unwrap());
        }
        assert_eq!(s.stats().chunk_count, 5);
    }

    #[test]
    fn flipped_byte_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let s = FileStore::open(dir.path()).unwrap();
        let id = s.put(&blob("payload bytes here")).unwrap();
        let total = std::fs::metadata(dir.path().join(LOG_FILE)).unwrap().len();
        for pos in 0..total {
            let mut bytes = std::fs::read(dir.path().join(LOG_FILE)).unwrap();
            bytes[pos as usize] ^= 0x01;
            std::fs::write(dir.path().join(LOG_FILE), &bytes).unwrap();
            let err = s.get(&id).unwrap_err();
            assert!(err.is_integrity(), "offset {pos}: {err}");
            bytes[pos as usize] ^= 0x01;
            std::fs::write(dir.path().join(LOG_FILE), &bytes).unwrap();
        }
        assert!(s.get(&id).is_ok());
    }
}
