//! Versions, branches and tamper-evident verification.
//!
//! Each commit is an FNode chunk. Its id is the version uid, so a uid commits
//! to the value (through the tree root) and to the whole derivation history
//! (through the base uids). FNode layout, all integers little-endian:
//!
//! ```text
//! [u16 key_len][key][u8 type][32-byte value_root][u64 entry_count][u8 height]
//! [u8 base_count][32-byte base uid]*[u16 msg_len][msg]
//! ```
//!
//! Branch heads live in an append-only journal (`branches.log`) of
//! `[u16 key_len][key][u8 branch_len][branch][32-byte uid]` records; the last
//! record for a `(key, branch)` pair is its head.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::Read;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::Serialize;

use crate::chunker::Chunker;
use crate::error::{Error, Result};
use crate::id::{NodeId, Uid};
use crate::merge::{merge3, MergeOutcome};
use crate::node::{Node, Reader, Slot};
use crate::store::{Chunk, ChunkKind, ChunkStore};
use crate::tree::{PosTree, TreeRef};

pub const BRANCH_JOURNAL: &str = "branches.log";
pub const MAX_OBJECT_KEY_BYTES: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum ValueType {
    Map = 0,
    Blob = 1,
}

impl ValueType {
    pub fn name(self) -> &'static str {
        match self {
            ValueType::Map => "map",
            ValueType::Blob => "blob",
        }
    }
}

/// What a version points at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueRef {
    Map(TreeRef),
    /// Raw-blob chunk id and byte length.
    Blob { id: NodeId, len: u64 },
}

impl ValueRef {
    pub fn value_type(&self) -> ValueType {
        match self {
            ValueRef::Map(_) => ValueType::Map,
            ValueRef::Blob { .. } => ValueType::Blob,
        }
    }

    pub fn root(&self) -> NodeId {
        match self {
            ValueRef::Map(t) => t.root,
            ValueRef::Blob { id, .. } => *id,
        }
    }

    pub fn as_map(&self) -> Result<&TreeRef> {
        match self {
            ValueRef::Map(t) => Ok(t),
            ValueRef::Blob { .. } => Err(Error::TypeMismatch {
                expected: "map",
                found: "blob",
            }),
        }
    }
}

/// A version record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FNode {
    pub key: String,
    pub value: ValueRef,
    pub bases: Vec<Uid>,
    pub message: String,
}

impl FNode {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.key.len() + self.message.len() + 32 * self.bases.len());
        out.extend_from_slice(&(self.key.len() as u16).to_le_bytes());
        out.extend_from_slice(self.key.as_bytes());
        out.push(self.value.value_type() as u8);
        out.extend_from_slice(self.value.root().as_bytes());
        let (count, height) = match self.value {
            ValueRef::Map(t) => (t.entry_count, t.height),
            ValueRef::Blob { len, .. } => (len, 0),
        };
        out.extend_from_slice(&count.to_le_bytes());
        out.push(height);
        out.push(self.bases.len() as u8);
        for b in &self.bases {
            out.extend_from_slice(b.as_bytes());
        }
        out.extend_from_slice(&(self.message.len() as u16).to_le_bytes());
        out.extend_from_slice(self.message.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let key_len = r.u16()? as usize;
        let key = String::from_utf8(r.take(key_len)?.to_vec())
            .map_err(|_| Error::malformed("fnode", "key is not UTF-8"))?;
        let ty = r.u8()?;
        let root = r.id()?;
        let count = r.u64()?;
        let height = r.u8()?;
        let value = match ty {
            0 => {
                if height == 0 {
                    return Err(Error::malformed("fnode", "map with height 0"));
                }
                ValueRef::Map(TreeRef {
                    root,
                    height,
                    entry_count: count,
                })
            }
            1 => {
                if height != 0 {
                    return Err(Error::malformed("fnode", "blob with non-zero height"));
                }
                ValueRef::Blob { id: root, len: count }
            }
            t => return Err(Error::malformed("fnode", format!("unknown value type {t}"))),
        };
        let base_count = r.u8()? as usize;
        let mut bases = Vec::with_capacity(base_count);
        for _ in 0..base_count {
            bases.push(Uid(r.id()?));
        }
        let msg_len = r.u16()? as usize;
        let message = String::from_utf8(r.take(msg_len)?.to_vec())
            .map_err(|_| Error::malformed("fnode", "message is not UTF-8"))?;
        if !r.done() {
            return Err(Error::malformed("fnode", "trailing bytes"));
        }
        Ok(FNode {
            key,
            value,
            bases,
            message,
        })
    }

    pub fn to_chunk(&self) -> Chunk {
        Chunk::new(ChunkKind::FNode, self.encode())
    }

    pub fn uid(&self) -> Uid {
        Uid(self.to_chunk().id())
    }
}

pub fn validate_branch_name(name: &str) -> Result<()> {
    let ok = (1..=64).contains(&name.len())
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidBranchName(name.to_string()))
    }
}

pub fn validate_object_key(key: &str) -> Result<()> {
    if key.is_empty() || key.len() > MAX_OBJECT_KEY_BYTES {
        return Err(Error::InvalidKey(format!(
            "object key must be 1..={MAX_OBJECT_KEY_BYTES} bytes"
        )));
    }
    Ok(())
}

pub fn load_fnode(store: &dyn ChunkStore, uid: &Uid) -> Result<FNode> {
    let chunk = store.get(&uid.0)?;
    if chunk.kind() != ChunkKind::FNode {
        return Err(Error::Corrupt {
            id: uid.0,
            reason: format!("expected fnode, found {}", chunk.kind().name()),
        });
    }
    FNode::decode(chunk.payload()).map_err(|e| Error::Corrupt {
        id: uid.0,
        reason: e.to_string(),
    })
}

struct Journal {
    path: PathBuf,
    file: File,
    end: u64,
}

/// Branch heads per object key, optionally journaled to disk.
pub struct BranchTable {
    heads: RwLock<BTreeMap<String, BTreeMap<String, Uid>>>,
    journal: Option<Mutex<Journal>>,
}

impl Default for BranchTable {
    fn default() -> Self {
        BranchTable::in_memory()
    }
}

fn encode_journal_record(key: &str, branch: &str, uid: &Uid) -> Vec<u8> {
    let mut rec = Vec::with_capacity(2 + key.len() + 1 + branch.len() + 32);
    rec.extend_from_slice(&(key.len() as u16).to_le_bytes());
    rec.extend_from_slice(key.as_bytes());
    rec.push(branch.len() as u8);
    rec.extend_from_slice(branch.as_bytes());
    rec.extend_from_slice(uid.as_bytes());
    rec
}

impl BranchTable {
    pub fn in_memory() -> Self {
        BranchTable {
            heads: RwLock::new(BTreeMap::new()),
            journal: None,
        }
    }

    /// Replays the journal at `path`, dropping a torn final record.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| Error::io(&path, e))?;
        let mut heads: BTreeMap<String, BTreeMap<String, Uid>> = BTreeMap::new();
        let mut r = Reader { bytes: &bytes, pos: 0 };
        let mut valid = 0;
        loop {
            let rec = (|| -> Result<(String, String, Uid)> {
                let kl = r.u16()? as usize;
                let key = String::from_utf8(r.take(kl)?.to_vec())
                    .map_err(|_| Error::malformed("branch journal", "key is not UTF-8"))?;
                let bl = r.u8()? as usize;
                let branch = String::from_utf8(r.take(bl)?.to_vec())
                    .map_err(|_| Error::malformed("branch journal", "branch is not UTF-8"))?;
                Ok((key, branch, Uid(r.id()?)))
            })();
            match rec {
                Ok((key, branch, uid)) => {
                    heads.entry(key).or_default().insert(branch, uid);
                    valid = r.pos;
                }
                Err(_) => break,
            }
        }
        if (valid as u64) < bytes.len() as u64 {
            file.set_len(valid as u64).map_err(|e| Error::io(&path, e))?;
        }
        Ok(BranchTable {
            heads: RwLock::new(heads),
            journal: Some(Mutex::new(Journal {
                path,
                file,
                end: valid as u64,
            })),
        })
    }

    pub fn head(&self, key: &str, branch: &str) -> Option<Uid> {
        self.heads.read().unwrap().get(key)?.get(branch).copied()
    }

    pub fn has_key(&self, key: &str) -> bool {
        self.heads.read().unwrap().contains_key(key)
    }

    pub fn keys(&self) -> Vec<String> {
        self.heads.read().unwrap().keys().cloned().collect()
    }

    /// Branches of `key` with their heads, sorted by branch name.
    pub fn branches(&self, key: &str) -> Vec<(String, Uid)> {
        self.heads
            .read()
            .unwrap()
            .get(key)
            .map(|m| m.iter().map(|(b, u)| (b.clone(), *u)).collect())
            .unwrap_or_default()
    }

    /// Moves `key/branch` from `expected` to `new` atomically. `expected ==
    /// None` requires the branch not to exist yet.
    pub fn compare_and_set(&self, key: &str, branch: &str, expected: Option<Uid>, new: Uid) -> Result<()> {
        validate_object_key(key)?;
        validate_branch_name(branch)?;
        let mut heads = self.heads.write().unwrap();
        let current = heads.get(key).and_then(|m| m.get(branch)).copied();
        if current != expected {
            if expected.is_none() {
                return Err(Error::BranchExists {
                    key: key.into(),
                    branch: branch.into(),
                });
            }
            let show = |u: Option<Uid>| u.map_or_else(|| "<none>".to_string(), |u| u.to_string());
            return Err(Error::HeadMoved {
                key: key.into(),
                branch: branch.into(),
                expected: show(expected),
                found: show(current),
            });
        }
        if let Some(j) = &self.journal {
            let mut j = j.lock().unwrap();
            let rec = encode_journal_record(key, branch, &new);
            let end = j.end;
            j.file.write_all_at(&rec, end).map_err(|source| Error::IoAt {
                path: j.path.clone(),
                offset: end,
                source,
            })?;
            j.end += rec.len() as u64;
        }
        heads.entry(key.to_string()).or_default().insert(branch.to_string(), new);
        Ok(())
    }

    pub fn sync(&self) -> Result<()> {
        if let Some(j) = &self.journal {
            let j = j.lock().unwrap();
            j.file.sync_data().map_err(|e| Error::io(&j.path, e))?;
        }
        Ok(())
    }
}

/// Result of merging one branch into another.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BranchMerge {
    /// Source is already contained in destination; nothing written.
    UpToDate(Uid),
    /// Destination was an ancestor of source and now points at it.
    FastForward(Uid),
    /// A merge commit with bases `[dst_head, src_head]`.
    Merged(Uid),
    Conflicts(Vec<Vec<u8>>),
}

/// Version operations over a chunk store and a branch table.
pub struct Versions<'a> {
    store: &'a dyn ChunkStore,
    branches: &'a BranchTable,
}

impl<'a> Versions<'a> {
    pub fn new(store: &'a dyn ChunkStore, branches: &'a BranchTable) -> Self {
        Versions { store, branches }
    }

    pub fn fnode(&self, uid: &Uid) -> Result<FNode> {
        load_fnode(self.store, uid)
    }

    pub fn head(&self, key: &str, branch: &str) -> Result<Uid> {
        self.branches.head(key, branch).ok_or_else(|| {
            if self.branches.has_key(key) {
                Error::UnknownBranch {
                    key: key.into(),
                    branch: branch.into(),
                }
            } else {
                Error::UnknownKey(key.into())
            }
        })
    }

    /// Heads of every branch of `key`, sorted by branch name.
    pub fn latest(&self, key: &str) -> Result<Vec<(String, Uid)>> {
        let b = self.branches.branches(key);
        if b.is_empty() {
            return Err(Error::UnknownKey(key.into()));
        }
        Ok(b)
    }

    /// Walks first parents from the head of `branch`, newest first.
    pub fn log(&self, key: &str, branch: &str, limit: usize) -> Result<Vec<(Uid, FNode)>> {
        let mut out = Vec::new();
        let mut next = Some(self.head(key, branch)?);
        while let Some(uid) = next {
            if out.len() >= limit {
                break;
            }
            let f = self.fnode(&uid)?;
            next = f.bases.first().copied();
            out.push((uid, f));
        }
        Ok(out)
    }

    /// Commits `value` onto `key/branch`. A branch of a key that has no
    /// branches yet is created with an empty base list; otherwise the branch
    /// must exist.
    pub fn commit(&self, key: &str, branch: &str, value: ValueRef, message: &str) -> Result<Uid> {
        validate_object_key(key)?;
        validate_branch_name(branch)?;
        let prev = match self.branches.head(key, branch) {
            Some(h) => Some(h),
            None if !self.branches.has_key(key) => None,
            None => {
                return Err(Error::UnknownBranch {
                    key: key.into(),
                    branch: branch.into(),
                })
            }
        };
        let bases: Vec<Uid> = prev.into_iter().collect();
        self.commit_with_bases(key, branch, value, bases, message, prev)
    }

    /// Writes an FNode with explicit bases and moves the branch head from
    /// `expected` to it.
    pub fn commit_with_bases(
        &self,
        key: &str,
        branch: &str,
        value: ValueRef,
        bases: Vec<Uid>,
        message: &str,
        expected: Option<Uid>,
    ) -> Result<Uid> {
        validate_object_key(key)?;
        validate_branch_name(branch)?;
        if message.len() > u16::MAX as usize {
            return Err(Error::InvalidKey("commit message too long".into()));
        }
        if bases.len() > u8::MAX as usize {
            return Err(Error::InvalidKey("too many bases".into()));
        }
        if !self.store.contains(&value.root())? {
            return Err(Error::NotFound(value.root()));
        }
        for b in &bases {
            let f = self.fnode(b)?;
            if f.key != key {
                return Err(Error::UnknownRef(format!("{b} belongs to key {:?}", f.key)));
            }
        }
        let fnode = FNode {
            key: key.to_string(),
            value,
            bases,
            message: message.to_string(),
        };
        let uid = fnode.uid();
        if fnode.bases.contains(&uid) {
            return Err(Error::malformed("fnode", "lists its own uid as a base"));
        }
        self.store.put(&fnode.to_chunk())?;
        // Every chunk under the new head is durable before the head moves.
        self.store.sync()?;
        self.branches.compare_and_set(key, branch, expected, uid)?;
        Ok(uid)
    }

    /// Creates `new_branch` pointing at `from`. Writes no chunks.
    pub fn branch(&self, key: &str, new_branch: &str, from: Uid) -> Result<Uid> {
        validate_branch_name(new_branch)?;
        let f = self.fnode(&from)?;
        if f.key != key {
            return Err(Error::UnknownRef(format!("{from} belongs to key {:?}", f.key)));
        }
        self.branches.compare_and_set(key, new_branch, None, from)?;
        Ok(from)
    }

    /// BFS distances from `start` over base links.
    pub fn ancestors(&self, start: &Uid) -> Result<HashMap<Uid, usize>> {
        let mut depth = HashMap::new();
        let mut queue = VecDeque::from([(*start, 0usize)]);
        depth.insert(*start, 0);
        while let Some((u, d)) = queue.pop_front() {
            for b in self.fnode(&u)?.bases {
                if let std::collections::hash_map::Entry::Vacant(v) = depth.entry(b) {
                    v.insert(d + 1);
                    queue.push_back((b, d + 1));
                }
            }
        }
        Ok(depth)
    }

    pub fn is_ancestor(&self, ancestor: &Uid, of: &Uid) -> Result<bool> {
        Ok(self.ancestors(of)?.contains_key(ancestor))
    }

    /// The merge base of two versions: among common ancestors that are not
    /// themselves ancestors of another common ancestor, the one with the
    /// smallest summed BFS depth, ties broken by the smallest uid.
    pub fn common_ancestor(&self, a: &Uid, b: &Uid) -> Result<Option<Uid>> {
        let da = self.ancestors(a)?;
        let db = self.ancestors(b)?;
        let common: HashMap<Uid, usize> = da
            .iter()
            .filter_map(|(u, x)| db.get(u).map(|y| (*u, x + y)))
            .collect();
        if common.is_empty() {
            return Ok(None);
        }
        // Proper ancestors of common ancestors are not candidates.
        let mut dominated: HashSet<Uid> = HashSet::new();
        let mut queue: VecDeque<Uid> = VecDeque::new();
        for u in common.keys() {
            queue.extend(self.fnode(u)?.bases);
        }
        while let Some(u) = queue.pop_front() {
            if dominated.insert(u) {
                queue.extend(self.fnode(&u)?.bases);
            }
        }
        Ok(common
            .into_iter()
            .filter(|(u, _)| !dominated.contains(u))
            .min_by(|(u1, s1), (u2, s2)| s1.cmp(s2).then(u1.cmp(u2)))
            .map(|(u, _)| u))
    }

    /// Merges the head of `src` into `dst`.
    pub fn merge_branches(
        &self,
        chunker: &Chunker,
        key: &str,
        dst: &str,
        src: &str,
        message: Option<&str>,
    ) -> Result<BranchMerge> {
        let dh = self.head(key, dst)?;
        let sh = self.head(key, src)?;
        if dh == sh || self.is_ancestor(&sh, &dh)? {
            return Ok(BranchMerge::UpToDate(dh));
        }
        if self.is_ancestor(&dh, &sh)? {
            self.branches.compare_and_set(key, dst, Some(dh), sh)?;
            return Ok(BranchMerge::FastForward(sh));
        }
        let base = self
            .common_ancestor(&dh, &sh)?
            .ok_or_else(|| Error::NoCommonAncestor(dh.to_string(), sh.to_string()))?;
        let (fb, fd, fs) = (self.fnode(&base)?, self.fnode(&dh)?, self.fnode(&sh)?);
        let merged = match (fb.value, fd.value, fs.value) {
            (ValueRef::Map(b), ValueRef::Map(d), ValueRef::Map(s)) => {
                let trees = PosTree::new(self.store, chunker);
                match merge3(&trees, &b, &d, &s)? {
                    MergeOutcome::Merged(t) => ValueRef::Map(t),
                    MergeOutcome::Conflicts(c) => return Ok(BranchMerge::Conflicts(c)),
                }
            }
            (b, d, s) => {
                if d == s || b == s {
                    d
                } else if b == d {
                    s
                } else {
                    return Ok(BranchMerge::Conflicts(vec![key.as_bytes().to_vec()]));
                }
            }
        };
        let msg = message
            .map(str::to_string)
            .unwrap_or_else(|| format!("merge {src} into {dst}"));
        let uid = self.commit_with_bases(key, dst, merged, vec![dh, sh], &msg, Some(dh))?;
        Ok(BranchMerge::Merged(uid))
    }

    pub fn verify(&self, uid: &Uid, depth_limit: Option<usize>) -> VerificationReport {
        Verifier::new(self.store).verify(uid, depth_limit)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "kebab-case")]
pub enum FailureReason {
    Missing,
    DigestMismatch,
    Malformed(String),
    Inconsistent(String),
    StoreError(String),
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FailureReason::Missing => f.write_str("chunk missing from store"),
            FailureReason::DigestMismatch => f.write_str("digest mismatch"),
            FailureReason::Malformed(m) => write!(f, "malformed: {m}"),
            FailureReason::Inconsistent(m) => write!(f, "inconsistent: {m}"),
            FailureReason::StoreError(m) => write!(f, "store error: {m}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VerifyFailure {
    pub chunk: NodeId,
    pub reason: FailureReason,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub uid: Uid,
    pub versions_checked: usize,
    pub chunks_checked: usize,
    pub failure: Option<VerifyFailure>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Clone)]
struct Summary {
    min: Vec<u8>,
    max: Vec<u8>,
    count: u64,
}

/// Recomputes every digest reachable from a uid without trusting the store.
struct Verifier<'a> {
    store: &'a dyn ChunkStore,
    seen: HashMap<NodeId, Option<Summary>>,
    chunks: usize,
}

type Check<T> = std::result::Result<T, VerifyFailure>;

fn fail<T>(chunk: NodeId, reason: FailureReason) -> Check<T> {
    Err(VerifyFailure { chunk, reason })
}

impl<'a> Verifier<'a> {
    fn new(store: &'a dyn ChunkStore) -> Self {
        Verifier {
            store,
            seen: HashMap::new(),
            chunks: 0,
        }
    }

    fn verify(mut self, uid: &Uid, depth_limit: Option<usize>) -> VerificationReport {
        let mut versions = 0;
        let mut failure = None;
        let mut visited: HashSet<Uid> = HashSet::new();
        let mut queue = VecDeque::from([(*uid, 0usize, None::<String>)]);
        visited.insert(*uid);
        while let Some((u, depth, expect_key)) = queue.pop_front() {
            match self.version(&u, expect_key.as_deref()) {
                Ok(f) => {
                    versions += 1;
                    if depth_limit.is_none_or(|l| depth < l) {
                        for b in f.bases {
                            if visited.insert(b) {
                                queue.push_back((b, depth + 1, Some(f.key.clone())));
                            }
                        }
                    }
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        VerificationReport {
            uid: *uid,
            versions_checked: versions,
            chunks_checked: self.chunks,
            failure,
        }
    }

    fn fetch(&mut self, id: &NodeId) -> Check<(u8, Vec<u8>)> {
        self.chunks += 1;
        let raw = match self.store.get_raw(id) {
            Ok(Some(r)) => r,
            Ok(None) => return fail(*id, FailureReason::Missing),
            Err(e) => return fail(*id, FailureReason::StoreError(e.to_string())),
        };
        if NodeId::digest(raw.kind, &raw.payload) != *id {
            return fail(*id, FailureReason::DigestMismatch);
        }
        Ok((raw.kind, raw.payload))
    }

    fn version(&mut self, uid: &Uid, expect_key: Option<&str>) -> Check<FNode> {
        let id = uid.0;
        let (kind, payload) = self.fetch(&id)?;
        if kind != ChunkKind::FNode as u8 {
            return fail(id, FailureReason::Malformed(format!("kind {kind} is not an fnode")));
        }
        let f = match FNode::decode(&payload) {
            Ok(f) => f,
            Err(e) => return fail(id, FailureReason::Malformed(e.to_string())),
        };
        if let Some(k) = expect_key {
            if f.key != k {
                return fail(id, FailureReason::Inconsistent(format!("ancestor belongs to key {:?}", f.key)));
            }
        }
        match f.value {
            ValueRef::Map(t) => {
                let s = self.node(&t.root, Some(t.height - 1))?;
                let count = s.map_or(0, |s| s.count);
                if count != t.entry_count {
                    return fail(
                        id,
                        FailureReason::Inconsistent(format!(
                            "fnode claims {} entries, tree holds {count}",
                            t.entry_count
                        )),
                    );
                }
            }
            ValueRef::Blob { id: blob, len } => {
                let (kind, payload) = self.fetch(&blob)?;
                if kind != ChunkKind::RawBlob as u8 {
                    return fail(blob, FailureReason::Malformed(format!("kind {kind} is not a raw blob")));
                }
                if payload.len() as u64 != len {
                    return fail(id, FailureReason::Inconsistent("blob length differs".into()));
                }
            }
        }
        Ok(f)
    }

    /// Verifies the subtree at `id`. `None` summary means an empty leaf.
    fn node(&mut self, id: &NodeId, level: Option<u8>) -> Check<Option<Summary>> {
        if let Some(s) = self.seen.get(id) {
            return Ok(s.clone());
        }
        let (kind, payload) = self.fetch(id)?;
        let node = match Node::decode(&payload) {
            Ok(n) => n,
            Err(e) => return fail(*id, FailureReason::Malformed(e.to_string())),
        };
        if kind != node.kind() as u8 {
            return fail(*id, FailureReason::Malformed(format!("kind {kind} at level {}", node.level)));
        }
        if let Some(l) = level {
            if node.level != l {
                return fail(*id, FailureReason::Inconsistent(format!("level {} where {l} expected", node.level)));
            }
        }
        let summary = if node.is_leaf() {
            for item in &node.items {
                if let Slot::Blob(b) = &item.slot {
                    let (k, _) = self.fetch(b)?;
                    if k != ChunkKind::RawBlob as u8 {
                        return fail(*b, FailureReason::Malformed(format!("kind {k} is not a raw blob")));
                    }
                }
            }
            match (node.items.first(), node.items.last()) {
                (Some(first), Some(last)) => Some(Summary {
                    min: first.key.clone(),
                    max: last.key.clone(),
                    count: node.items.len() as u64,
                }),
                _ => None,
            }
        } else {
            let mut count = 0;
            let mut prev: Option<&[u8]> = None;
            for item in &node.items {
                let child = item.slot.child().expect("decoded index item");
                let Some(s) = self.node(&child, Some(node.level - 1))? else {
                    return fail(child, FailureReason::Inconsistent("empty child node".into()));
                };
                if s.max != item.key {
                    return fail(*id, FailureReason::Inconsistent("split key is not the child's max key".into()));
                }
                if prev.is_some_and(|p| s.min.as_slice() <= p) {
                    return fail(child, FailureReason::Inconsistent("child keys overlap previous sibling".into()));
                }
                prev = Some(&item.key);
                count += s.count;
            }
            Some(Summary {
                min: self.seen_min(&node)?,
                max: node.max_key().expect("non-empty").to_vec(),
                count,
            })
        };
        self.seen.insert(*id, summary.clone());
        Ok(summary)
    }

    fn seen_min(&self, node: &Node) -> Check<Vec<u8>> {
        let first = node.items[0].slot.child().expect("index item");
        Ok(self
            .seen
            .get(&first)
            .and_then(|s| s.as_ref())
            .map(|s| s.min.clone())
            .unwrap_or_default())
    }
}
