//! Pattern-split Merkle search tree.
//!
//! Leaves hold sorted `key → value` items; index nodes hold
//! `(max key of child, child id)` items. Every level is cut into nodes by the
//! content-defined [`Segmenter`](crate::chunker::Segmenter), so the node set is
//! a pure function of the entry set and the chunker config. Index levels
//! never cut before their second entry, which guarantees each level is
//! strictly smaller than the one below it.
//!
//! Updates are copy-on-write. For each level, only the nodes around the edited
//! keys are re-segmented: segmentation restarts at the first affected node and
//! runs until a cut lands exactly on an old node boundary, after which the old
//! nodes are reused as-is. The changed node ranges become key edits for the
//! level above.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::chunker::Chunker;
use crate::error::{Error, Result};
use crate::id::NodeId;
use crate::node::{validate_key, Item, Node, Slot, ITEM_OVERHEAD, MAX_INLINE_VALUE_BYTES};
use crate::store::{Chunk, ChunkKind, ChunkStore};

/// Handle to an immutable tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TreeRef {
    pub root: NodeId,
    /// Number of levels; a lone leaf has height 1.
    pub height: u8,
    pub entry_count: u64,
}

/// One change to apply: `Some(value)` upserts, `None` removes.
pub type Edit = (Vec<u8>, Option<Vec<u8>>);

pub type Entry = (Vec<u8>, Vec<u8>);

/// Tree operations bound to a store and a chunker.
pub struct PosTree<'a> {
    store: &'a dyn ChunkStore,
    chunker: &'a Chunker,
    reads: AtomicU64,
}

#[derive(Default)]
struct Run {
    removed: Vec<(Vec<u8>, NodeId)>,
    added: Vec<Item>,
}

impl<'a> PosTree<'a> {
    pub fn new(store: &'a dyn ChunkStore, chunker: &'a Chunker) -> Self {
        PosTree {
            store,
            chunker,
            reads: AtomicU64::new(0),
        }
    }

    pub fn store(&self) -> &'a dyn ChunkStore {
        self.store
    }

    pub fn chunker(&self) -> &'a Chunker {
        self.chunker
    }

    /// Number of node chunks fetched through this handle.
    pub fn node_reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn load_node(&self, id: &NodeId) -> Result<Node> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        let chunk = self.store.get(id)?;
        Node::from_chunk(&chunk).map_err(|e| Error::Corrupt {
            id: *id,
            reason: e.to_string(),
        })
    }

    fn load_child(&self, id: &NodeId, level: u8) -> Result<Node> {
        let node = self.load_node(id)?;
        if node.level != level {
            return Err(Error::Corrupt {
                id: *id,
                reason: format!("expected level {level}, found {}", node.level),
            });
        }
        Ok(node)
    }

    fn put_node(&self, node: &Node) -> Result<NodeId> {
        self.store.put(&node.to_chunk())
    }

    fn limit(&self) -> usize {
        self.chunker.config().max_node_bytes
    }

    /// Turns a value into a slot, spilling it to a raw-blob chunk when it is
    /// too large to sit inline in a node.
    fn encode_value(&self, key: &[u8], value: Vec<u8>) -> Result<Slot> {
        let inline_len = ITEM_OVERHEAD + key.len() + value.len();
        if value.len() > MAX_INLINE_VALUE_BYTES || inline_len > self.limit() {
            let id = self.store.put(&Chunk::new(ChunkKind::RawBlob, value))?;
            Ok(Slot::Blob(id))
        } else {
            Ok(Slot::Inline(value))
        }
    }

    fn make_item(&self, key: Vec<u8>, value: Vec<u8>) -> Result<Item> {
        validate_key(&key)?;
        let slot = self.encode_value(&key, value)?;
        let item = Item::new(key, slot);
        self.check_item(&item)?;
        Ok(item)
    }

    fn check_item(&self, item: &Item) -> Result<()> {
        let size = item.encoded_len();
        if size > self.limit() {
            return Err(Error::OversizeEntry {
                size,
                limit: self.limit(),
            });
        }
        Ok(())
    }

    /// Materializes a leaf slot into value bytes.
    pub fn resolve(&self, slot: &Slot) -> Result<Vec<u8>> {
        match slot {
            Slot::Inline(v) => Ok(v.clone()),
            Slot::Blob(id) => {
                let chunk = self.store.get(id)?;
                if chunk.kind() != ChunkKind::RawBlob {
                    return Err(Error::Corrupt {
                        id: *id,
                        reason: format!("expected raw-blob, found {}", chunk.kind().name()),
                    });
                }
                Ok(chunk.into_payload())
            }
            Slot::Child(id) => Err(Error::Corrupt {
                id: *id,
                reason: "child reference in a leaf".into(),
            }),
        }
    }

    /// An empty tree: a single empty leaf.
    pub fn empty(&self) -> Result<TreeRef> {
        let root = self.put_node(&Node::empty_leaf())?;
        Ok(TreeRef {
            root,
            height: 1,
            entry_count: 0,
        })
    }

    /// Builds a tree from entries whose keys are strictly increasing.
    pub fn build<I>(&self, entries: I) -> Result<TreeRef>
    where
        I: IntoIterator<Item = Entry>,
    {
        let mut seg = self.chunker.segmenter(1);
        let mut pending: Vec<Item> = Vec::new();
        let mut parents: Vec<Item> = Vec::new();
        let mut count = 0u64;
        let mut prev: Option<Vec<u8>> = None;
        let mut buf = Vec::new();
        for (key, value) in entries {
            if let Some(p) = &prev {
                if *p >= key {
                    return Err(Error::UnsortedKeys(String::from_utf8_lossy(&key).into()));
                }
            }
            prev = Some(key.clone());
            let item = self.make_item(key, value)?;
            buf.clear();
            item.encode_into(&mut buf);
            pending.push(item);
            count += 1;
            if seg.push_entry(&buf) {
                parents.push(self.flush(0, &mut pending)?);
            }
        }
        if !pending.is_empty() {
            parents.push(self.flush(0, &mut pending)?);
        }
        if parents.is_empty() {
            return self.empty();
        }
        let (root, height) = self.build_upper(parents, 1, &mut |n| self.put_node(n))?;
        Ok(TreeRef {
            root,
            height,
            entry_count: count,
        })
    }

    fn flush(&self, level: u8, items: &mut Vec<Item>) -> Result<Item> {
        let node = Node::new(level, std::mem::take(items));
        let key = node.max_key().expect("non-empty node").to_vec();
        let id = self.put_node(&node)?;
        Ok(Item::new(key, Slot::Child(id)))
    }

    /// Stacks index levels over `items` (which describe nodes at `level - 1`)
    /// until one node remains. Returns the root id and the tree height.
    fn build_upper(
        &self,
        mut items: Vec<Item>,
        mut level: u8,
        write: &mut dyn FnMut(&Node) -> Result<NodeId>,
    ) -> Result<(NodeId, u8)> {
        loop {
            if items.len() == 1 {
                let root = items[0].slot.child().expect("index item");
                return Ok((root, level));
            }
            let mut seg = self.chunker.segmenter(2);
            let mut next = Vec::new();
            let mut pending = Vec::new();
            for item in items {
                self.check_item(&item)?;
                let cut = seg.push_entry(&item.encode());
                pending.push(item);
                if cut {
                    next.push(self.emit(level, &mut pending, write)?);
                }
            }
            if !pending.is_empty() {
                next.push(self.emit(level, &mut pending, write)?);
            }
            items = next;
            level += 1;
        }
    }

    fn emit(
        &self,
        level: u8,
        items: &mut Vec<Item>,
        write: &mut dyn FnMut(&Node) -> Result<NodeId>,
    ) -> Result<Item> {
        let node = Node::new(level, std::mem::take(items));
        let key = node.max_key().expect("non-empty node").to_vec();
        let id = write(&node)?;
        Ok(Item::new(key, Slot::Child(id)))
    }

    pub fn lookup(&self, tree: &TreeRef, key: &[u8]) -> Result<Option<Vec<u8>>> {
        let mut node = self.load_child(&tree.root, tree.height - 1)?;
        loop {
            if node.is_leaf() {
                return match node.items.binary_search_by(|i| i.key.as_slice().cmp(key)) {
                    Ok(pos) => self.resolve(&node.items[pos].slot).map(Some),
                    Err(_) => Ok(None),
                };
            }
            let pos = node.items.partition_point(|i| i.key.as_slice() < key);
            if pos == node.items.len() {
                return Ok(None);
            }
            let child = node.items[pos].slot.child().expect("index item");
            node = self.load_child(&child, node.level - 1)?;
        }
    }

    /// Entries with `lo <= key < hi`; `None` bounds are open.
    pub fn scan(&self, tree: &TreeRef, lo: Option<&[u8]>, hi: Option<&[u8]>) -> Result<Vec<Entry>> {
        let mut out = Vec::new();
        if let (Some(l), Some(h)) = (lo, hi) {
            if l >= h {
                return Ok(out);
            }
        }
        let root = self.load_child(&tree.root, tree.height - 1)?;
        self.scan_node(&root, lo, hi, &mut out)?;
        Ok(out)
    }

    fn scan_node(
        &self,
        node: &Node,
        lo: Option<&[u8]>,
        hi: Option<&[u8]>,
        out: &mut Vec<Entry>,
    ) -> Result<()> {
        if node.is_leaf() {
            for item in &node.items {
                let k = item.key.as_slice();
                if lo.is_some_and(|l| k < l) {
                    continue;
                }
                if hi.is_some_and(|h| k >= h) {
                    break;
                }
                out.push((item.key.clone(), self.resolve(&item.slot)?));
            }
            return Ok(());
        }
        let mut prev_max: Option<&[u8]> = None;
        for item in &node.items {
            // Child covers keys in (prev_max, item.key].
            if hi.is_some_and(|h| prev_max.is_some_and(|p| p >= h)) {
                break;
            }
            if lo.is_none_or(|l| item.key.as_slice() >= l) {
                let child = self.load_child(&item.slot.child().expect("index item"), node.level - 1)?;
                self.scan_node(&child, lo, hi, out)?;
            }
            prev_max = Some(&item.key);
        }
        Ok(())
    }

    pub fn entries(&self, tree: &TreeRef) -> Result<Vec<Entry>> {
        self.scan(tree, None, None)
    }

    /// Ids of all nodes reachable from the root, level by level from the top.
    pub fn levels(&self, tree: &TreeRef) -> Result<Vec<Vec<NodeId>>> {
        let mut levels = vec![vec![tree.root]];
        let mut level = tree.height - 1;
        while level > 0 {
            let mut next = Vec::new();
            for id in levels.last().unwrap() {
                let node = self.load_child(id, level)?;
                next.extend(node.items.iter().filter_map(|i| i.slot.child()));
            }
            levels.push(next);
            level -= 1;
        }
        Ok(levels)
    }

    pub fn leaf_ids(&self, tree: &TreeRef) -> Result<Vec<NodeId>> {
        Ok(self.levels(tree)?.pop().unwrap_or_default())
    }

    pub fn insert(&self, tree: &TreeRef, key: Vec<u8>, value: Vec<u8>) -> Result<TreeRef> {
        self.apply(tree, vec![(key, Some(value))])
    }

    pub fn remove(&self, tree: &TreeRef, key: Vec<u8>) -> Result<TreeRef> {
        self.apply(tree, vec![(key, None)])
    }

    /// Applies a batch of edits copy-on-write. Later edits to the same key win.
    /// The result is node-for-node identical to building the edited entry set.
    pub fn apply<I>(&self, tree: &TreeRef, edits: I) -> Result<TreeRef>
    where
        I: IntoIterator<Item = Edit>,
    {
        let mut sorted: BTreeMap<Vec<u8>, Option<Vec<u8>>> = BTreeMap::new();
        for (k, v) in edits {
            validate_key(&k)?;
            sorted.insert(k, v);
        }
        let mut slots: Vec<(Vec<u8>, Option<Slot>)> = Vec::with_capacity(sorted.len());
        for (k, v) in sorted {
            let slot = match v {
                Some(v) => {
                    let item = self.make_item(k.clone(), v)?;
                    Some(item.slot)
                }
                None => None,
            };
            slots.push((k, slot));
        }
        self.apply_slots(tree, slots)
    }

    /// Like [`apply`](Self::apply) with values already encoded as leaf slots.
    /// `edits` must be sorted by key without duplicates.
    pub(crate) fn apply_slots(
        &self,
        tree: &TreeRef,
        mut level_edits: Vec<(Vec<u8>, Option<Slot>)>,
    ) -> Result<TreeRef> {
        debug_assert!(level_edits.windows(2).all(|w| w[0].0 < w[1].0));
        let mut pending: HashMap<NodeId, (Node, Chunk)> = HashMap::new();
        let mut delta: i64 = 0;
        let top = tree.height - 1;
        let mut level = 0u8;
        loop {
            if level_edits.is_empty() {
                return Ok(*tree);
            }
            let runs = self.rewrite_level(tree, level, &level_edits, &mut pending, &mut delta)?;
            if level == top {
                let added: Vec<Item> = runs.into_iter().flat_map(|r| r.added).collect();
                let entry_count = (tree.entry_count as i64 + delta) as u64;
                return self.finish(added, level, entry_count, pending);
            }
            let mut next: BTreeMap<Vec<u8>, Option<Slot>> = BTreeMap::new();
            for run in runs {
                let unchanged = run.removed.len() == run.added.len()
                    && run
                        .removed
                        .iter()
                        .zip(&run.added)
                        .all(|((k, id), item)| *k == item.key && Some(*id) == item.slot.child());
                if unchanged {
                    continue;
                }
                for (k, _) in run.removed {
                    next.insert(k, None);
                }
                for item in run.added {
                    next.insert(item.key, Some(item.slot));
                }
            }
            level_edits = next.into_iter().collect();
            level += 1;
        }
    }

    /// Completes an update once the old root level has been rewritten into
    /// `added` (nodes at `level`).
    fn finish(
        &self,
        added: Vec<Item>,
        level: u8,
        entry_count: u64,
        mut pending: HashMap<NodeId, (Node, Chunk)>,
    ) -> Result<TreeRef> {
        if added.is_empty() {
            return self.empty();
        }
        let (mut root, mut height) = self.build_upper(added, level + 1, &mut |n: &Node| {
            let chunk = n.to_chunk();
            let id = chunk.id();
            pending.insert(id, (n.clone(), chunk));
            Ok(id)
        })?;
        // Drop single-child index roots left behind by deletions.
        loop {
            let node = match pending.get(&root) {
                Some((n, _)) => n.clone(),
                None => self.load_child(&root, height - 1)?,
            };
            if node.level > 0 && node.items.len() == 1 {
                root = node.items[0].slot.child().expect("index item");
                height -= 1;
            } else {
                break;
            }
        }
        self.write_reachable(&root, &pending)?;
        Ok(TreeRef {
            root,
            height,
            entry_count,
        })
    }

    fn write_reachable(&self, root: &NodeId, pending: &HashMap<NodeId, (Node, Chunk)>) -> Result<()> {
        let mut stack = vec![*root];
        while let Some(id) = stack.pop() {
            if let Some((node, chunk)) = pending.get(&id) {
                stack.extend(node.items.iter().filter_map(|i| i.slot.child()));
                self.store.put(chunk)?;
            }
        }
        Ok(())
    }

    fn rewrite_level(
        &self,
        tree: &TreeRef,
        level: u8,
        edits: &[(Vec<u8>, Option<Slot>)],
        pending: &mut HashMap<NodeId, (Node, Chunk)>,
        delta: &mut i64,
    ) -> Result<Vec<Run>> {
        let min_entries = if level == 0 { 1 } else { 2 };
        let mut cursor = LevelCursor::new(self, tree, level);
        let mut runs = Vec::new();
        let mut i = 0;
        let mut buf = Vec::new();
        while i < edits.len() {
            cursor.seek(&edits[i].0)?;
            let mut seg = self.chunker.segmenter(min_entries);
            let mut items: Vec<Item> = Vec::new();
            let mut run = Run::default();
            loop {
                let (id, node) = cursor.take_current();
                let is_last = !cursor.has_next();
                let j = match node.max_key() {
                    Some(max) if !is_last => i + edits[i..].partition_point(|(k, _)| k.as_slice() <= max),
                    _ => edits.len(),
                };
                if let Some(max) = node.max_key() {
                    run.removed.push((max.to_vec(), id));
                }
                let counter = if level == 0 { Some(&mut *delta) } else { None };
                let merged = merge_items(node.items, &edits[i..j], counter);
                i = j;
                for item in merged {
                    self.check_item(&item)?;
                    buf.clear();
                    item.encode_into(&mut buf);
                    items.push(item);
                    if seg.push_entry(&buf) {
                        run.added.push(self.stage(level, &mut items, pending));
                    }
                }
                if items.is_empty() {
                    break;
                }
                if is_last {
                    run.added.push(self.stage(level, &mut items, pending));
                    break;
                }
                cursor.advance()?;
            }
            runs.push(run);
        }
        Ok(runs)
    }

    fn stage(&self, level: u8, items: &mut Vec<Item>, pending: &mut HashMap<NodeId, (Node, Chunk)>) -> Item {
        let node = Node::new(level, std::mem::take(items));
        let key = node.max_key().expect("non-empty node").to_vec();
        let chunk = node.to_chunk();
        let id = chunk.id();
        pending.insert(id, (node, chunk));
        Item::new(key, Slot::Child(id))
    }
}

/// Sorted merge of node items with edits. Counts inserted/removed leaf keys
/// into `delta` when given.
fn merge_items(
    old: Vec<Item>,
    edits: &[(Vec<u8>, Option<Slot>)],
    mut delta: Option<&mut i64>,
) -> Vec<Item> {
    let mut out = Vec::with_capacity(old.len() + edits.len());
    let mut old = old.into_iter().peekable();
    for (key, slot) in edits {
        while old.peek().is_some_and(|o| o.key < *key) {
            out.push(old.next().unwrap());
        }
        let existed = old.peek().is_some_and(|o| o.key == *key);
        if existed {
            old.next();
        }
        match slot {
            Some(s) => {
                if !existed {
                    if let Some(d) = delta.as_deref_mut() {
                        *d += 1;
                    }
                }
                out.push(Item::new(key.clone(), s.clone()));
            }
            None => {
                if existed {
                    if let Some(d) = delta.as_deref_mut() {
                        *d -= 1;
                    }
                }
            }
        }
    }
    out.extend(old);
    out
}

/// Walks the nodes of one level of an existing tree, left to right.
struct LevelCursor<'t, 'a> {
    tree: &'t PosTree<'a>,
    root: TreeRef,
    target: u8,
    /// Ancestors of the current node with the index of the child taken.
    path: Vec<(Node, usize)>,
    current: Option<(NodeId, Node)>,
}

impl<'t, 'a> LevelCursor<'t, 'a> {
    fn new(tree: &'t PosTree<'a>, root: &TreeRef, target: u8) -> Self {
        LevelCursor {
            tree,
            root: *root,
            target,
            path: Vec::new(),
            current: None,
        }
    }

    /// Positions on the first node at the target level whose max key is at
    /// least `key`, or the last node if none is.
    /// Ancestors cached from the previous position are reused while their
    /// range still covers `key`; keys must be sought in increasing order.
    fn seek(&mut self, key: &[u8]) -> Result<()> {
        while self.path.len() > 1 && self.path.last().is_some_and(|(n, _)| n.max_key().is_some_and(|m| m < key)) {
            self.path.pop();
        }
        let (mut id, mut node) = match self.path.pop() {
            Some((n, _)) => (self.root.root, n),
            None => (self.root.root, self.tree.load_child(&self.root.root, self.root.height - 1)?),
        };
        while node.level > self.target {
            let pos = node
                .items
                .partition_point(|i| i.key.as_slice() < key)
                .min(node.items.len() - 1);
            id = node.items[pos].slot.child().expect("index item");
            let child = self.tree.load_child(&id, node.level - 1)?;
            self.path.push((node, pos));
            node = child;
        }
        self.current = Some((id, node));
        Ok(())
    }

    fn take_current(&mut self) -> (NodeId, Node) {
        self.current.take().expect("cursor positioned")
    }

    fn has_next(&self) -> bool {
        self.path.iter().any(|(n, i)| i + 1 < n.items.len())
    }

    fn advance(&mut self) -> Result<()> {
        while let Some((node, idx)) = self.path.last_mut() {
            if *idx + 1 < node.items.len() {
                *idx += 1;
                let mut id = node.items[*idx].slot.child().expect("index item");
                let mut level = node.level - 1;
                let mut child = self.tree.load_child(&id, level)?;
                while level > self.target {
                    let next = child.items[0].slot.child().expect("index item");
                    self.path.push((child, 0));
                    level -= 1;
                    id = next;
                    child = self.tree.load_child(&id, level)?;
                }
                self.current = Some((id, child));
                return Ok(());
            }
            self.path.pop();
        }
        unreachable!("advance past the last node")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::ChunkerConfig;
    use crate::store::MemStore;
    use proptest::prelude::*;

    fn small() -> Chunker {
        Chunker::new(ChunkerConfig::new(8, 7)).unwrap()
    }

    fn kv(i: u32) -> Entry {
        (format!("key{i:06}").into_bytes(), format!("value-{i}").into_bytes())
    }

    #[test]
    fn empty_tree() {
        let store = MemStore::new();
        let c = small();
        let t = PosTree::new(&store, &c);
        let tree = t.build(Vec::new()).unwrap();
        assert_eq!(tree.height, 1);
        assert_eq!(tree.entry_count, 0);
        assert_eq!(tree, t.empty().unwrap());
        assert_eq!(t.lookup(&tree, b"x").unwrap(), None);
        assert!(t.entries(&tree).unwrap().is_empty());
    }

    #[test]
    fn single_entry_is_leaf_root() {
        let store = MemStore::new();
        let c = small();
        let t = PosTree::new(&store, &c);
        let tree = t.build(vec![kv(1)]).unwrap();
        assert_eq!(tree.height, 1);
        let root = t.load_node(&tree.root).unwrap();
        assert!(root.is_leaf());
        assert_eq!(root.items.len(), 1);
    }

    #[test]
    fn rejects_unsorted_and_duplicates() {
        let store = MemStore::new();
        let c = small();
        let t = PosTree::new(&store, &c);
        assert!(matches!(t.build(vec![kv(2), kv(1)]), Err(Error::UnsortedKeys(_))));
        assert!(matches!(t.build(vec![kv(1), kv(1)]), Err(Error::UnsortedKeys(_))));
        assert!(matches!(
            t.build(vec![(vec![], b"v".to_vec())]),
            Err(Error::InvalidKey(_))
        ));
    }

    #[test]
    fn search_order_and_split_keys() {
        let store = MemStore::new();
        let c = small();
        let t = PosTree::new(&store, &c);
        let tree = t.build((0..3000).map(kv)).unwrap();
        assert!(tree.height >= 3);
        fn check(t: &PosTree, id: &NodeId) -> Vec<u8> {
            let n = t.load_node(id).unwrap();
            assert!(n.items.windows(2).all(|w| w[0].key < w[1].key));
            if !n.is_leaf() {
                assert!(n.items.len() >= 2 || n.items.len() == 1);
                for item in &n.items {
                    let child_max = check(t, &item.slot.child().unwrap());
                    assert_eq!(child_max, item.key);
                }
            }
            n.max_key().unwrap().to_vec()
        }
        check(&t, &tree.root);
    }

    #[test]
    fn lookup_visits_one_node_per_level() {
        let store = MemStore::new();
        let c = small();
        let t = PosTree::new(&store, &c);
        let tree = t.build((0..2000).map(kv)).unwrap();
        let before = t.node_reads();
        assert_eq!(t.lookup(&tree, b"key001234").unwrap(), Some(b"value-1234".to_vec()));
        assert_eq!(t.node_reads() - before, tree.height as u64);
    }

    #[test]
    fn large_values_spill_to_blobs() {
        let store = MemStore::new();
        let c = small();
        let t = PosTree::new(&store, &c);
        let big = vec![7u8; 5000];
        let tree = t.build(vec![(b"big".to_vec(), big.clone()), kv(1)]).unwrap();
        assert_eq!(t.lookup(&tree, b"big").unwrap(), Some(big));
        let leaf = t.load_node(&t.leaf_ids(&tree).unwrap()[0]).unwrap();
        assert!(matches!(leaf.items[0].slot, Slot::Blob(_)));
    }

    #[test]
    fn scan_edges() {
        let store = MemStore::new();
        let c = small();
        let t = PosTree::new(&store, &c);
        let entries: Vec<_> = (0..1500).map(kv).collect();
        let tree = t.build(entries.clone()).unwrap();
        assert_eq!(t.entries(&tree).unwrap(), entries);
        let x = b"key000100".as_slice();
        assert!(t.scan(&tree, Some(x), Some(x)).unwrap().is_empty());
        let got = t.scan(&tree, Some(b"key000100"), Some(b"key000200")).unwrap();
        assert_eq!(got, entries[100..200].to_vec());
        let tail = t.scan(&tree, Some(b"key001490"), None).unwrap();
        assert_eq!(tail, entries[1490..].to_vec());
    }

    #[test]
    fn insert_remove_roundtrip_restores_root() {
        let store = MemStore::new();
        let c = small();
        let t = PosTree::new(&store, &c);
        let tree = t.build((0..2000).map(|i| kv(i * 2))).unwrap();
        let key = b"key000777".to_vec();
        let with = t.insert(&tree, key.clone(), b"v".to_vec()).unwrap();
        assert_eq!(with.entry_count, 2001);
        assert_eq!(t.lookup(&with, &key).unwrap(), Some(b"v".to_vec()));
        let back = t.remove(&with, key).unwrap();
        assert_eq!(back, tree);
        // Removing an absent key is the identity.
        assert_eq!(t.remove(&tree, b"nope".to_vec()).unwrap(), tree);
    }

    #[test]
    fn delete_everything() {
        let store = MemStore::new();
        let c = small();
        let t = PosTree::new(&store, &c);
        let tree = t.build((0..800).map(kv)).unwrap();
        let gone = t.apply(&tree, (0..800).map(|i| (kv(i).0, None))).unwrap();
        assert_eq!(gone, t.empty().unwrap());
    }

    #[test]
    fn shrink_to_single_leaf() {
        let store = MemStore::new();
        let c = small();
        let t = PosTree::new(&store, &c);
        let tree = t.build((0..800).map(kv)).unwrap();
        let left = t.apply(&tree, (1..800).map(|i| (kv(i).0, None))).unwrap();
        assert_eq!(left, t.build(vec![kv(0)]).unwrap());
        assert_eq!(left.height, 1);
    }

    #[test]
    fn grow_from_empty() {
        let store = MemStore::new();
        let c = small();
        let t = PosTree::new(&store, &c);
        let mut tree = t.empty().unwrap();
        for i in (0..600).rev() {
            let (k, v) = kv(i);
            tree = t.insert(&tree, k, v).unwrap();
        }
        assert_eq!(tree, t.build((0..600).map(kv)).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn batch_edits_match_rebuild(
            base in proptest::collection::btree_map(0u32..3000, 0u32..50, 0..800),
            edits in proptest::collection::vec((0u32..3000, proptest::option::of(0u32..50)), 0..60),
        ) {
            let store = MemStore::new();
            let c = small();
            let t = PosTree::new(&store, &c);
            let key = |k: u32| format!("k{k:05}").into_bytes();
            let val = |v: u32| format!("v{v}").repeat(v as usize % 7 + 1).into_bytes();
            let tree = t.build(base.iter().map(|(k, v)| (key(*k), val(*v)))).unwrap();
            let mut expect = base.clone();
            for (k, v) in &edits {
                match v { Some(v) => { expect.insert(*k, *v); } None => { expect.remove(k); } }
            }
            let updated = t
                .apply(&tree, edits.iter().map(|(k, v)| (key(*k), v.map(val))))
                .unwrap();
            let rebuilt = t.build(expect.iter().map(|(k, v)| (key(*k), val(*v)))).unwrap();
            prop_assert_eq!(updated, rebuilt);
        }
    }
}
