//! Differential queries between two trees.
//!
//! Both trees are walked as key-ordered frontiers of unexpanded nodes and leaf
//! items. Whenever the two frontier heads are nodes with the same id the pair
//! is skipped without being read: equal ids commit to equal content, and every
//! key before the heads has already been compared. Otherwise the higher node
//! (or both, at equal level) is expanded. The cost is proportional to the
//! number of differing leaves times the tree height.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::Result;
use crate::id::NodeId;
use crate::node::{Item, Slot};
use crate::tree::{Entry, PosTree, TreeRef};

/// One keyed difference, values fully materialized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Change {
    Added { key: Vec<u8>, value: Vec<u8> },
    Removed { key: Vec<u8>, value: Vec<u8> },
    Modified { key: Vec<u8>, old: Vec<u8>, new: Vec<u8> },
}

impl Change {
    pub fn key(&self) -> &[u8] {
        match self {
            Change::Added { key, .. } | Change::Removed { key, .. } | Change::Modified { key, .. } => key,
        }
    }

    /// One line of the textual diff format, without a trailing newline.
    pub fn to_line(&self) -> String {
        match self {
            Change::Added { key, value } => format!("+ {}\t{}", escape(key), escape(value)),
            Change::Removed { key, value } => format!("- {}\t{}", escape(key), escape(value)),
            Change::Modified { key, old, new } => {
                format!("~ {}\t{}\t{}", escape(key), escape(old), escape(new))
            }
        }
    }
}

/// Difference at the slot level, before blob values are fetched.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum SlotChange {
    Added(Item),
    Removed(Item),
    Modified { old: Item, new: Slot },
}

impl SlotChange {
    pub(crate) fn key(&self) -> &[u8] {
        match self {
            SlotChange::Added(i) | SlotChange::Removed(i) => &i.key,
            SlotChange::Modified { old, .. } => &old.key,
        }
    }

    /// The slot the key holds after the change, `None` when removed.
    pub(crate) fn after(&self) -> Option<&Slot> {
        match self {
            SlotChange::Added(i) => Some(&i.slot),
            SlotChange::Removed(_) => None,
            SlotChange::Modified { new, .. } => Some(new),
        }
    }
}

/// Instrumentation for one diff run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DiffStats {
    /// Nodes fetched from the store.
    pub node_reads: u64,
    /// Node-id comparisons between frontier heads.
    pub id_comparisons: u64,
    /// Node pairs skipped because their ids matched.
    pub pruned: u64,
}

#[derive(Clone, Debug)]
enum Elem {
    Node { id: NodeId, level: u8 },
    Leaf(Item),
}

/// Key-ordered frontier; the next element is at the end of the vector.
struct Frontier {
    stack: Vec<Elem>,
}

impl Frontier {
    fn new(tree: &TreeRef) -> Self {
        Frontier {
            stack: vec![Elem::Node {
                id: tree.root,
                level: tree.height - 1,
            }],
        }
    }

    fn expand(&mut self, trees: &PosTree, stats: &mut DiffStats) -> Result<()> {
        let Some(Elem::Node { id, .. }) = self.stack.pop() else {
            unreachable!("expand on a leaf item")
        };
        let node = trees.load_node(&id)?;
        stats.node_reads += 1;
        let level = node.level;
        for item in node.items.into_iter().rev() {
            if level == 0 {
                self.stack.push(Elem::Leaf(item));
            } else {
                let child = item.slot.child().expect("index item");
                self.stack.push(Elem::Node {
                    id: child,
                    level: level - 1,
                });
            }
        }
        Ok(())
    }
}

/// Streaming diff from `a` to `b` in key order.
pub struct DiffIter<'t, 'a> {
    trees: &'t PosTree<'a>,
    a: Frontier,
    b: Frontier,
    stats: DiffStats,
}

impl<'t, 'a> DiffIter<'t, 'a> {
    pub fn new(trees: &'t PosTree<'a>, a: &TreeRef, b: &TreeRef) -> Self {
        DiffIter {
            trees,
            a: Frontier::new(a),
            b: Frontier::new(b),
            stats: DiffStats::default(),
        }
    }

    pub fn stats(&self) -> DiffStats {
        self.stats
    }

    pub(crate) fn next_slot_change(&mut self) -> Result<Option<SlotChange>> {
        loop {
            let stats = &mut self.stats;
            match (self.a.stack.last(), self.b.stack.last()) {
                (None, None) => return Ok(None),
                (Some(Elem::Node { .. }), None) => self.a.expand(self.trees, stats)?,
                (None, Some(Elem::Node { .. })) => self.b.expand(self.trees, stats)?,
                (Some(Elem::Leaf(_)), None) => {
                    let Some(Elem::Leaf(item)) = self.a.stack.pop() else { unreachable!() };
                    return Ok(Some(SlotChange::Removed(item)));
                }
                (None, Some(Elem::Leaf(_))) => {
                    let Some(Elem::Leaf(item)) = self.b.stack.pop() else { unreachable!() };
                    return Ok(Some(SlotChange::Added(item)));
                }
                (Some(Elem::Node { id: ia, level: la }), Some(Elem::Node { id: ib, level: lb })) => {
                    stats.id_comparisons += 1;
                    if ia == ib {
                        stats.pruned += 1;
                        self.a.stack.pop();
                        self.b.stack.pop();
                    } else if la > lb {
                        self.a.expand(self.trees, stats)?;
                    } else if lb > la {
                        self.b.expand(self.trees, stats)?;
                    } else {
                        self.a.expand(self.trees, stats)?;
                        self.b.expand(self.trees, stats)?;
                    }
                }
                (Some(Elem::Node { .. }), Some(Elem::Leaf(_))) => self.a.expand(self.trees, stats)?,
                (Some(Elem::Leaf(_)), Some(Elem::Node { .. })) => self.b.expand(self.trees, stats)?,
                (Some(Elem::Leaf(x)), Some(Elem::Leaf(y))) => match x.key.cmp(&y.key) {
                    std::cmp::Ordering::Less => {
                        let Some(Elem::Leaf(item)) = self.a.stack.pop() else { unreachable!() };
                        return Ok(Some(SlotChange::Removed(item)));
                    }
                    std::cmp::Ordering::Greater => {
                        let Some(Elem::Leaf(item)) = self.b.stack.pop() else { unreachable!() };
                        return Ok(Some(SlotChange::Added(item)));
                    }
                    std::cmp::Ordering::Equal => {
                        let same = x.slot == y.slot;
                        let Some(Elem::Leaf(old)) = self.a.stack.pop() else { unreachable!() };
                        let Some(Elem::Leaf(new)) = self.b.stack.pop() else { unreachable!() };
                        if !same {
                            return Ok(Some(SlotChange::Modified { old, new: new.slot }));
                        }
                    }
                },
            }
        }
    }

    fn materialize(&self, change: SlotChange) -> Result<Change> {
        Ok(match change {
            SlotChange::Added(i) => Change::Added {
                value: self.trees.resolve(&i.slot)?,
                key: i.key,
            },
            SlotChange::Removed(i) => Change::Removed {
                value: self.trees.resolve(&i.slot)?,
                key: i.key,
            },
            SlotChange::Modified { old, new } => Change::Modified {
                old: self.trees.resolve(&old.slot)?,
                new: self.trees.resolve(&new)?,
                key: old.key,
            },
        })
    }
}

impl Iterator for DiffIter<'_, '_> {
    type Item = Result<Change>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_slot_change() {
            Ok(Some(c)) => Some(self.materialize(c)),
            Ok(None) => None,
            Err(e) => Some(Err(e)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DiffResult {
    /// Entries present only in the second tree.
    pub added: Vec<Entry>,
    /// Entries present only in the first tree.
    pub removed: Vec<Entry>,
    /// `(key, value in first, value in second)`.
    pub modified: Vec<(Vec<u8>, Vec<u8>, Vec<u8>)>,
}

impl DiffResult {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.modified.is_empty()
    }

    pub fn len(&self) -> usize {
        self.added.len() + self.removed.len() + self.modified.len()
    }

    pub fn push(&mut self, change: Change) {
        match change {
            Change::Added { key, value } => self.added.push((key, value)),
            Change::Removed { key, value } => self.removed.push((key, value)),
            Change::Modified { key, old, new } => self.modified.push((key, old, new)),
        }
    }

    /// All changes merged back into key order.
    pub fn changes(&self) -> Vec<Change> {
        let mut all: Vec<Change> = self
            .added
            .iter()
            .map(|(k, v)| Change::Added {
                key: k.clone(),
                value: v.clone(),
            })
            .chain(self.removed.iter().map(|(k, v)| Change::Removed {
                key: k.clone(),
                value: v.clone(),
            }))
            .chain(self.modified.iter().map(|(k, o, n)| Change::Modified {
                key: k.clone(),
                old: o.clone(),
                new: n.clone(),
            }))
            .collect();
        all.sort_by(|x, y| x.key().cmp(y.key()));
        all
    }

    /// Applies this diff to the first tree's entries, yielding the second's.
    pub fn apply_to(&self, entries: &mut BTreeMap<Vec<u8>, Vec<u8>>) {
        for (k, _) in &self.removed {
            entries.remove(k);
        }
        for (k, v) in &self.added {
            entries.insert(k.clone(), v.clone());
        }
        for (k, _, new) in &self.modified {
            entries.insert(k.clone(), new.clone());
        }
    }

    /// The same diff seen from the other side.
    pub fn reversed(&self) -> DiffResult {
        DiffResult {
            added: self.removed.clone(),
            removed: self.added.clone(),
            modified: self
                .modified
                .iter()
                .map(|(k, o, n)| (k.clone(), n.clone(), o.clone()))
                .collect(),
        }
    }

    /// Line-oriented rendering: `+ key\tvalue`, `- key\tvalue`,
    /// `~ key\told\tnew`, in key order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in self.changes() {
            let _ = writeln!(out, "{}", c.to_line());
        }
        out
    }
}

/// Collects the full diff from `a` to `b`.
pub fn diff(trees: &PosTree, a: &TreeRef, b: &TreeRef) -> Result<DiffResult> {
    Ok(diff_with_stats(trees, a, b)?.0)
}

pub fn diff_with_stats(trees: &PosTree, a: &TreeRef, b: &TreeRef) -> Result<(DiffResult, DiffStats)> {
    let mut it = DiffIter::new(trees, a, b);
    let mut out = DiffResult::default();
    while let Some(change) = it.next() {
        out.push(change?);
    }
    Ok((out, it.stats()))
}

/// Escapes bytes for the text format: printable ASCII passes through, `\`
/// doubles, everything else (tab and newline included) becomes `\xNN`.
pub fn escape(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b'\\' => s.push_str("\\\\"),
            0x20..=0x7e => s.push(b as char),
            _ => {
                let _ = write!(s, "\\x{b:02x}");
            }
        }
    }
    s
}

/// Inverse of [`escape`].
pub fn unescape(text: &str) -> Option<Vec<u8>> {
    let bytes = text.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            match bytes.get(i + 1)? {
                b'\\' => {
                    out.push(b'\\');
                    i += 2;
                }
                b'x' => {
                    let hex = std::str::from_utf8(bytes.get(i + 2..i + 4)?).ok()?;
                    out.push(u8::from_str_radix(hex, 16).ok()?);
                    i += 4;
                }
                _ => return None,
            }
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::{Chunker, ChunkerConfig};
    use crate::store::MemStore;
    use proptest::prelude::*;

    fn kv(i: u32) -> Entry {
        (format!("row{i:05}").into_bytes(), format!("payload {i}").into_bytes())
    }

    #[test]
    fn identical_trees_prune_at_root() {
        let store = MemStore::new();
        let c = Chunker::new(ChunkerConfig::new(8, 7)).unwrap();
        let t = PosTree::new(&store, &c);
        let tree = t.build((0..1000).map(kv)).unwrap();
        let (d, stats) = diff_with_stats(&t, &tree, &tree).unwrap();
        assert!(d.is_empty());
        assert_eq!(stats.id_comparisons, 1);
        assert_eq!(stats.node_reads, 0);
    }

    #[test]
    fn single_addition() {
        let store = MemStore::new();
        let c = Chunker::new(ChunkerConfig::new(8, 7)).unwrap();
        let t = PosTree::new(&store, &c);
        let a = t.build((0..1000).map(|i| kv(i * 2))).unwrap();
        let b = t.build((0..1000).map(|i| kv(i * 2)).chain([kv(777)]).collect::<BTreeMap<_, _>>()).unwrap();
        let d = diff(&t, &a, &b).unwrap();
        assert_eq!(d.added, vec![kv(777)]);
        assert!(d.removed.is_empty() && d.modified.is_empty());
        assert_eq!(diff(&t, &b, &a).unwrap(), d.reversed());
    }

    #[test]
    fn text_format() {
        let mut d = DiffResult::default();
        d.push(Change::Modified {
            key: b"b".to_vec(),
            old: b"x".to_vec(),
            new: b"y\n".to_vec(),
        });
        d.push(Change::Added {
            key: b"a".to_vec(),
            value: b"tab\there".to_vec(),
        });
        assert_eq!(d.to_text(), "+ a\ttab\\x09here\n~ b\tx\ty\\x0a\n");
    }

    proptest! {
        #[test]
        fn escape_roundtrip(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            prop_assert_eq!(unescape(&escape(&bytes)).unwrap(), bytes);
        }

        #[test]
        fn diff_matches_set_difference(
            a in proptest::collection::btree_map(0u32..2000, 0u32..4, 0..500),
            b in proptest::collection::btree_map(0u32..2000, 0u32..4, 0..500),
        ) {
            let store = MemStore::new();
            let c = Chunker::new(ChunkerConfig::new(8, 6)).unwrap();
            let t = PosTree::new(&store, &c);
            let enc = |m: &BTreeMap<u32, u32>| -> BTreeMap<Vec<u8>, Vec<u8>> {
                m.iter().map(|(k, v)| (format!("{k:05}").into_bytes(), vec![b'v'; *v as usize + 1])).collect()
            };
            let (ma, mb) = (enc(&a), enc(&b));
            let ta = t.build(ma.clone()).unwrap();
            let tb = t.build(mb.clone()).unwrap();
            let d = diff(&t, &ta, &tb).unwrap();
            let mut applied = ma.clone();
            d.apply_to(&mut applied);
            prop_assert_eq!(&applied, &mb);
            prop_assert_eq!(diff(&t, &tb, &ta).unwrap(), d.reversed());
        }
    }
}
