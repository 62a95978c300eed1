//! Three-way merge of trees.
//!
//! Both sides are diffed against the base with subtree pruning, the two change
//! sets are checked for same-key divergence, and the smaller change set is
//! applied copy-on-write onto the other side. Untouched subtrees of that side
//! are reused by id, and because the tree shape depends only on its entries
//! the result is identical to building the merged entry set from scratch.

use std::collections::BTreeMap;

use crate::diff::{DiffIter, DiffStats, SlotChange};
use crate::error::Result;
use crate::node::Slot;
use crate::tree::{PosTree, TreeRef};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MergeOutcome {
    Merged(TreeRef),
    /// Keys changed differently on both sides, in key order.
    Conflicts(Vec<Vec<u8>>),
}

impl MergeOutcome {
    pub fn merged(&self) -> Option<&TreeRef> {
        match self {
            MergeOutcome::Merged(t) => Some(t),
            MergeOutcome::Conflicts(_) => None,
        }
    }

    pub fn conflicts(&self) -> &[Vec<u8>] {
        match self {
            MergeOutcome::Merged(_) => &[],
            MergeOutcome::Conflicts(c) => c,
        }
    }
}

fn delta(trees: &PosTree, from: &TreeRef, to: &TreeRef, stats: &mut DiffStats) -> Result<Vec<SlotChange>> {
    let mut it = DiffIter::new(trees, from, to);
    let mut out = Vec::new();
    while let Some(c) = it.next_slot_change()? {
        out.push(c);
    }
    let s = it.stats();
    stats.node_reads += s.node_reads;
    stats.id_comparisons += s.id_comparisons;
    stats.pruned += s.pruned;
    Ok(out)
}

/// Merges `a` and `b`, which both descend from `base`.
///
/// Per key: a change on one side only is taken; identical changes on both
/// sides are taken once; differing changes (deletion included) conflict.
pub fn merge3(trees: &PosTree, base: &TreeRef, a: &TreeRef, b: &TreeRef) -> Result<MergeOutcome> {
    merge3_with_stats(trees, base, a, b).map(|(m, _)| m)
}

pub fn merge3_with_stats(
    trees: &PosTree,
    base: &TreeRef,
    a: &TreeRef,
    b: &TreeRef,
) -> Result<(MergeOutcome, DiffStats)> {
    let mut stats = DiffStats::default();
    if a.root == b.root || base.root == b.root {
        return Ok((MergeOutcome::Merged(*a), stats));
    }
    if base.root == a.root {
        return Ok((MergeOutcome::Merged(*b), stats));
    }
    let delta_a = delta(trees, base, a, &mut stats)?;
    let delta_b = delta(trees, base, b, &mut stats)?;

    let after_a: BTreeMap<&[u8], Option<&Slot>> =
        delta_a.iter().map(|c| (c.key(), c.after())).collect();
    let conflicts: Vec<Vec<u8>> = delta_b
        .iter()
        .filter(|c| after_a.get(c.key()).is_some_and(|s| *s != c.after()))
        .map(|c| c.key().to_vec())
        .collect();
    if !conflicts.is_empty() {
        return Ok((MergeOutcome::Conflicts(conflicts), stats));
    }

    let (target, changes) = if delta_b.len() <= delta_a.len() {
        (a, delta_b)
    } else {
        (b, delta_a)
    };
    let edits: Vec<(Vec<u8>, Option<Slot>)> = changes
        .into_iter()
        .map(|c| match c {
            SlotChange::Added(i) => (i.key, Some(i.slot)),
            SlotChange::Removed(i) => (i.key, None),
            SlotChange::Modified { old, new } => (old.key, Some(new)),
        })
        .collect();
    let merged = trees.apply_slots(target, edits)?;
    Ok((MergeOutcome::Merged(merged), stats))
}
