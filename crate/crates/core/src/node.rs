//! Byte-exact node encoding.
//!
//! ```text
//! node  := [u8 level][u32 LE count] item*
//! item  := [u16 LE key_len][key][u8 tag][u32 LE value_len][value]
//! tag   := 0 inline value | 1 raw-blob id (32 bytes) | 2 child node id (32 bytes)
//! ```
//!
//! Level 0 nodes are leaves and are stored as `leaf-node` chunks; all other
//! levels are `index-node` chunks whose items are `(max key of child, child id)`.

use crate::error::{Error, Result};
use crate::id::NodeId;
use crate::store::{Chunk, ChunkKind};

pub const MAX_KEY_BYTES: usize = 1024;
pub const MAX_INLINE_VALUE_BYTES: usize = 64 * 1024;

const TAG_INLINE: u8 = 0;
const TAG_BLOB: u8 = 1;
const TAG_CHILD: u8 = 2;

/// Fixed per-item overhead: key length, tag and value length.
pub const ITEM_OVERHEAD: usize = 2 + 1 + 4;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    Inline(Vec<u8>),
    Blob(NodeId),
    Child(NodeId),
}

impl Slot {
    fn tag(&self) -> u8 {
        match self {
            Slot::Inline(_) => TAG_INLINE,
            Slot::Blob(_) => TAG_BLOB,
            Slot::Child(_) => TAG_CHILD,
        }
    }

    fn bytes(&self) -> &[u8] {
        match self {
            Slot::Inline(v) => v,
            Slot::Blob(id) | Slot::Child(id) => id.as_bytes(),
        }
    }

    pub fn child(&self) -> Option<NodeId> {
        match self {
            Slot::Child(id) => Some(*id),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Item {
    pub key: Vec<u8>,
    pub slot: Slot,
}

impl Item {
    pub fn new(key: Vec<u8>, slot: Slot) -> Self {
        Item { key, slot }
    }

    pub fn encoded_len(&self) -> usize {
        ITEM_OVERHEAD + self.key.len() + self.slot.bytes().len()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.key.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.key);
        out.push(self.slot.tag());
        let v = self.slot.bytes();
        out.extend_from_slice(&(v.len() as u32).to_le_bytes());
        out.extend_from_slice(v);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }
}

pub fn validate_key(key: &[u8]) -> Result<()> {
    if key.is_empty() {
        return Err(Error::InvalidKey("empty key".into()));
    }
    if key.len() > MAX_KEY_BYTES {
        return Err(Error::InvalidKey(format!(
            "key of {} bytes exceeds {MAX_KEY_BYTES}",
            key.len()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub level: u8,
    pub items: Vec<Item>,
}

impl Node {
    pub fn new(level: u8, items: Vec<Item>) -> Self {
        Node { level, items }
    }

    pub fn empty_leaf() -> Self {
        Node::new(0, Vec::new())
    }

    pub fn is_leaf(&self) -> bool {
        self.level == 0
    }

    pub fn kind(&self) -> ChunkKind {
        if self.is_leaf() {
            ChunkKind::Leaf
        } else {
            ChunkKind::Index
        }
    }

    pub fn max_key(&self) -> Option<&[u8]> {
        self.items.last().map(|i| i.key.as_slice())
    }

    pub fn encode(&self) -> Vec<u8> {
        let body: usize = self.items.iter().map(Item::encoded_len).sum();
        let mut out = Vec::with_capacity(5 + body);
        out.push(self.level);
        out.extend_from_slice(&(self.items.len() as u32).to_le_bytes());
        for item in &self.items {
            item.encode_into(&mut out);
        }
        out
    }

    pub fn to_chunk(&self) -> Chunk {
        Chunk::new(self.kind(), self.encode())
    }

    /// Decodes and structurally validates a node chunk.
    pub fn from_chunk(chunk: &Chunk) -> Result<Self> {
        let node = Node::decode(chunk.payload())?;
        let expected = node.kind();
        if chunk.kind() != expected {
            return Err(Error::malformed(
                "node",
                format!(
                    "level {} stored as {} chunk",
                    node.level,
                    chunk.kind().name()
                ),
            ));
        }
        Ok(node)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let level = r.u8()?;
        let count = r.u32()? as usize;
        // Every item takes at least ITEM_OVERHEAD + 1 bytes.
        if count > bytes.len() / (ITEM_OVERHEAD + 1) + 1 {
            return Err(Error::malformed("node", format!("implausible count {count}")));
        }
        let mut items: Vec<Item> = Vec::with_capacity(count);
        for _ in 0..count {
            let key_len = r.u16()? as usize;
            let key = r.take(key_len)?.to_vec();
            validate_key(&key).map_err(|e| Error::malformed("node", e.to_string()))?;
            if let Some(prev) = items.last() {
                if prev.key >= key {
                    return Err(Error::malformed("node", "keys not strictly increasing"));
                }
            }
            let tag = r.u8()?;
            let len = r.u32()? as usize;
            let value = r.take(len)?;
            let slot = match (tag, level) {
                (TAG_INLINE, 0) => Slot::Inline(value.to_vec()),
                (TAG_BLOB, 0) | (TAG_CHILD, 1..) => {
                    let id: [u8; 32] = value
                        .try_into()
                        .map_err(|_| Error::malformed("node", format!("id of {len} bytes")))?;
                    if tag == TAG_BLOB {
                        Slot::Blob(NodeId::from_bytes(id))
                    } else {
                        Slot::Child(NodeId::from_bytes(id))
                    }
                }
                _ => {
                    return Err(Error::malformed(
                        "node",
                        format!("tag {tag} not valid at level {level}"),
                    ))
                }
            };
            items.push(Item { key, slot });
        }
        if r.pos != bytes.len() {
            return Err(Error::malformed("node", "trailing bytes"));
        }
        if level > 0 && items.is_empty() {
            return Err(Error::malformed("node", "index node without children"));
        }
        Ok(Node { level, items })
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::malformed("record", "truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn id(&mut self) -> Result<NodeId> {
        Ok(NodeId::from_bytes(self.take(32)?.try_into().unwrap()))
    }

    pub fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
