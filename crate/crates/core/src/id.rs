//! 32-byte content identifiers and their RFC 4648 Base32 text form.

use std::fmt;
use std::str::FromStr;

use data_encoding::BASE32_NOPAD;
use sha2::{Digest, Sha256};

use crate::error::Error;

/// Length of the unpadded Base32 rendering of a 32-byte digest.
pub const ID_TEXT_LEN: usize = 52;

/// SHA-256 digest naming a chunk. Node ids double as Merkle commitments.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId([u8; 32]);

impl NodeId {
    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        NodeId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// SHA-256 over `kind ‖ payload`.
    pub fn digest(kind: u8, payload: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update([kind]);
        h.update(payload);
        NodeId(h.finalize().into())
    }

    pub fn to_base32(&self) -> String {
        BASE32_NOPAD.encode(&self.0)
    }

    /// Parses the Base32 form. Lowercase input is accepted.
    pub fn parse(text: &str) -> Result<Self, Error> {
        let upper = text.trim().to_ascii_uppercase();
        if upper.len() != ID_TEXT_LEN {
            return Err(Error::InvalidUid(text.to_string()));
        }
        let bytes = BASE32_NOPAD
            .decode(upper.as_bytes())
            .map_err(|_| Error::InvalidUid(text.to_string()))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::InvalidUid(text.to_string()))?;
        Ok(NodeId(arr))
    }

    /// First 10 characters of the Base32 form, for compact display.
    pub fn short(&self) -> String {
        let mut s = self.to_base32();
        s.truncate(10);
        s
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_base32())
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({})", self.short())
    }
}

impl FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        NodeId::parse(s)
    }
}

/// Version identifier: the id of an FNode chunk.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Uid(pub NodeId);

impl Uid {
    pub fn node_id(&self) -> NodeId {
        self.0
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        self.0.as_bytes()
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        NodeId::parse(text).map(Uid)
    }

    pub fn short(&self) -> String {
        self.0.short()
    }
}

impl fmt::Display for Uid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for Uid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Uid({})", self.short())
    }
}

impl FromStr for Uid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Uid::parse(s)
    }
}

impl From<NodeId> for Uid {
    fn from(id: NodeId) -> Self {
        Uid(id)
    }
}

impl serde::Serialize for NodeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_base32())
    }
}

impl serde::Serialize for Uid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renders_52_chars_from_rfc4648_alphabet() {
        let id = NodeId::digest(0, b"hello");
        let s = id.to_base32();
        assert_eq!(s.len(), ID_TEXT_LEN);
        assert!(s.bytes().all(|b| b.is_ascii_uppercase() || (b'2'..=b'7').contains(&b)));
    }

    #[test]
    fn known_vector() {
        // RFC 4648 test vectors, extended to a full digest by padding with zeros.
        let mut bytes = [0u8; 32];
        bytes[..6].copy_from_slice(b"foobar");
        let s = NodeId::from_bytes(bytes).to_base32();
        assert!(s.starts_with("MZXW6YTBOI"));
    }

    #[test]
    fn accepts_lowercase() {
        let id = NodeId::digest(3, b"x");
        let lower = id.to_base32().to_ascii_lowercase();
        assert_eq!(NodeId::parse(&lower).unwrap(), id);
    }

    #[test]
    fn rejects_bad_text() {
        assert!(NodeId::parse("").is_err());
        assert!(NodeId::parse("ABC").is_err());
        assert!(NodeId::parse(&"1".repeat(52)).is_err());
        // 52 valid chars whose trailing bits are non-zero do not decode canonically.
        assert!(NodeId::parse(&"7".repeat(52)).is_err());
    }

    proptest! {
        #[test]
        fn parse_render_roundtrip(bytes in proptest::array::uniform32(any::<u8>())) {
            let id = NodeId::from_bytes(bytes);
            prop_assert_eq!(NodeId::parse(&id.to_base32()).unwrap(), id);
        }
    }
}
