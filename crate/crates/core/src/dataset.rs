//! CSV datasets as ordered maps.
//!
//! Each data row becomes one entry: the key is the designated column's field
//! bytes and the value is the row's raw line exactly as it appears in the file
//! (quoting and all), without its line terminator.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::id::Uid;
use crate::store::StoreStats;
use crate::tree::Entry;

/// A parsed dataset: header line plus rows sorted by primary key.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub header: Vec<u8>,
    pub rows: Vec<Entry>,
}

/// Strips line terminators; with CRLF input a record offset can land on the `\n`.
fn trim_terminator(mut line: &[u8]) -> &[u8] {
    while let [b'\n' | b'\r', rest @ ..] = line {
        line = rest;
    }
    while let [rest @ .., b'\n' | b'\r'] = line {
        line = rest;
    }
    line
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Csv {
        line,
        message: e.to_string(),
    }
}

/// Parses RFC 4180 CSV with a header row, keyed by `key_column`.
pub fn parse_csv(data: &[u8], key_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(data);
    let headers = reader.byte_headers().map_err(csv_err)?.clone();
    let col = headers
        .iter()
        .position(|h| h == key_column.as_bytes())
        .ok_or_else(|| Error::Csv {
            line: 1,
            message: format!("no column named {key_column:?} in header"),
        })?;

    // (start offset, line number, key) per record; raw row ends where the next begins.
    let mut starts: Vec<(usize, u64, Vec<u8>)> = Vec::new();
    let mut record = csv::ByteRecord::new();
    while reader.read_byte_record(&mut record).map_err(csv_err)? {
        let pos = record.position().expect("reader records positions");
        let key = record.get(col).unwrap_or_default().to_vec();
        if key.is_empty() {
            return Err(Error::Csv {
                line: pos.line(),
                message: "empty primary key".into(),
            });
        }
        starts.push((pos.byte() as usize, pos.line(), key));
    }
    let header_end = starts.first().map_or(data.len(), |s| s.0);
    let header = trim_terminator(&data[..header_end]).to_vec();

    let mut seen: HashMap<&[u8], u64> = HashMap::with_capacity(starts.len());
    let mut rows = Vec::with_capacity(starts.len());
    for (i, (start, line, key)) in starts.iter().enumerate() {
        if let Some(first) = seen.insert(key, *line) {
            return Err(Error::DuplicatePrimaryKey {
                key: String::from_utf8_lossy(key).into(),
                first,
                second: *line,
            });
        }
        let end = starts.get(i + 1).map_or(data.len(), |n| n.0);
        rows.push((key.clone(), trim_terminator(&data[*start..end]).to_vec()));
    }
    rows.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    Ok(Dataset { header, rows })
}

/// Outcome of loading one CSV file.
#[derive(Clone, Debug, Serialize)]
pub struct LoadReport {
    pub uid: Uid,
    pub rows: u64,
    pub input_bytes: u64,
    pub new_chunks: u64,
    pub new_payload_bytes: u64,
    pub dedup_hits: u64,
    pub put_requests: u64,
}

impl LoadReport {
    pub(crate) fn new(uid: Uid, rows: u64, input_bytes: u64, delta: StoreStats) -> Self {
        LoadReport {
            uid,
            rows,
            input_bytes,
            new_chunks: delta.chunk_count,
            new_payload_bytes: delta.total_payload_bytes,
            dedup_hits: delta.dedup_hits,
            put_requests: delta.put_requests,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_lines_are_preserved() {
        let data = b"id,name,note\r\n2,\"Smith, J\",\"two\nlines\"\r\n1,Bob,plain\n";
        let ds = parse_csv(data, "id").unwrap();
        assert_eq!(ds.header, b"id,name,note");
        assert_eq!(
            ds.rows,
            vec![
                (b"1".to_vec(), b"1,Bob,plain".to_vec()),
                (b"2".to_vec(), b"2,\"Smith, J\",\"two\nlines\"".to_vec()),
            ]
        );
    }

    #[test]
    fn no_trailing_newline() {
        let ds = parse_csv(b"k,v\na,1\nb,2", "k").unwrap();
        assert_eq!(ds.rows[1].1, b"b,2");
    }

    #[test]
    fn key_column_by_name() {
        let ds = parse_csv(b"v,k\n1,z\n2,a\n", "k").unwrap();
        assert_eq!(ds.rows[0], (b"a".to_vec(), b"2,a".to_vec()));
        assert!(matches!(parse_csv(b"v,k\n1,z\n", "nope"), Err(Error::Csv { .. })));
    }

    #[test]
    fn duplicate_keys_report_lines() {
        let err = parse_csv(b"k,v\na,1\nb,2\na,3\n", "k").unwrap_err();
        match err {
            Error::DuplicatePrimaryKey { key, first, second } => {
                assert_eq!(key, "a");
                assert_eq!((first, second), (2, 4));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn ragged_rows_are_malformed() {
        assert!(matches!(parse_csv(b"k,v\na,1\nb\n", "k"), Err(Error::Csv { .. })));
    }

    #[test]
    fn header_only() {
        let ds = parse_csv(b"k,v\n", "k").unwrap();
        assert!(ds.rows.is_empty());
        assert_eq!(ds.header, b"k,v");
    }
}
