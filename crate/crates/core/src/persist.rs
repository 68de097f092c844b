//! Text tables, JSON files and configuration hashes.
//!
//! Numbers are written in Rust's shortest round-trip form, so reading a
//! table back reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::autodiff::{Array, Real};
use crate::error::{Error, Result};

/// Hex characters kept from the SHA-256 digest.
pub const HASH_LEN: usize = 16;

/// Stable hash of a serializable value (SHA-256 of its JSON form).
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let json = serde_json::to_string(value).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(hex::encode(digest)[..HASH_LEN].to_string())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Whitespace-separated table with a `rows cols` header line.
pub fn table_to_text(a: &Array) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} {}", a.rows(), a.cols());
    for r in 0..a.rows() {
        let row = a.row(r);
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{v:?}");
        }
        s.push('\n');
    }
    s
}

pub fn table_from_text(text: &str, origin: &Path) -> Result<Array> {
    let bad = |detail: String| Error::Parse {
        path: origin.to_path_buf(),
        detail,
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(format!("bad header `{header}`"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(bad(format!("header must be `rows cols`, got `{header}`")));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for (r, line) in lines.enumerate() {
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: Real = tok.parse().map_err(|_| bad(format!("row {r}: bad number `{tok}`")))?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(bad(format!("row {r} has {} values, expected {cols}", data.len() - before)));
        }
    }
    if data.len() != rows * cols {
        return Err(bad(format!("expected {rows} rows, found {}", data.len() / cols.max(1))));
    }
    Array::new(vec![rows, cols], data)
}

pub fn write_table(path: &Path, a: &Array) -> Result<()> {
    write_text(path, &table_to_text(a))
}

pub fn read_table(path: &Path) -> Result<Array> {
    table_from_text(&read_text(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip_is_bit_exact() {
        let vals = vec![0.1, -1e-300, 1.0 / 3.0, 12345.678, Real::MIN_POSITIVE, -0.0];
        let a = Array::new(vec![2, 3], vals).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        write_table(&path, &a).unwrap();
        let b = read_table(&path).unwrap();
        assert_eq!(b.shape(), a.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn malformed_tables_are_parse_errors() {
        let p = Path::new("x");
        assert!(matches!(table_from_text("2 2\n1 2\n3\n", p), Err(Error::Parse { .. })));
        assert!(matches!(table_from_text("1 2\n1 a\n", p), Err(Error::Parse { .. })));
        assert!(matches!(table_from_text("", p), Err(Error::Parse { .. })));
    }

    #[test]
    fn hash_tracks_content() {
        let a = config_hash(&(1, "a")).unwrap();
        assert_eq!(a.len(), HASH_LEN);
        assert_eq!(a, config_hash(&(1, "a")).unwrap());
        assert_ne!(a, config_hash(&(2, "a")).unwrap());
    }
}
