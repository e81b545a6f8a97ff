//! Per-table encoding store and its binary file format.
//!
//! Layout (little-endian): magic `PLENC1`, `u16` name length, name bytes,
//! `u32` enc_dim, `u64` row count, then per row a `u64` block number followed
//! by `enc_dim` `f32` values. Rows are sorted by block number.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"PLENC1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableEncodings {
    pub enc_dim: usize,
    pub rows: BTreeMap<u64, Vec<f32>>,
}

impl TableEncodings {
    pub fn new(enc_dim: usize) -> Self {
        Self { enc_dim, rows: BTreeMap::new() }
    }

    pub fn get(&self, block_no: u64) -> Option<&[f32]> {
        self.rows.get(&block_no).map(Vec::as_slice)
    }

    pub fn insert(&mut self, block_no: u64, enc: &[f64]) -> Vec<f64> {
        let row: Vec<f32> = enc.iter().map(|v| *v as f32).collect();
        let out = row.iter().map(|v| *v as f64).collect();
        self.rows.insert(block_no, row);
        out
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_to<W: Write>(&self, name: &str, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(name.len() as u16).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(self.enc_dim as u32).to_le_bytes())?;
        out.write_all(&(self.rows.len() as u64).to_le_bytes())?;
        for (block, row) in &self.rows {
            out.write_all(&block.to_le_bytes())?;
            for v in row {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, name: &str, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(name, &mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    /// Reads a store file, returning the table name and its rows.
    pub fn load(path: &Path) -> Result<(String, TableEncodings)> {
        let bytes = fs::read(path)?;
        let corrupt = |reason: &str| Error::Corrupt { path: path.to_path_buf(), reason: reason.to_string() };
        let mut r = bytes.as_slice();
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut u16b = [0u8; 2];
        let mut u32b = [0u8; 4];
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u16b).map_err(|_| corrupt("truncated header"))?;
        let mut name = vec![0u8; u16::from_le_bytes(u16b) as usize];
        r.read_exact(&mut name).map_err(|_| corrupt("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| corrupt("name is not utf-8"))?;
        r.read_exact(&mut u32b).map_err(|_| corrupt("truncated header"))?;
        let enc_dim = u32::from_le_bytes(u32b) as usize;
        r.read_exact(&mut u64b).map_err(|_| corrupt("truncated header"))?;
        let count = u64::from_le_bytes(u64b);
        if r.len() as u64 != count * (8 + 4 * enc_dim as u64) {
            return Err(corrupt("row section length does not match header"));
        }
        let mut store = TableEncodings::new(enc_dim);
        for _ in 0..count {
            r.read_exact(&mut u64b).map_err(|_| corrupt("truncated row"))?;
            let block = u64::from_le_bytes(u64b);
            let mut row = Vec::with_capacity(enc_dim);
            for _ in 0..enc_dim {
                r.read_exact(&mut u32b).map_err(|_| corrupt("truncated row"))?;
                row.push(f32::from_le_bytes(u32b));
            }
            store.rows.insert(block, row);
        }
        Ok((name, store))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("orders.enc");
        let mut s = TableEncodings::new(3);
        s.insert(9, &[0.25, -1.0, 3.5]);
        s.insert(2, &[0.1, 0.2, 0.3]);
        s.save("orders", &path).unwrap();
        let (name, back) = TableEncodings::load(&path).unwrap();
        assert_eq!(name, "orders");
        assert_eq!(back, s);
        let raw = fs::read(&path).unwrap();
        assert_eq!(raw.len(), 6 + 2 + 6 + 4 + 8 + 2 * (8 + 12));
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.enc");
        let mut s = TableEncodings::new(2);
        s.insert(1, &[1.0, 2.0]);
        s.save("t", &path).unwrap();
        let mut raw = fs::read(&path).unwrap();
        raw.pop();
        fs::write(&path, raw).unwrap();
        assert!(matches!(TableEncodings::load(&path), Err(Error::Corrupt { .. })));
    }
}
