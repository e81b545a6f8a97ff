//! Line-oriented trace format.
//!
//! ```text
//! #catalog <lb_size> <table_count>
//! #table <name> <block_count> <col>:<num|text>,...
//! <query_id>\t<arrival_ms>\t<type>\t<tables_hex>\t<join_b64;...>\t<filter_b64;...>\t<name:block,...>
//! ```
//!
//! The table bitmap is hex with table 0 as the least significant bit, padded
//! to `ceil(table_count / 4)` digits.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use crate::address::TableLba;
use crate::error::{Error, Result};
use crate::trace::{CatalogState, ColumnKind, ColumnSpec, QueryRecord, QueryType, TableCatalog, TableSpec, Workload};

fn parse_err(line: usize, field: &'static str, reason: impl Into<String>) -> Error {
    Error::Parse { line, field, reason: reason.into() }
}

fn bitmap_to_hex(bits: &[bool]) -> String {
    let digits = bits.len().div_ceil(4).max(1);
    (0..digits)
        .rev()
        .map(|d| {
            let nibble = (0..4).fold(0u32, |acc, i| {
                let idx = d * 4 + i;
                acc | ((bits.get(idx).copied().unwrap_or(false) as u32) << i)
            });
            char::from_digit(nibble, 16).unwrap()
        })
        .collect()
}

fn hex_to_bitmap(s: &str, n: usize, line: usize) -> Result<Vec<bool>> {
    let mut bits = vec![false; n];
    for (d, c) in s.chars().rev().enumerate() {
        let nibble = c.to_digit(16).ok_or_else(|| parse_err(line, "tables_bitmap", format!("bad hex digit '{c}'")))?;
        for i in 0..4 {
            if nibble & (1 << i) != 0 {
                let idx = d * 4 + i;
                if idx >= n {
                    return Err(parse_err(line, "tables_bitmap", format!("bit {idx} beyond {n} tables")));
                }
                bits[idx] = true;
            }
        }
    }
    Ok(bits)
}

fn encode_texts(texts: &[String]) -> String {
    texts.iter().map(|t| B64.encode(t.as_bytes())).collect::<Vec<_>>().join(";")
}

fn decode_texts(s: &str, n: usize, line: usize, field: &'static str) -> Result<Vec<String>> {
    let parts: Vec<&str> = if n == 0 { Vec::new() } else { s.split(';').collect() };
    if parts.len() != n {
        return Err(parse_err(line, field, format!("expected {n} entries, got {}", parts.len())));
    }
    parts
        .into_iter()
        .map(|p| {
            let bytes = B64.decode(p).map_err(|e| parse_err(line, field, e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| parse_err(line, field, e.to_string()))
        })
        .collect()
}

/// Serializes `w` in canonical form.
pub fn write_trace<W: Write>(w: &Workload, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    let cat = &w.catalog;
    writeln!(out, "#catalog {} {}", cat.lb_size, cat.table_count())?;
    for t in &cat.tables {
        let cols: Vec<String> = t
            .columns
            .iter()
            .map(|c| {
                let kind = match c.kind {
                    ColumnKind::Numeric => "num",
                    ColumnKind::Text => "text",
                };
                format!("{}:{}", c.name, kind)
            })
            .collect();
        writeln!(out, "#table {} {} {}", t.name, t.block_count, cols.join(","))?;
    }
    for q in &w.queries {
        let blocks: Vec<String> = q
            .result_blocks
            .iter()
            .map(|b| format!("{}:{}", cat.tables[b.table_id as usize].name, b.block_no))
            .collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            q.query_id,
            q.arrival_ms,
            q.query_type,
            bitmap_to_hex(&q.accessed_tables),
            encode_texts(&q.join_text),
            encode_texts(&q.filter_text),
            blocks.join(",")
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_trace(w: &Workload, path: &Path) -> Result<()> {
    write_trace(w, fs::File::create(path)?)
}

pub fn load_trace(path: &Path) -> Result<Workload> {
    parse_trace(&fs::read_to_string(path)?)
}

fn parse_header(text: &str) -> Result<(TableCatalog, usize)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (ln, first) = lines.next().ok_or(Error::MissingCatalogHeader)?;
    let mut f = first.split_whitespace();
    if f.next() != Some("#catalog") {
        return Err(Error::MissingCatalogHeader);
    }
    let lb_size: u64 = f
        .next()
        .and_then(|s| s.parse().ok())
        .filter(|v| *v > 0)
        .ok_or_else(|| parse_err(ln, "lb_size", "expected positive integer"))?;
    let n: usize =
        f.next().and_then(|s| s.parse().ok()).ok_or_else(|| parse_err(ln, "table_count", "expected integer"))?;
    let mut tables = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, l) = lines.next().ok_or_else(|| parse_err(ln + 1, "table", "missing #table line"))?;
        let mut f = l.split_whitespace();
        if f.next() != Some("#table") {
            return Err(parse_err(ln, "table", "expected #table line"));
        }
        let name = f.next().ok_or_else(|| parse_err(ln, "table_name", "missing"))?.to_string();
        let block_count: u64 = f
            .next()
            .and_then(|s| s.parse().ok())
            .filter(|v| *v > 0)
            .ok_or_else(|| parse_err(ln, "block_count", "expected positive integer"))?;
        let cols = f.next().unwrap_or("");
        let columns = cols
            .split(',')
            .filter(|c| !c.is_empty())
            .map(|c| {
                let (name, kind) = c.split_once(':').ok_or_else(|| parse_err(ln, "col_spec", c.to_string()))?;
                let kind = match kind {
                    "num" => ColumnKind::Numeric,
                    "text" => ColumnKind::Text,
                    other => return Err(parse_err(ln, "col_spec", format!("unknown kind '{other}'"))),
                };
                Ok(ColumnSpec { name: name.to_string(), kind })
            })
            .collect::<Result<Vec<_>>>()?;
        tables.push(TableSpec { name, block_count, columns });
    }
    let catalog = TableCatalog::new(tables, lb_size).map_err(|e| parse_err(1, "catalog", e.to_string()))?;
    Ok((catalog, n + 1))
}

fn parse_query(line: &str, ln: usize, state: &CatalogState) -> Result<QueryRecord> {
    let cat = state.catalog();
    let n = cat.table_count();
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 7 {
        return Err(parse_err(ln, "line", format!("expected 7 tab-separated fields, got {}", fields.len())));
    }
    let query_id: u64 = fields[0].parse().map_err(|_| parse_err(ln, "query_id", fields[0]))?;
    let arrival_ms: f64 = fields[1]
        .parse()
        .ok()
        .filter(|v: &f64| *v >= 0.0 && v.is_finite())
        .ok_or_else(|| parse_err(ln, "arrival_ms", fields[1]))?;
    let query_type: QueryType = fields[2].parse().map_err(|e: String| parse_err(ln, "type", e))?;
    let accessed_tables = hex_to_bitmap(fields[3], n, ln)?;
    let join_text = decode_texts(fields[4], n, ln, "join_text")?;
    let filter_text = decode_texts(fields[5], n, ln, "filter_text")?;
    let mut result_blocks = Vec::new();
    for item in fields[6].split(',').filter(|s| !s.is_empty()) {
        let (name, block) = item.rsplit_once(':').ok_or_else(|| parse_err(ln, "blocks", item.to_string()))?;
        let table_id = cat.table_id(name).ok_or_else(|| Error::UnknownTable { line: ln, name: name.to_string() })?;
        let block_no: u64 = block.parse().map_err(|_| parse_err(ln, "blocks", item.to_string()))?;
        let size = state.block_count(table_id).unwrap();
        let limit = if query_type == QueryType::Insert { size + 1 } else { size };
        if block_no >= limit {
            return Err(parse_err(ln, "blocks", format!("{item} beyond table size {size}")));
        }
        if !accessed_tables[table_id as usize] {
            return Err(parse_err(ln, "tables_bitmap", format!("table '{name}' has blocks but no bitmap bit")));
        }
        result_blocks.push(TableLba::new(table_id, block_no));
    }
    Ok(QueryRecord { query_id, arrival_ms, query_type, accessed_tables, join_text, filter_text, result_blocks })
}

/// Parses a trace from text. An empty document yields [`Error::MissingCatalogHeader`].
pub fn parse_trace(text: &str) -> Result<Workload> {
    let (catalog, skip) = parse_header(text)?;
    let mut state = CatalogState::new(&catalog);
    let mut queries: Vec<QueryRecord> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(skip) {
        let ln = i + 1;
        if line.is_empty() {
            continue;
        }
        let q = parse_query(line, ln, &state)?;
        if let Some(prev) = queries.last() {
            if q.query_id <= prev.query_id {
                return Err(parse_err(ln, "query_id", "ids must be strictly increasing"));
            }
            if q.arrival_ms < prev.arrival_ms {
                return Err(parse_err(ln, "arrival_ms", "arrival offsets must be non-decreasing"));
            }
        }
        state.observe(&q);
        queries.push(q);
    }
    Ok(Workload::new(catalog, queries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{generate, SyntheticSpec};

    fn roundtrip(w: &Workload) -> Workload {
        let mut buf = Vec::new();
        write_trace(w, &mut buf).unwrap();
        parse_trace(std::str::from_utf8(&buf).unwrap()).unwrap()
    }

    #[test]
    fn generated_round_trip() {
        let mut w = generate(&SyntheticSpec { query_count: 100, seed: 5, ..Default::default() }).unwrap();
        w.program = None;
        assert_eq!(roundtrip(&w), w);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.trace");
        let mut w = generate(&SyntheticSpec { query_count: 20, ..Default::default() }).unwrap();
        w.program = None;
        save_trace(&w, &path).unwrap();
        assert_eq!(load_trace(&path).unwrap(), w);
    }

    #[test]
    fn empty_file_has_no_header() {
        assert!(matches!(parse_trace(""), Err(Error::MissingCatalogHeader)));
    }

    #[test]
    fn unknown_table() {
        let text = "#catalog 1 1\n#table a 10 x:num\n0\t0\tselect\t1\t\t\tb:3\n";
        match parse_trace(text) {
            Err(Error::UnknownTable { line, name }) => {
                assert_eq!(line, 3);
                assert_eq!(name, "b");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_field_names_line() {
        let text = "#catalog 1 1\n#table a 10 x:num\n0\t0\tselect\t1\t\t\ta:3\nzz\t0\tselect\t1\t\t\ta:3\n";
        match parse_trace(text) {
            Err(Error::Parse { line, field, .. }) => assert_eq!((line, field), (4, "query_id")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hex_bitmap() {
        let bits = vec![true, false, false, false, true];
        assert_eq!(bitmap_to_hex(&bits), "11");
        assert_eq!(hex_to_bitmap("11", 5, 1).unwrap(), bits);
        assert!(hex_to_bitmap("40", 5, 1).is_err());
    }
}
