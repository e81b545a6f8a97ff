//! `compare`: merge run CSVs into an aligned table and a long-format file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use prefetchlab_core::simulator::RunRow;

const METRICS: [&str; 5] = ["hit_ratio", "recall", "miss_coverage", "relative_io", "p95_latency_ms"];

fn metric(r: &RunRow, name: &str) -> Option<f64> {
    match name {
        "hit_ratio" => r.hit_ratio,
        "recall" => r.recall,
        "miss_coverage" => r.miss_coverage,
        "relative_io" => r.relative_io,
        "p95_latency_ms" => r.p95_latency_ms,
        _ => None,
    }
}

fn read_rows(path: &Path) -> Result<Vec<RunRow>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: std::result::Result<Vec<RunRow>, _> = rdr.deserialize().collect();
    rows.with_context(|| format!("malformed metrics CSV {}", path.display()))
}

pub fn run(inputs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut rows = Vec::new();
    let mut ids_per_file = Vec::new();
    for p in inputs {
        let r = read_rows(p)?;
        ids_per_file.push(r.iter().map(|x| x.run_id.clone()).collect::<BTreeSet<_>>());
        rows.extend(r);
    }
    if ids_per_file.len() > 1 {
        let shared = ids_per_file.iter().skip(1).fold(ids_per_file[0].clone(), |acc, s| &acc & s);
        if shared.is_empty() {
            eprintln!("warning: inputs share no run id; rows from different runs are not paired");
        }
    }
    print!("{}", render(&rows));
    if let Some(path) = out {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["run_id", "policy", "metric", "value"])?;
        for r in &rows {
            for m in METRICS {
                if let Some(v) = metric(r, m) {
                    w.write_record([r.run_id.as_str(), r.policy.as_str(), m, &v.to_string()])?;
                }
            }
        }
        w.flush()?;
    }
    Ok(())
}

/// Fixed-width table, one line per (run, policy).
pub fn render(rows: &[RunRow]) -> String {
    let mut table: Vec<Vec<String>> =
        vec![["run_id", "policy"].iter().chain(METRICS.iter()).map(|s| s.to_string()).collect()];
    for r in rows {
        let mut line = vec![r.run_id.clone(), r.policy.clone()];
        line.extend(METRICS.iter().map(|m| metric(r, m).map_or("-".into(), |v| format!("{v:.4}"))));
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len()).map(|c| table.iter().map(|l| l[c].len()).max().unwrap_or(0)).collect();
    let mut s = String::new();
    for line in table {
        let cells: Vec<String> = line.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        s.push_str(cells.join("  ").trim_end());
        s.push('\n');
    }
    s
}
