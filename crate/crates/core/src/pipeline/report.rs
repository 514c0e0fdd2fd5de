//! Experiment reports: CSV files with a provenance header row, resumable
//! row by row, and plain-text renderings.
//!
//! File layout:
//!
//! ```text
//! # config_hash=<sha256>,seed=<seed>
//! seed,variant,...,status
//! 0,baseline,...,ok
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub config_hash: String,
    pub seed: u64,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn clean(field: &str) -> String {
    field.replace([',', '\n', '\r'], ";")
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("# config_hash={},seed={}\n", self.config_hash, self.seed);
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |m: &str| Error::Data(format!("malformed report: {m}"));
        let head = lines.next().ok_or_else(|| bad("empty file"))?;
        let head = head.strip_prefix("# ").ok_or_else(|| bad("missing header row"))?;
        let mut hash = None;
        let mut seed = None;
        for part in head.split(',') {
            match part.split_once('=') {
                Some(("config_hash", v)) => hash = Some(v.to_string()),
                Some(("seed", v)) => seed = v.parse().ok(),
                _ => return Err(bad("unexpected header field")),
            }
        }
        let columns: Vec<String> = lines.next().ok_or_else(|| bad("missing columns"))?.split(',').map(String::from).collect();
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let r: Vec<String> = l.split(',').map(String::from).collect();
                if r.len() == columns.len() {
                    Ok(r)
                } else {
                    Err(bad("row width differs from header"))
                }
            })
            .collect::<Result<_>>()?;
        Ok(ReportTable {
            config_hash: hash.ok_or_else(|| bad("no config_hash"))?,
            seed: seed.ok_or_else(|| bad("no seed"))?,
            columns,
            rows,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Accumulates rows and rewrites the file after each one. Successful rows of
/// an earlier run with the same config hash, seed and columns can be reused
/// instead of recomputed; failed rows are always recomputed.
pub struct ReportWriter {
    path: PathBuf,
    table: ReportTable,
    key_cols: usize,
    previous: HashMap<Vec<String>, Vec<String>>,
}

impl ReportWriter {
    pub fn open(path: &Path, config_hash: &str, seed: u64, columns: &[&str], key_cols: usize) -> Result<Self> {
        let table = ReportTable {
            config_hash: config_hash.to_string(),
            seed,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        };
        let mut previous = HashMap::new();
        if let Ok(old) = ReportTable::read(path) {
            if old.config_hash == table.config_hash && old.seed == seed && old.columns == table.columns {
                for r in old.rows {
                    if r.last().map(String::as_str) == Some("ok") {
                        previous.insert(r[..key_cols].to_vec(), r);
                    }
                }
            }
        }
        Ok(ReportWriter {
            path: path.to_path_buf(),
            table,
            key_cols,
            previous,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn table(&self) -> &ReportTable {
        &self.table
    }

    /// Reuses a finished row for `key` or computes the remaining columns
    /// (between the key and the status) with `f`. Returns the full row, or
    /// `None` after recording a failure row.
    pub fn row<F>(&mut self, key: &[String], f: F) -> Result<Option<Vec<String>>>
    where
        F: FnOnce() -> Result<Vec<String>>,
    {
        debug_assert_eq!(key.len(), self.key_cols);
        let width = self.table.columns.len();
        let row = if let Some(r) = self.previous.remove(key) {
            log::info!("reusing completed row {key:?}");
            Some(r)
        } else {
            match f() {
                Ok(values) => {
                    if key.len() + values.len() + 1 != width {
                        return Err(Error::shape("report row", width, key.len() + values.len() + 1));
                    }
                    let mut r: Vec<String> = key.iter().map(|k| clean(k)).collect();
                    r.extend(values.iter().map(|v| clean(v)));
                    r.push("ok".into());
                    Some(r)
                }
                Err(e) => {
                    log::error!("row {key:?} failed: {e}");
                    let mut r: Vec<String> = key.iter().map(|k| clean(k)).collect();
                    r.resize(width - 1, String::new());
                    r.push(clean(&format!("failed: {e}")));
                    self.table.rows.push(r);
                    self.flush()?;
                    return Ok(None);
                }
            }
        };
        self.table.rows.extend(row.clone());
        self.flush()?;
        Ok(row)
    }

    fn flush(&self) -> Result<()> {
        let tmp = self.path.with_extension("csv.tmp");
        std::fs::write(&tmp, self.table.to_csv())?;
        std::fs::rename(&tmp, &self.path)?;
        Ok(())
    }

    pub fn failures(&self) -> Vec<String> {
        self.table
            .rows
            .iter()
            .filter_map(|r| r.last().filter(|s| s.as_str() != "ok").cloned())
            .collect()
    }
}

/// Exclusive ownership of an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".sidkit.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Data(format!(
                "{} is locked by another run (delete {} if it is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Column-aligned plain-text table.
pub fn render_table(columns: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = columns.iter().map(|c| c.len()).collect();
    for r in rows {
        for (w, v) in widths.iter_mut().zip(r) {
            *w = (*w).max(v.len());
        }
    }
    let line = |cells: &[String]| {
        let s: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        s.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(columns);
    out.push_str(&line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>()));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

fn is_metric(col: &str) -> bool {
    col.starts_with("R@") || col.starts_with("N@") || col == "uniqueness"
}

/// Per-variant means of the metric columns over successful rows, with the
/// first variant as "Baseline" and the others as relative changes. `None`
/// when the table has no variant or metric columns.
pub fn relative_view(table: &ReportTable) -> Option<String> {
    let vcol = table.column("variant")?;
    let scol = table.column("status")?;
    let metrics: Vec<usize> = (0..table.columns.len()).filter(|&i| is_metric(&table.columns[i])).collect();
    if metrics.is_empty() {
        return None;
    }
    let mut order: Vec<String> = Vec::new();
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for r in table.rows.iter().filter(|r| r[scol] == "ok") {
        let vals: Option<Vec<f64>> = metrics.iter().map(|&i| r[i].parse().ok()).collect();
        let Some(vals) = vals else { continue };
        let e = sums.entry(r[vcol].clone()).or_insert_with(|| {
            order.push(r[vcol].clone());
            (vec![0.0; metrics.len()], 0)
        });
        for (s, v) in e.0.iter_mut().zip(vals) {
            *s += v;
        }
        e.1 += 1;
    }
    let base_name = order.first()?;
    let mean = |v: &str| -> Vec<f64> {
        let (s, n) = &sums[v];
        s.iter().map(|x| x / *n as f64).collect()
    };
    let base = mean(base_name);
    let mut columns = vec!["variant".to_string(), "runs".to_string()];
    columns.extend(metrics.iter().map(|&i| table.columns[i].clone()));
    let mut rows = Vec::new();
    for v in &order {
        let m = mean(v);
        let mut row = vec![v.clone(), sums[v].1.to_string()];
        if v == base_name {
            row[0] = format!("Baseline ({v})");
            row.extend(m.iter().map(|x| format!("{x:.4}")));
        } else {
            row.extend(m.iter().zip(&base).map(|(x, b)| {
                if *b == 0.0 {
                    format!("{x:.4}")
                } else {
                    format!("{:+.1}%", 100.0 * (x - b) / b)
                }
            }));
        }
        rows.push(row);
    }
    Some(render_table(&columns, &rows))
}

/// The full table followed by the relative view, if any.
pub fn render_report(name: &str, table: &ReportTable) -> String {
    let mut out = format!("== {name} (config {}, seed {})\n", &table.config_hash[..table.config_hash.len().min(12)], table.seed);
    out.push_str(&render_table(&table.columns, &table.rows));
    if let Some(rel) = relative_view(table) {
        out.push_str("\nrelative to baseline (mean over runs):\n");
        out.push_str(&rel);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols() -> Vec<&'static str> {
        vec!["seed", "variant", "R@5", "status"]
    }

    #[test]
    fn rows_survive_a_rewrite_and_are_reused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let key = |s: &str, v: &str| vec![s.to_string(), v.to_string()];
        {
            let mut w = ReportWriter::open(&path, "abc", 0, &cols(), 2).unwrap();
            w.row(&key("0", "a"), || Ok(vec!["0.5".into()])).unwrap();
            w.row(&key("0", "b"), || Err(Error::Numerical("boom, again".into()))).unwrap();
        }
        let t = ReportTable::read(&path).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.rows[1][3].starts_with("failed: numerical failure: boom; again"));

        let mut w = ReportWriter::open(&path, "abc", 0, &cols(), 2).unwrap();
        let r = w.row(&key("0", "a"), || panic!("must be reused")).unwrap().unwrap();
        assert_eq!(r[2], "0.5");
        w.row(&key("0", "b"), || Ok(vec!["0.7".into()])).unwrap();
        assert!(w.failures().is_empty());

        let mut w = ReportWriter::open(&path, "other", 0, &cols(), 2).unwrap();
        let mut called = false;
        w.row(&key("0", "a"), || {
            called = true;
            Ok(vec!["0.1".into()])
        })
        .unwrap();
        assert!(called);
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let l = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(l);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn relative_view_uses_first_variant() {
        let t = ReportTable::parse("# config_hash=ab,seed=1\nseed,variant,R@5,status\n0,h8,0.2,ok\n0,h32,0.3,ok\n1,h8,0.4,ok\n1,h32,0.6,ok\n1,h64,,failed: x\n").unwrap();
        let v = relative_view(&t).unwrap();
        assert!(v.contains("Baseline (h8)"));
        assert!(v.contains("0.3000"));
        assert!(v.contains("+50.0%"));
        assert!(!v.contains("h64"));
    }

    #[test]
    fn parse_rejects_missing_header() {
        assert!(ReportTable::parse("seed,variant\n0,a\n").is_err());
    }
}
