//! Flat-file persistence for the index and CSV emission for its metrics.
//!
//! Index lines are `item_id \t codes \t dedup \t relevance \t freshness`,
//! codes space-separated, sorted by item id.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{assign_dedup_tokens, IndexedItem, LevelUsage, SidIndex};
use crate::error::{Error, Result};
use crate::sid::SemanticId;

pub fn write_index<W: Write>(index: &SidIndex, mut w: W) -> Result<()> {
    let dedup = assign_dedup_tokens(index);
    let mut meta = std::collections::HashMap::new();
    for list in index.lists() {
        for e in list.items {
            meta.insert(e.item_id, (e.relevance, e.freshness));
        }
    }
    for (id, sid) in &dedup {
        let (rel, fresh) = meta[id];
        let codes: Vec<String> = sid.codes.iter().map(u32::to_string).collect();
        writeln!(
            w,
            "{id}\t{}\t{}\t{rel}\t{fresh}",
            codes.join(" "),
            sid.dedup.unwrap_or(0)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_index(index: &SidIndex, path: &Path) -> Result<()> {
    write_index(index, BufWriter::new(fs::File::create(path)?))
}

/// Parses an index file. Returned SIDs carry their dedup tokens.
pub fn load_index_items(path: &Path) -> Result<Vec<IndexedItem>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated fields, found {}", fields.len())));
        }
        let item_id = fields[0]
            .parse::<u64>()
            .map_err(|e| bad(format!("item_id: {e}")))?;
        let codes = fields[1]
            .split_whitespace()
            .map(|c| c.parse::<u32>().map_err(|e| bad(format!("code `{c}`: {e}"))))
            .collect::<Result<Vec<u32>>>()?;
        let dedup = fields[2].parse::<u32>().map_err(|e| bad(format!("dedup: {e}")))?;
        let relevance = fields[3]
            .parse::<f64>()
            .map_err(|e| bad(format!("relevance: {e}")))?;
        let freshness = fields[4]
            .parse::<i64>()
            .map_err(|e| bad(format!("freshness: {e}")))?;
        out.push(IndexedItem {
            item_id,
            sid: SemanticId::with_dedup(codes, dedup),
            relevance,
            freshness,
        });
    }
    Ok(out)
}

pub fn shape_label(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

/// Header and one data row: shape, uniqueness, then utilization and
/// perplexity per level.
pub fn metrics_csv(shape: &[usize], uniqueness: f64, usage: &[LevelUsage]) -> String {
    let mut header = vec!["shape".to_string(), "uniqueness".to_string()];
    let mut row = vec![shape_label(shape), format!("{uniqueness:.6}")];
    for (l, u) in usage.iter().enumerate() {
        header.push(format!("utilization_l{l}"));
        row.push(format!("{:.6}", u.utilization));
    }
    for (l, u) in usage.iter().enumerate() {
        header.push(format!("perplexity_l{l}"));
        row.push(format!("{:.6}", u.perplexity));
    }
    format!("{}\n{}\n", header.join(","), row.join(","))
}
