//! On-disk corpus formats.
//!
//! Embeddings are stored one modality per file: magic `"SEMB"`, version
//! `u32`, row count `u64`, dim `u32`, then `f32` rows, all little-endian.
//! Metadata and user logs are tab-separated text with a header line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::synthetic::UserEvent;
use crate::corpus::{Corpus, EmbeddingRecord, ModalityInfo};
use crate::error::{Error, Result};

pub const SEMB_MAGIC: &[u8; 4] = b"SEMB";
pub const SEMB_VERSION: u32 = 1;
const METADATA_HEADER: &str = "item_id\trelevance\tfreshness";
const EVENTS_HEADER: &str = "user_id\titem_id\ttimestamp";
const MANIFEST: &str = "modalities.tsv";

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Writes `rows` (all of length `dim`) as f32.
pub fn write_semb<W: Write>(w: &mut W, dim: usize, rows: &[&[f64]]) -> Result<()> {
    w.write_all(SEMB_MAGIC)?;
    w.write_u32::<LE>(SEMB_VERSION)?;
    w.write_u64::<LE>(rows.len() as u64)?;
    w.write_u32::<LE>(dim as u32)?;
    for r in rows {
        if r.len() != dim {
            return Err(Error::shape("SEMB row", dim, r.len()));
        }
        for &x in *r {
            w.write_f32::<LE>(x as f32)?;
        }
    }
    Ok(())
}

/// Reads a SEMB file; `line` in errors is the 1-based row number.
pub fn read_semb(path: &Path) -> Result<(usize, Vec<Vec<f64>>)> {
    let len = std::fs::metadata(path)?.len();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| malformed(path, 0, "file shorter than header"))?;
    if &magic != SEMB_MAGIC {
        return Err(malformed(path, 0, "missing SEMB magic"));
    }
    let header = (|| -> std::io::Result<(u32, u64, u32)> { Ok((r.read_u32::<LE>()?, r.read_u64::<LE>()?, r.read_u32::<LE>()?)) })()
        .map_err(|_| malformed(path, 0, "truncated header"))?;
    let (version, rows, dim) = header;
    if version != SEMB_VERSION {
        return Err(malformed(path, 0, format!("unsupported version {version}")));
    }
    if dim == 0 {
        return Err(malformed(path, 0, "zero dimension"));
    }
    let expected = 20 + rows.saturating_mul(dim as u64).saturating_mul(4);
    if len > expected {
        return Err(malformed(path, rows as usize + 1, format!("{} trailing bytes", len - expected)));
    }
    let dim = dim as usize;
    let mut out = Vec::with_capacity(rows.min(1 << 20) as usize);
    let mut buf = vec![0f32; dim];
    for row in 1..=rows as usize {
        r.read_f32_into::<LE>(&mut buf).map_err(|_| malformed(path, row, "row truncated"))?;
        if let Some(j) = buf.iter().position(|v| !v.is_finite()) {
            return Err(malformed(path, row, format!("non-finite value in column {j}")));
        }
        out.push(buf.iter().map(|&v| v as f64).collect());
    }
    Ok((dim, out))
}

/// `(item_id, relevance, freshness)` per line.
pub fn read_metadata(path: &Path) -> Result<Vec<(u64, f64, i64)>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if n == 1 && line == METADATA_HEADER {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(malformed(path, n, format!("expected 3 fields, found {}", f.len())));
        }
        let id = f[0].parse().map_err(|e| malformed(path, n, format!("item_id: {e}")))?;
        let rel: f64 = f[1].parse().map_err(|e| malformed(path, n, format!("relevance: {e}")))?;
        if !rel.is_finite() {
            return Err(malformed(path, n, "relevance is not finite"));
        }
        let fresh = f[2].parse().map_err(|e| malformed(path, n, format!("freshness: {e}")))?;
        out.push((id, rel, fresh));
    }
    Ok(out)
}

pub fn write_metadata<W: Write>(w: &mut W, records: &[EmbeddingRecord]) -> Result<()> {
    writeln!(w, "{METADATA_HEADER}")?;
    for r in records {
        writeln!(w, "{}\t{}\t{}", r.item_id, r.relevance, r.freshness)?;
    }
    Ok(())
}

/// Builds a corpus from per-modality SEMB files whose rows line up with the
/// metadata lines.
pub fn ingest_embeddings(modalities: &[(String, PathBuf)], metadata: &Path) -> Result<Corpus> {
    let meta = read_metadata(metadata)?;
    let mut infos = Vec::new();
    let mut columns = Vec::new();
    for (name, path) in modalities {
        let (dim, rows) = read_semb(path)?;
        infos.push(ModalityInfo { name: name.clone(), dim });
        columns.push(rows);
    }
    if columns.iter().any(|c| c.len() != meta.len()) {
        let counts: Vec<String> = infos
            .iter()
            .zip(&columns)
            .map(|(m, c)| format!("{}={}", m.name, c.len()))
            .chain([format!("metadata={}", meta.len())])
            .collect();
        return Err(Error::Data(format!("row counts differ: {}", counts.join(", "))));
    }
    let mut iters: Vec<_> = columns.into_iter().map(|c| c.into_iter()).collect();
    let records = meta
        .into_iter()
        .map(|(item_id, relevance, freshness)| EmbeddingRecord {
            item_id,
            vectors: iters.iter_mut().map(|it| it.next()).collect(),
            relevance,
            freshness,
        })
        .collect();
    Corpus::new(infos, records)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes `corpus` (every item must have every modality) and optionally a
/// user log into `dir`.
pub fn write_corpus_dir(dir: &Path, corpus: &Corpus, events: Option<&[UserEvent]>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = create(&dir.join(MANIFEST))?;
    for (m, info) in corpus.modalities().iter().enumerate() {
        if info.name.contains(['\t', '/', '\\']) || info.name.is_empty() {
            return Err(Error::Data(format!("modality name `{}` cannot be a file name", info.name)));
        }
        let rows: Vec<&[f64]> = corpus
            .records()
            .iter()
            .map(|r| {
                r.vectors[m]
                    .as_deref()
                    .ok_or_else(|| Error::MissingModality(format!("{} (item {})", info.name, r.item_id)))
            })
            .collect::<Result<_>>()?;
        let mut w = create(&dir.join(format!("{}.semb", info.name)))?;
        write_semb(&mut w, info.dim, &rows)?;
        w.flush()?;
        writeln!(manifest, "{}", info.name)?;
    }
    manifest.flush()?;
    let mut w = create(&dir.join("metadata.tsv"))?;
    write_metadata(&mut w, corpus.records())?;
    w.flush()?;
    if let Some(ev) = events {
        let mut w = create(&dir.join("events.tsv"))?;
        write_events(&mut w, ev)?;
        w.flush()?;
    }
    Ok(())
}

/// Reads a directory written by [`write_corpus_dir`]; events are empty when
/// the directory has no user log.
pub fn read_corpus_dir(dir: &Path) -> Result<(Corpus, Vec<UserEvent>)> {
    let manifest = dir.join(MANIFEST);
    if !manifest.is_file() {
        return Err(Error::Data(format!(
            "no corpus in {} (run `ingest` or `synth` first)",
            dir.display()
        )));
    }
    let names: Vec<(String, PathBuf)> = std::fs::read_to_string(&manifest)?
        .lines()
        .filter(|l| !l.is_empty())
        .map(|n| (n.to_string(), dir.join(format!("{n}.semb"))))
        .collect();
    let corpus = ingest_embeddings(&names, &dir.join("metadata.tsv"))?;
    let events_path = dir.join("events.tsv");
    let events = if events_path.is_file() { read_events(&events_path)? } else { Vec::new() };
    Ok((corpus, events))
}

pub fn write_events<W: Write>(w: &mut W, events: &[UserEvent]) -> Result<()> {
    writeln!(w, "{EVENTS_HEADER}")?;
    for e in events {
        writeln!(w, "{}\t{}\t{}", e.user_id, e.item_id, e.timestamp)?;
    }
    Ok(())
}

/// Reads `user_id, item_id, timestamp` lines, tab- or comma-separated.
pub fn read_events(path: &Path) -> Result<Vec<UserEvent>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let norm = line.replace(',', "\t");
        if (n == 1 && norm == EVENTS_HEADER) || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = norm.split('\t').map(str::trim).collect();
        if f.len() != 3 {
            return Err(malformed(path, n, format!("expected 3 fields, found {}", f.len())));
        }
        out.push(UserEvent {
            user_id: f[0].parse().map_err(|e| malformed(path, n, format!("user_id: {e}")))?,
            item_id: f[1].parse().map_err(|e| malformed(path, n, format!("item_id: {e}")))?,
            timestamp: f[2].parse().map_err(|e| malformed(path, n, format!("timestamp: {e}")))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    fn semb(dim: usize, rows: &[Vec<f64>]) -> Vec<u8> {
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let mut buf = Vec::new();
        write_semb(&mut buf, dim, &refs).unwrap();
        buf
    }

    #[test]
    fn truncated_row_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = semb(2, &[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        bytes.truncate(bytes.len() - 9);
        let p = write_file(dir.path(), "a.semb", &bytes);
        match read_semb(&p) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_finite_and_trailing_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "nan.semb", &semb(1, &[vec![0.0], vec![f64::NAN]]));
        assert!(matches!(read_semb(&p), Err(Error::Malformed { line: 2, .. })));
        let mut bytes = semb(1, &[vec![0.0]]);
        bytes.push(0);
        let p = write_file(dir.path(), "tail.semb", &bytes);
        assert!(matches!(read_semb(&p), Err(Error::Malformed { .. })));
    }

    #[test]
    fn bad_metadata_line_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "m.tsv", b"item_id\trelevance\tfreshness\n1\t0.5\t10\n2\tx\t11\n");
        match read_metadata(&p) {
            Err(Error::Malformed { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("relevance"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn events_accept_commas_and_report_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "e.csv", b"1,5,100\n1,6,101\n");
        assert_eq!(read_events(&p).unwrap().len(), 2);
        let p = write_file(dir.path(), "bad.tsv", b"user_id\titem_id\ttimestamp\n1\t5\n");
        assert!(matches!(read_events(&p), Err(Error::Malformed { line: 2, .. })));
    }
}
