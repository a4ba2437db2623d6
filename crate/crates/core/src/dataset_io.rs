//! Line-delimited JSON interchange: `records.jsonl` (dataset, fields),
//! `documents.jsonl` (id, text, dataset), and `pairs.jsonl`
//! (input, output, meta).
//!
//! Readers stream one line at a time. A malformed line yields a
//! [`DecodeError`] carrying its 1-based line number and reading continues.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct DecodeError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub dataset: String,
    pub fields: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub dataset: String,
}

/// One training example. `meta` records provenance (dataset, task type,
/// meta-template or generator id).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub input: String,
    pub output: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

pub struct RecordReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
}

pub fn read_records(path: impl AsRef<Path>) -> io::Result<RecordReader<BufReader<File>>> {
    Ok(RecordReader::new(BufReader::new(File::open(path)?)))
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R) -> Self {
        RecordReader {
            lines: reader.lines(),
            line_no: 0,
        }
    }

    fn decode(line: &str) -> Result<SourceRecord, String> {
        let rec: SourceRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if rec.dataset.is_empty() {
            return Err("`dataset` is empty".into());
        }
        if rec.fields.is_empty() {
            return Err("`fields` is empty".into());
        }
        Ok(rec)
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<SourceRecord, DecodeError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(DecodeError {
                        line: self.line_no,
                        message: e.to_string(),
                    }))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(Self::decode(&line).map_err(|message| DecodeError {
                line: self.line_no,
                message,
            }));
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DocumentStats {
    pub read: usize,
    pub skipped_blank: usize,
    pub duplicate_ids: usize,
    pub malformed: usize,
}

pub struct DocumentReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
    default_dataset: String,
    seen: HashSet<String>,
    stats: DocumentStats,
}

pub fn read_documents(path: impl AsRef<Path>) -> io::Result<DocumentReader<BufReader<File>>> {
    let path = path.as_ref();
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("documents").to_owned();
    Ok(DocumentReader::new(BufReader::new(File::open(path)?), stem))
}

#[derive(Deserialize)]
struct RawDocument {
    #[serde(default)]
    id: Option<serde_json::Value>,
    text: String,
    #[serde(default)]
    dataset: Option<String>,
}

impl<R: BufRead> DocumentReader<R> {
    /// `default_dataset` is used for lines without a `dataset` key.
    pub fn new(reader: R, default_dataset: impl Into<String>) -> Self {
        DocumentReader {
            lines: reader.lines(),
            line_no: 0,
            default_dataset: default_dataset.into(),
            seen: HashSet::new(),
            stats: DocumentStats::default(),
        }
    }

    pub fn stats(&self) -> &DocumentStats {
        &self.stats
    }
}

impl<R: BufRead> Iterator for DocumentReader<R> {
    type Item = Result<Document, DecodeError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let fail = |message: String, stats: &mut DocumentStats, line| {
                stats.malformed += 1;
                Some(Err(DecodeError { line, message }))
            };
            let line = match line {
                Ok(l) => l,
                Err(e) => return fail(e.to_string(), &mut self.stats, self.line_no),
            };
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawDocument = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => return fail(e.to_string(), &mut self.stats, self.line_no),
            };
            if raw.text.trim().is_empty() {
                self.stats.skipped_blank += 1;
                continue;
            }
            let dataset = raw.dataset.unwrap_or_else(|| self.default_dataset.clone());
            let id = match raw.id {
                None | Some(serde_json::Value::Null) => format!("{dataset}#{}", self.line_no),
                Some(serde_json::Value::String(s)) => s,
                Some(other) => other.to_string(),
            };
            if !self.seen.insert(id.clone()) {
                self.stats.duplicate_ids += 1;
                log::warn!("line {}: duplicate document id `{id}`", self.line_no);
            }
            self.stats.read += 1;
            return Some(Ok(Document {
                id,
                text: raw.text,
                dataset,
            }));
        }
    }
}

/// Streaming `pairs.jsonl` writer.
pub struct PairWriter<W: Write> {
    out: W,
    count: usize,
}

impl PairWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(PairWriter::new(BufWriter::new(File::create(path)?)))
    }
}

impl<W: Write> PairWriter<W> {
    pub fn new(out: W) -> Self {
        PairWriter { out, count: 0 }
    }

    pub fn write(&mut self, pair: &InstructionPair) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, pair)?;
        self.out.write_all(b"\n")?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(mut self) -> io::Result<usize> {
        self.out.flush()?;
        Ok(self.count)
    }
}

/// Writes every pair, one JSON object per line; returns the count written.
pub fn write_pairs<I>(pairs: I, path: impl AsRef<Path>) -> io::Result<usize>
where
    I: IntoIterator<Item = InstructionPair>,
{
    let mut writer = PairWriter::create(path)?;
    for pair in pairs {
        writer.write(&pair)?;
    }
    writer.finish()
}

pub struct PairReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
}

pub fn read_pairs(path: impl AsRef<Path>) -> io::Result<PairReader<BufReader<File>>> {
    Ok(PairReader::new(BufReader::new(File::open(path)?)))
}

impl<R: BufRead> PairReader<R> {
    pub fn new(reader: R) -> Self {
        PairReader {
            lines: reader.lines(),
            line_no: 0,
        }
    }
}

impl<R: BufRead> Iterator for PairReader<R> {
    type Item = Result<InstructionPair, DecodeError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line_no = self.line_no;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(DecodeError { line: line_no, message: e.to_string() })),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(serde_json::from_str(&line).map_err(|e| DecodeError {
                line: line_no,
                message: e.to_string(),
            }));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn docs(text: &str) -> (Vec<Result<Document, DecodeError>>, DocumentStats) {
        let mut reader = DocumentReader::new(Cursor::new(text.to_owned()), "corpus");
        let items: Vec<_> = reader.by_ref().collect();
        (items, reader.stats().clone())
    }

    #[test]
    fn empty_record_file() {
        assert_eq!(RecordReader::new(Cursor::new("")).count(), 0);
    }

    #[test]
    fn records_in_order_with_error_accounting() {
        let text = r#"{"dataset":"d","fields":{"a":1}}
{"dataset":"d","fields":{"a":2}}
not json
{"dataset":"d","fields":{"a":3}}
"#;
        let items: Vec<_> = RecordReader::new(Cursor::new(text)).collect();
        assert_eq!(items.len(), 4);
        let ok: Vec<_> = items.iter().filter_map(|r| r.as_ref().ok()).map(|r| r.fields["a"].as_i64().unwrap()).collect();
        assert_eq!(ok, vec![1, 2, 3]);
        let errs: Vec<_> = items.iter().filter_map(|r| r.as_ref().err()).collect();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].line, 3);
    }

    #[test]
    fn record_invariants() {
        let items: Vec<_> = RecordReader::new(Cursor::new("{\"dataset\":\"\",\"fields\":{\"a\":1}}\n{\"dataset\":\"d\",\"fields\":{}}")).collect();
        assert!(items.iter().all(|r| r.is_err()));
    }

    #[test]
    fn blank_documents_are_skipped_and_counted() {
        let (items, stats) = docs("{\"text\":\"hello\"}\n{\"text\":\"   \\n \"}\n{\"text\":\"world\",\"dataset\":\"x\"}\n");
        let docs: Vec<_> = items.into_iter().map(Result::unwrap).collect();
        assert_eq!(docs.len(), 2);
        assert_eq!(stats.skipped_blank, 1);
        assert_eq!(docs[0].id, "corpus#1");
        assert_eq!(docs[1].id, "x#3");
        assert_eq!(docs[1].dataset, "x");
    }

    #[test]
    fn duplicate_ids_are_accepted() {
        let (items, stats) = docs("{\"id\":\"a\",\"text\":\"one\"}\n{\"id\":\"a\",\"text\":\"two\"}\n{\"id\":7,\"text\":\"three\"}\n");
        assert_eq!(items.iter().filter(|r| r.is_ok()).count(), 3);
        assert_eq!(stats.duplicate_ids, 1);
        assert_eq!(items[2].as_ref().unwrap().id, "7");
    }

    #[test]
    fn writer_escapes_newlines() {
        let mut buf = Vec::new();
        let mut w = PairWriter::new(&mut buf);
        w.write(&InstructionPair {
            input: "line one\nline two".into(),
            output: "a\r\nb".into(),
            meta: BTreeMap::new(),
        })
        .unwrap();
        assert_eq!(w.finish().unwrap(), 1);
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        let back: Vec<_> = PairReader::new(Cursor::new(text)).map(Result::unwrap).collect();
        assert_eq!(back[0].input, "line one\nline two");
    }

    #[test]
    fn empty_stream_writes_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        assert_eq!(write_pairs(Vec::new(), &path).unwrap(), 0);
        assert_eq!(std::fs::read(&path).unwrap().len(), 0);
    }
}
