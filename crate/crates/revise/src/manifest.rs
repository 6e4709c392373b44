//! Dataset manifests: one JSON object per line.
//!
//! ```text
//! {"id": "q1", "video_path": "frames/q1", "question": "...", "options": ["red", "blue"], "answer": "B", "category": "colour"}
//! ```
//!
//! `answer` is an option label or the exact text of an option. Relative
//! `video_path`s are resolved against the manifest's directory.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use revise_core::AnswerSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub video_path: String,
    pub question: String,
    pub options: Vec<String>,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

/// A validated manifest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct QaItem {
    pub id: String,
    pub video_path: PathBuf,
    pub question: String,
    pub options: AnswerSet,
    /// Resolved option label.
    pub answer: String,
    pub category: Option<String>,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: {id} has {count} options, need at least 2")]
    TooFewOptions { line: usize, id: String, count: usize },
    #[error("line {line}: answer {answer:?} of {id} is not one of its options")]
    AnswerNotInOptions { line: usize, id: String, answer: String },
    #[error("line {line}: duplicate id {id}")]
    DuplicateId { line: usize, id: String },
}

impl ManifestRecord {
    pub fn validate(&self, line: usize, base: &Path) -> Result<QaItem, ManifestError> {
        if self.options.len() < 2 {
            return Err(ManifestError::TooFewOptions {
                line,
                id: self.id.clone(),
                count: self.options.len(),
            });
        }
        let options = AnswerSet::from_texts(&self.options);
        let answer = options
            .resolve(&self.answer)
            .map(|o| o.label.clone())
            .ok_or_else(|| ManifestError::AnswerNotInOptions {
                line,
                id: self.id.clone(),
                answer: self.answer.clone(),
            })?;
        let p = PathBuf::from(&self.video_path);
        Ok(QaItem {
            id: self.id.clone(),
            video_path: if p.is_absolute() { p } else { base.join(p) },
            question: self.question.clone(),
            options,
            answer,
            category: self.category.clone(),
        })
    }
}

/// Parses manifest text. Blank lines are skipped.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<QaItem>, ManifestError> {
    let mut seen = BTreeSet::new();
    let mut items = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(raw).map_err(|e| ManifestError::Json {
            line,
            message: e.to_string(),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(ManifestError::DuplicateId { line, id: rec.id });
        }
        items.push(rec.validate(line, base)?);
    }
    Ok(items)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<QaItem>, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Writes records as JSONL.
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

/// Reads any JSONL file into values of `T`, reporting the failing line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ManifestError> {
    let f = fs::File::open(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line_text = line.map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line_text.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line_text).map_err(|e| ManifestError::Json {
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
