use std::collections::HashSet;
use std::path::Path;

use super::{Corpus, Record};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub schema_version: u32,
    /// Reject unknown top-level fields instead of preserving them.
    pub strict: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            schema_version: SCHEMA_VERSION,
            strict: false,
        }
    }
}

impl LoadOptions {
    pub fn strict() -> Self {
        LoadOptions {
            strict: true,
            ..Self::default()
        }
    }
}

pub fn load_corpus(path: &Path, opts: LoadOptions) -> Result<Corpus> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&content, opts)
}

/// Parses JSONL content. Blank lines and `#` comment lines are skipped;
/// line numbers in errors are 1-based physical lines.
pub fn parse_jsonl(content: &str, opts: LoadOptions) -> Result<Corpus> {
    if opts.schema_version != SCHEMA_VERSION {
        return Err(Error::invalid(format!(
            "unsupported corpus schema version {}",
            opts.schema_version
        )));
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let record: Record = serde_json::from_str(trimmed).map_err(|e| Error::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if opts.strict && !record.extra.is_empty() {
            let names: Vec<_> = record.extra.keys().cloned().collect();
            return Err(Error::Malformed {
                line: line_no,
                message: format!("unknown field(s): {}", names.join(", ")),
            });
        }
        record.validate().map_err(|e| Error::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(Corpus { records })
}

impl Corpus {
    pub fn from_jsonl(content: &str, opts: LoadOptions) -> Result<Corpus> {
        parse_jsonl(content, opts)
    }
}
