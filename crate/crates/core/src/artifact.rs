//! Artifact persistence: atomic writes and the provenance header carried by
//! every CSV the pipeline emits.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::text::sha256_hex;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const LOSS_HEADER: [&str; 5] = ["epoch", "step", "split", "mode", "loss_nats"];
pub const EVAL_HEADER: [&str; 5] = ["train_corpus", "mode", "eval_corpus", "mae", "mse"];
pub const ENTROPY_HEADER: [&str; 5] = ["dataset", "dimension", "block", "raw_diff", "normalized"];
pub const SCORE_DIST_HEADER: [&str; 4] = ["dataset", "dimension", "score", "count"];
pub const PROFILE_HEADER: [&str; 4] = ["dataset", "dimension", "position", "probability"];
pub const LENGTH_HEADER: [&str; 4] = ["dataset", "bin_start", "bin_end", "count"];
pub const WORD_FREQ_HEADER: [&str; 4] = ["dataset", "dimension", "word", "count"];
pub const RANK_HEADER: [&str; 6] = ["dataset", "dimension", "id", "block", "target_rank", "entropy"];
pub const CALIBRATION_HEADER: [&str; 5] = ["method", "dimension", "n", "mae", "mse"];
pub const WEIGHT_DIFF_HEADER: [&str; 5] = ["dataset", "dimension", "target", "raw_frobenius", "normalized"];

/// SHA-256 of the compact JSON serialization.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

/// Writes via a sibling temp file and a rename, so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// A CSV table: a `# config_hash=... code_version=...` comment line, the
/// header, then rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, config_hash: &str) -> Result<Vec<u8>> {
        let mut out = format!("# config_hash={config_hash} code_version={CODE_VERSION}\n").into_bytes();
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::invalid(format!("csv encoding: {e}"));
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        out.extend(w.into_inner().map_err(|e| Error::invalid(e.to_string()))?);
        Ok(out)
    }

    pub fn write(&self, path: &Path, config_hash: &str) -> Result<()> {
        write_atomic(path, &self.render(config_hash)?)
    }

    /// Parses a table written by [`CsvTable::render`], checking the header.
    pub fn read(path: &Path, expected_header: &[&str]) -> Result<CsvTable> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| Error::invalid(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header != expected_header {
            return Err(Error::invalid(format!(
                "{}: expected header {:?}, found {:?}",
                path.display(),
                expected_header,
                header
            )));
        }
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(CsvTable { header, rows })
    }
}

/// Shortest round-trip decimal form, stable across runs.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}
