//! Artifact writers. Every file carries the hash of the run configuration and
//! the seed: CSV tables as a leading `#` comment line, JSON documents as a
//! `provenance` member.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    /// Hash the canonical JSON form of `config` (object keys sorted).
    pub fn for_config<T: Serialize>(config: &T, seed: u64) -> Result<Provenance> {
        let value = serde_json::to_value(config)?;
        let text = serde_json::to_string(&value)?;
        Ok(Provenance {
            config_hash: sha256_hex(text.as_bytes()),
            seed,
        })
    }

    pub fn comment_line(&self) -> String {
        format!("# config_hash={},seed={}", self.config_hash, self.seed)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects written paths so callers can report them.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    provenance: Provenance,
    written: Vec<PathBuf>,
}

impl ArtifactWriter {
    pub fn new(dir: impl Into<PathBuf>, provenance: Provenance) -> Result<ArtifactWriter> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ArtifactWriter {
            dir,
            provenance,
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn into_written(self) -> Vec<PathBuf> {
        self.written
    }

    /// Write `value` as pretty JSON with a `provenance` member added.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut v = serde_json::to_value(value)?;
        let prov = serde_json::to_value(&self.provenance)?;
        match &mut v {
            serde_json::Value::Object(map) => {
                map.insert("provenance".into(), prov);
            }
            other => {
                let inner = std::mem::take(other);
                *other = serde_json::json!({ "provenance": prov, "value": inner });
            }
        }
        let mut text = serde_json::to_string_pretty(&v)?;
        text.push('\n');
        self.finish(name, text.as_bytes())
    }

    /// Write a comma-separated table with the provenance comment first.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut buf = Vec::new();
        writeln!(buf, "{}", self.provenance.comment_line())?;
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for r in rows {
                if r.len() != header.len() {
                    return Err(Error::DimensionMismatch {
                        expected: header.len(),
                        got: r.len(),
                    });
                }
                w.write_record(r)?;
            }
            w.flush()?;
        }
        self.finish(name, &buf)
    }

    fn finish(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.written.push(path.clone());
        Ok(path)
    }
}

/// Read a CSV artifact, skipping `#` comment lines.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok((header, rows))
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
