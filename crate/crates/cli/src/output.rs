//! Artifact manifest and table writers.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nsann_core::hash::sha256_hex;
use nsann_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of everything the stage read.
    pub key: String,
    /// Output file name to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

/// `manifest.json` in the output directory. A stage is skipped when its
/// input key is unchanged and every recorded output still hashes the same.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load_or_default(dir: &Path) -> Self {
        std::fs::read(dir.join("manifest.json"))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_bytes(&dir.join("manifest.json"), serde_json::to_string_pretty(self).expect("manifest").as_bytes())
    }

    pub fn is_fresh(&self, dir: &Path, stage: &str, key: &str) -> bool {
        let Some(rec) = self.stages.get(stage) else {
            return false;
        };
        rec.key == key
            && !rec.outputs.is_empty()
            && rec
                .outputs
                .iter()
                .all(|(f, h)| std::fs::read(dir.join(f)).map(|b| &sha256_hex(&b) == h).unwrap_or(false))
    }

    pub fn record(&mut self, dir: &Path, stage: &str, key: &str, outputs: &[&str]) -> Result<()> {
        let mut map = BTreeMap::new();
        for f in outputs {
            let p = dir.join(f);
            let b = std::fs::read(&p).map_err(|e| Error::Io { path: p, source: e })?;
            map.insert(f.to_string(), sha256_hex(&b));
        }
        self.stages.insert(
            stage.into(),
            StageRecord {
                key: key.into(),
                outputs: map,
            },
        );
        self.save(dir)
    }
}

fn io_err(p: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: PathBuf::from(p),
        source: e,
    }
}

pub fn write_bytes(path: &Path, b: &[u8]) -> Result<()> {
    std::fs::write(path, b).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Malformed(e.to_string()))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let b = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&b).map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for r in rows {
        serde_json::to_writer(&mut w, &r).map_err(|e| Error::Malformed(e.to_string()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?;
    let wrap = |e: csv::Error| Error::Malformed(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(r.iter().map(|s| s.as_ref())).map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?;
    let header = r
        .headers()
        .map_err(|e| Error::Malformed(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(String::from).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Malformed(e.to_string()))?;
    Ok((header, rows))
}

pub fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_detects_changed_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        write_bytes(&d.join("a.bin"), b"hello").unwrap();
        let mut m = Manifest::default();
        m.record(d, "s", "k1", &["a.bin"]).unwrap();
        let m = Manifest::load_or_default(d);
        assert!(m.is_fresh(d, "s", "k1"));
        assert!(!m.is_fresh(d, "s", "k2"));
        assert!(!m.is_fresh(d, "t", "k1"));
        write_bytes(&d.join("a.bin"), b"changed").unwrap();
        assert!(!m.is_fresh(d, "s", "k1"));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&p, &["a", "b"], &[vec!["1".to_string(), fmt(0.5)]]).unwrap();
        let (h, rows) = read_csv(&p).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows, vec![vec!["1".to_string(), "0.500000".to_string()]]);
    }
}
