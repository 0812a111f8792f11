//! Binary field files, run directories and the run manifest.
//!
//! Field file layout (little endian):
//!
//! ```text
//! magic  b"SPDN"
//! version u32  (= 1)
//! n_t     u32  number of time slices that follow
//! n_x     u32  values per slice
//! seed    u64
//! n_t * n_x f64 values, slice by slice in time order
//! ```
//!
//! Manifest (`manifest.json`):
//!
//! ```text
//! {
//!   "command": "density",
//!   "config_hash": "<sha256 of the canonical config>",
//!   "base_seed": 1,
//!   "seeds": [..derived path seeds..],
//!   "version": "<crate version>",
//!   "timestamp_unix": 1700000000,
//!   "outputs": [{ "path": "tables/kde.csv", "bytes": 1234, "sha256": "<hex>" }]
//! }
//! ```
//!
//! `timestamp_unix` is the only field that changes between identical runs.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPDN";
pub const FORMAT_VERSION: u32 = 1;

/// Slices read back from a field file.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub n_t: usize,
    pub n_x: usize,
    pub seed: u64,
    pub values: Vec<f64>,
}

/// Writes `values` (`n_slices * n_x` entries, slice-major) in the field format.
pub fn write_field<W: Write>(mut out: W, n_x: usize, seed: u64, values: &[f64]) -> Result<()> {
    if n_x == 0 || values.len() % n_x != 0 {
        return Err(Error::Contract(format!(
            "{} values do not form slices of length {n_x}",
            values.len()
        )));
    }
    let n_t = values.len() / n_x;
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} does not fit in u32")))
    };
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&to_u32(n_t, "n_t")?.to_le_bytes())?;
    out.write_all(&to_u32(n_x, "n_x")?.to_le_bytes())?;
    out.write_all(&seed.to_le_bytes())?;
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_field<R: Read>(mut input: R) -> Result<FieldFile> {
    let mut header = [0u8; 24];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::Format("field file shorter than its header".into()))?;
    if &header[..4] != MAGIC {
        return Err(Error::Format("bad magic; not a field file".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported field format version {version}")));
    }
    let n_t = u32_at(8) as usize;
    let n_x = u32_at(12) as usize;
    let seed = u64::from_le_bytes(header[16..24].try_into().unwrap());
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != n_t * n_x * 8 {
        return Err(Error::Format(format!(
            "field body has {} bytes, header promises {}",
            body.len(),
            n_t * n_x * 8
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FieldFile {
        n_t,
        n_x,
        seed,
        values,
    })
}

/// One output file of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Path relative to the run directory, with `/` separators.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub version: String,
    pub timestamp_unix: u64,
    pub outputs: Vec<OutputRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Output directory of one command; records every file it writes.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    outputs: Vec<OutputRecord>,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            outputs: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Renders into memory, writes `rel` and records its hash.
    pub fn write(&mut self, rel: &str, render: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = Vec::new();
        render(&mut buf)?;
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, &buf)?;
        self.outputs.retain(|o| o.path != rel);
        self.outputs.push(OutputRecord {
            path: rel.to_string(),
            bytes: buf.len() as u64,
            sha256: hex::encode(Sha256::digest(&buf)),
        });
        Ok(path)
    }

    pub fn outputs(&self) -> &[OutputRecord] {
        &self.outputs
    }

    /// Writes `manifest.json` listing every recorded output.
    pub fn finish(self, command: &str, config_hash: &str, base_seed: u64, seeds: Vec<u64>) -> Result<Manifest> {
        let timestamp_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let manifest = Manifest {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            base_seed,
            seeds,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix,
            outputs: self.outputs,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(self.root.join(MANIFEST_FILE), json + "\n")?;
        Ok(manifest)
    }
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(root.join(MANIFEST_FILE))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))
}

/// Recomputes every listed hash; returns the paths that do not match.
pub fn verify_manifest(root: &Path, manifest: &Manifest) -> Result<Vec<String>> {
    let mut bad = Vec::new();
    for o in &manifest.outputs {
        let bytes = fs::read(root.join(&o.path))?;
        if hex::encode(Sha256::digest(&bytes)) != o.sha256 {
            bad.push(o.path.clone());
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip() {
        let values: Vec<f64> = (0..12).map(|j| j as f64 * 0.5 - 1.0).collect();
        let mut buf = Vec::new();
        write_field(&mut buf, 4, 77, &values).unwrap();
        assert_eq!(buf.len(), 24 + 12 * 8);
        assert_eq!(&buf[..4], b"SPDN");
        let f = read_field(buf.as_slice()).unwrap();
        assert_eq!((f.n_t, f.n_x, f.seed), (3, 4, 77));
        assert_eq!(f.values, values);
    }

    #[test]
    fn field_format_errors() {
        assert!(write_field(Vec::new(), 5, 0, &[1.0; 12]).is_err());
        let mut buf = Vec::new();
        write_field(&mut buf, 4, 1, &[0.0; 8]).unwrap();
        buf.pop();
        assert!(matches!(read_field(buf.as_slice()), Err(Error::Format(_))));
        let mut bad = b"NOPE".to_vec();
        bad.extend([0u8; 20]);
        assert!(read_field(bad.as_slice()).is_err());
    }

    #[test]
    fn manifest_lists_every_output_with_its_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::create(dir.path().join("r")).unwrap();
        run.write("tables/a.csv", |w| {
            w.extend_from_slice(b"x\n1\n");
            Ok(())
        })
        .unwrap();
        run.write("fields/b.bin", |w| write_field(w, 2, 3, &[1.0, 2.0])).unwrap();
        let m = run.finish("simulate", "abc", 3, vec![9]).unwrap();
        assert_eq!(m.outputs.len(), 2);
        let back = read_manifest(&dir.path().join("r")).unwrap();
        assert_eq!(back, m);
        assert!(verify_manifest(&dir.path().join("r"), &back).unwrap().is_empty());
        fs::write(dir.path().join("r/tables/a.csv"), b"tampered").unwrap();
        assert_eq!(verify_manifest(&dir.path().join("r"), &back).unwrap(), vec!["tables/a.csv"]);
    }
}
