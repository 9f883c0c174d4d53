//! On-disk formats: the `HCBE` embedding container and its JSON manifest,
//! the hierarchy TSV, and small helpers for hashing and CSV output.
//!
//! `HCBE` layout (little-endian):
//!
//! ```text
//! magic   "HCBE"
//! u32     version (= 1)
//! u32     count
//! u32     dim
//! u8      dtype   0 = f32, 1 = f64
//! u8      space   0 = manifold spatial component, 1 = tangent vector at the origin
//! f64     curvature
//! count * dim values, row-major
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"HCBE";
pub const EMBEDDING_VERSION: u32 = 1;
const EMBEDDING_HEADER_LEN: usize = 4 + 4 + 4 + 4 + 1 + 1 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    F32,
    F64,
}

/// How the stored rows are to be interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpace {
    /// Spatial component of a point already on the hyperboloid.
    ManifoldSpatial,
    /// Tangent vector at the origin, to be pushed through the exponential map.
    Tangent,
}

impl std::str::FromStr for InputSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manifold_spatial" | "manifold" => Ok(InputSpace::ManifoldSpatial),
            "tangent" => Ok(InputSpace::Tangent),
            other => Err(Error::param("input_space", format!("unknown space `{other}`"))),
        }
    }
}

/// Decoded contents of an `HCBE` file. Values are always widened to f64.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingContainer {
    pub dtype: DType,
    pub space: InputSpace,
    pub curvature: f64,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl EmbeddingContainer {
    pub fn count(&self) -> usize {
        self.values.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim.max(1))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let width = match self.dtype {
            DType::F32 => 4,
            DType::F64 => 8,
        };
        let mut out = Vec::with_capacity(EMBEDDING_HEADER_LEN + self.values.len() * width);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.push(match self.dtype {
            DType::F32 => 0,
            DType::F64 => 1,
        });
        out.push(match self.space {
            InputSpace::ManifoldSpatial => 0,
            InputSpace::Tangent => 1,
        });
        out.extend_from_slice(&self.curvature.to_le_bytes());
        for v in &self.values {
            match self.dtype {
                DType::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < EMBEDDING_HEADER_LEN {
            return Err(corrupt(format!("file is {} bytes, shorter than the header", bytes.len())));
        }
        if &bytes[0..4] != EMBEDDING_MAGIC {
            return Err(corrupt("bad magic, expected HCBE".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != EMBEDDING_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let count = u32_at(8) as usize;
        let dim = u32_at(12) as usize;
        let dtype = match bytes[16] {
            0 => DType::F32,
            1 => DType::F64,
            d => return Err(corrupt(format!("unknown dtype byte {d}"))),
        };
        let space = match bytes[17] {
            0 => InputSpace::ManifoldSpatial,
            1 => InputSpace::Tangent,
            s => return Err(corrupt(format!("unknown space byte {s}"))),
        };
        let curvature = f64::from_le_bytes(bytes[18..26].try_into().unwrap());
        let width = if dtype == DType::F32 { 4 } else { 8 };
        let body = &bytes[EMBEDDING_HEADER_LEN..];
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| corrupt("count * dim overflows".into()))?;
        if body.len() != expected {
            return Err(corrupt(format!(
                "payload is {} bytes, header implies {expected}",
                body.len()
            )));
        }
        let values = match dtype {
            DType::F32 => body
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => body
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        };
        Ok(EmbeddingContainer {
            dtype,
            space,
            curvature,
            dim,
            values,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    /// Index of the first row holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| (i / self.dim, i % self.dim))
    }
}

/// JSON sidecar for an embedding container. Concept banks use `tau`/`K`;
/// image sets use `labels`/`class_names`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub names: Vec<String>,
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub cone_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a `parent<TAB>child` file. Blank lines and `#` comments are skipped.
pub fn read_hierarchy_tsv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_hierarchy_tsv(&text, path)
}

pub fn parse_hierarchy_tsv(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(p), Some(c), None) if !p.is_empty() && !c.is_empty() => {
                out.push((p.to_string(), c.to_string()))
            }
            _ => {
                return Err(Error::Corrupt {
                    path: path.to_path_buf(),
                    reason: format!("line {}: expected `parent<TAB>child`", lineno + 1),
                })
            }
        }
    }
    Ok(out)
}

pub fn write_hierarchy_tsv(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (p, c) in pairs {
        text.push_str(p);
        text.push('\t');
        text.push_str(c);
        text.push('\n');
    }
    write_bytes(path, text.as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_bytes(path, &bytes)
}

/// Little-endian reader over a byte slice.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }
    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
    pub(crate) fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }
    pub(crate) fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    pub(crate) fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    pub(crate) fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(dtype: DType) -> EmbeddingContainer {
        EmbeddingContainer {
            dtype,
            space: InputSpace::Tangent,
            curvature: 0.1,
            dim: 3,
            values: vec![0.5, -0.25, 1.0, 2.0, 0.0, -1.5],
        }
    }

    #[test]
    fn container_round_trip() {
        let p = Path::new("mem");
        for dt in [DType::F32, DType::F64] {
            let c = sample(dt);
            let back = EmbeddingContainer::from_bytes(&c.to_bytes(), p).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.count(), 2);
        }
    }

    #[test]
    fn corrupt_headers() {
        let p = Path::new("mem");
        let mut bytes = sample(DType::F64).to_bytes();
        assert!(EmbeddingContainer::from_bytes(&bytes[..10], p).is_err());
        bytes.pop();
        assert!(EmbeddingContainer::from_bytes(&bytes, p).is_err());
        let mut bytes = sample(DType::F64).to_bytes();
        bytes[0] = b'X';
        let err = EmbeddingContainer::from_bytes(&bytes, p).unwrap_err();
        assert!(err.to_string().contains("magic"));
        let mut bytes = sample(DType::F64).to_bytes();
        bytes[16] = 9;
        assert!(EmbeddingContainer::from_bytes(&bytes, p).is_err());
    }

    #[test]
    fn manifest_json_shape() {
        let m = Manifest {
            names: vec!["a".into()],
            source: "s".into(),
            tau: Some(0.27),
            cone_k: Some(0.04),
            ..Default::default()
        };
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["K"], 0.04);
        assert_eq!(v["tau"], 0.27);
        assert!(v.get("labels").is_none());
    }

    #[test]
    fn tsv_parsing() {
        let p = Path::new("h.tsv");
        let pairs = parse_hierarchy_tsv("# c\nanimal\tdog\n\nanimal\tcat\r\n", p).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1], ("animal".into(), "cat".into()));
        assert!(parse_hierarchy_tsv("animal dog\n", p).is_err());
    }
}
