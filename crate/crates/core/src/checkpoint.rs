//! Framework-neutral tensor checkpoint files.
//!
//! Layout:
//!
//! ```text
//! # key value            optional metadata lines
//! name dim0 dim1 ...     one manifest line per tensor, UTF-8
//!                        a single empty line ends the manifest
//! <payload>              little-endian f32 values, tensors concatenated in manifest order
//! ```
//!
//! Tensor names must not contain whitespace. A scalar has no dims.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    /// Rounds `m` to f32. A `1 × n` matrix is stored as a vector when `as_vector` is set.
    pub fn from_matrix(name: impl Into<String>, m: &Array2<f64>, as_vector: bool) -> Self {
        let shape = if as_vector && m.nrows() == 1 {
            vec![m.ncols()]
        } else {
            vec![m.nrows(), m.ncols()]
        };
        Self {
            name: name.into(),
            shape,
            data: m.iter().map(|&v| v as f32).collect(),
        }
    }

    /// 0-d and 1-d tensors become a single row.
    pub fn to_matrix(&self) -> Array2<f64> {
        let (rows, cols) = match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, rest @ ..] => (*r, rest.iter().product()),
        };
        Array2::from_shape_vec((rows, cols), self.data.iter().map(|&v| v as f64).collect())
            .expect("payload size checked on load")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorCheckpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

impl TensorCheckpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedTensor> {
        self.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    /// Like [`TensorCheckpoint::require`] but also checks the shape.
    pub fn require_shape(&self, name: &str, shape: &[usize]) -> Result<&NamedTensor> {
        let t = self.require(name)?;
        if t.shape != shape {
            return Err(Error::Shape {
                context: "checkpoint tensor",
                expected: format!("{name} {shape:?}"),
                actual: format!("{name} {:?}", t.shape),
            });
        }
        Ok(t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (k, v) in &self.metadata {
            writeln!(out, "# {k} {v}").expect("write to vec");
        }
        for t in &self.tensors {
            write!(out, "{}", t.name).expect("write to vec");
            for d in &t.shape {
                write!(out, " {d}").expect("write to vec");
            }
            out.push(b'\n');
        }
        out.push(b'\n');
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let mut metadata = BTreeMap::new();
        let mut manifest: Vec<(String, Vec<usize>)> = Vec::new();
        let mut pos = 0;
        loop {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|i| pos + i)
                .ok_or_else(|| bad("manifest is not terminated by an empty line".into()))?;
            let line = std::str::from_utf8(&bytes[pos..end])
                .map_err(|_| bad(format!("manifest line at byte {pos} is not UTF-8")))?;
            pos = end + 1;
            if line.is_empty() {
                break;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let meta = meta.trim();
                let (k, v) = meta.split_once(' ').unwrap_or((meta, ""));
                metadata.insert(k.to_string(), v.to_string());
                continue;
            }
            let mut fields = line.split_whitespace();
            let name = fields.next().ok_or_else(|| bad("empty manifest entry".into()))?;
            let shape = fields
                .map(|f| f.parse::<usize>().map_err(|_| bad(format!("bad dimension {f:?} for {name}"))))
                .collect::<Result<Vec<_>>>()?;
            if manifest.iter().any(|(n, _)| n == name) {
                return Err(bad(format!("duplicate tensor name {name}")));
            }
            manifest.push((name.to_string(), shape));
        }
        let needed: usize = manifest.iter().map(|(_, s)| s.iter().product::<usize>() * 4).sum();
        let payload = &bytes[pos..];
        if payload.len() != needed {
            return Err(bad(format!(
                "payload has {} bytes, manifest requires {needed}",
                payload.len()
            )));
        }
        let mut tensors = Vec::with_capacity(manifest.len());
        let mut offset = 0;
        for (name, shape) in manifest {
            let count: usize = shape.iter().product();
            let data = payload[offset..offset + count * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            offset += count * 4;
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
