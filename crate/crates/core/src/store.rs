//! On-disk embedding matrices and the item manifests that key them.
//!
//! Embedding file layout (all integers little-endian):
//!
//! | bytes  | field                          |
//! |--------|--------------------------------|
//! | 0..8   | magic `DELEMB01`               |
//! | 8..12  | version, `u32` = 1             |
//! | 12..16 | n, `u32`                       |
//! | 16..20 | d, `u32`                       |
//! | 20..24 | flags, `u32` (bit 0 normalized)|
//! | 24..   | n·d `f32`, row-major           |
//!
//! The item manifest is a JSON-lines sidecar, one `{"id","uri","row"}`
//! object per line with rows ascending.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const MAGIC: &[u8; 8] = b"DELEMB01";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
pub const FLAG_NORMALIZED: u32 = 1;
pub const DEFAULT_DIM: usize = 768;

/// Tolerance on row norms for a matrix flagged as normalized.
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// An immutable n×d matrix of finite `f32` embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    values: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Builds a raw (not normalized) matrix from row-major values.
    pub fn new(n: usize, d: usize, values: Vec<f32>) -> Result<Self> {
        Self::with_flag(n, d, values, false)
    }

    /// Builds a matrix, validating the normalized flag if it is set.
    pub fn with_flag(n: usize, d: usize, values: Vec<f32>, normalized: bool) -> Result<Self> {
        if d == 0 {
            return Err(Error::Validation("embedding dimension must be >= 1".into()));
        }
        if values.len() != n * d {
            return Err(Error::Validation(format!(
                "expected {} values for {n}x{d}, got {}",
                n * d,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {} column {}",
                pos / d,
                pos % d
            )));
        }
        let m = EmbeddingMatrix {
            n,
            d,
            values,
            normalized,
        };
        if normalized {
            for (i, row) in m.rows().enumerate() {
                let nrm = linalg::norm(row);
                if (nrm - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::Data(format!(
                        "row {i} has norm {nrm} but matrix is flagged normalized"
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.as_ref().len() != d {
                return Err(Error::Validation(format!(
                    "row {i} has length {}, expected {d}",
                    r.as_ref().len()
                )));
            }
            values.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), d, values)
    }

    /// An empty matrix of the given dimension.
    pub fn empty(d: usize) -> Result<Self> {
        Self::new(0, d, Vec::new())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.d)
    }

    /// Returns an L2-normalized copy. Zero rows cannot be normalized.
    pub fn normalized(&self) -> Result<Self> {
        let mut values = Vec::with_capacity(self.values.len());
        for (i, row) in self.rows().enumerate() {
            let nrm = linalg::norm(row);
            if nrm == 0.0 {
                return Err(Error::Data(format!("zero-norm row {i}")));
            }
            values.extend(row.iter().map(|&x| (f64::from(x) / nrm) as f32));
        }
        Ok(EmbeddingMatrix {
            n: self.n,
            d: self.d,
            values,
            normalized: true,
        })
    }

    /// Copies the given rows, in the given order, into a new matrix.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.d);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        EmbeddingMatrix {
            n: rows.len(),
            d: self.d,
            values,
            normalized: self.normalized,
        }
    }

    /// Serializes to the binary embedding layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n = u32::try_from(self.n)
            .map_err(|_| Error::Format(format!("n = {} does not fit in u32", self.n)))?;
        let d = u32::try_from(self.d)
            .map_err(|_| Error::Format(format!("d = {} does not fit in u32", self.d)))?;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&d.to_le_bytes());
        let flags = if self.normalized { FLAG_NORMALIZED } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses the binary embedding layout and validates the contents.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[0..8] != MAGIC {
            return Err(Error::Format("bad magic, expected DELEMB01".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(8);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n = word(12) as usize;
        let d = word(16) as usize;
        let flags = word(20);
        if d == 0 {
            return Err(Error::Format("dimension 0 in header".into()));
        }
        if flags & !FLAG_NORMALIZED != 0 {
            return Err(Error::Format(format!("unknown flag bits {flags:#x}")));
        }
        let expected = (n as u64) * (d as u64) * 4 + HEADER_LEN as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::Format(format!(
                "header declares {n}x{d} ({expected} bytes) but file has {} bytes",
                bytes.len()
            )));
        }
        let values = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::with_flag(n, d, values, flags & FLAG_NORMALIZED != 0)
    }
}

/// One line of the item manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemEntry {
    #[serde(rename = "id")]
    pub item_id: String,
    #[serde(rename = "uri")]
    pub source_uri: String,
    #[serde(rename = "row")]
    pub row_index: usize,
}

/// Binds embedding rows back to item identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ItemManifest {
    entries: Vec<ItemEntry>,
}

impl ItemManifest {
    /// Validates that rows are exactly `0..n` in order and ids are unique.
    pub fn new(entries: Vec<ItemEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.row_index != i {
                return Err(Error::Validation(format!(
                    "manifest line {i} has row {}, expected {i}",
                    e.row_index
                )));
            }
            if !seen.insert(e.item_id.as_str()) {
                return Err(Error::Validation(format!("duplicate item id {:?}", e.item_id)));
            }
        }
        Ok(ItemManifest { entries })
    }

    /// Ids `{prefix}{row:06}` with empty URIs.
    pub fn sequential(n: usize, prefix: &str) -> Self {
        let entries = (0..n)
            .map(|i| ItemEntry {
                item_id: format!("{prefix}{i:06}"),
                source_uri: String::new(),
                row_index: i,
            })
            .collect();
        ItemManifest { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ItemEntry] {
        &self.entries
    }

    pub fn id(&self, row: usize) -> &str {
        &self.entries[row].item_id
    }

    /// Entries for the given rows, renumbered `0..rows.len()`.
    pub fn select(&self, rows: &[usize]) -> Self {
        let entries = rows
            .iter()
            .enumerate()
            .map(|(i, &r)| ItemEntry {
                row_index: i,
                ..self.entries[r].clone()
            })
            .collect();
        ItemManifest { entries }
    }

    pub fn check_matches(&self, matrix: &EmbeddingMatrix) -> Result<()> {
        if self.len() != matrix.n() {
            return Err(Error::Validation(format!(
                "manifest has {} entries but matrix has {} rows",
                self.len(),
                matrix.n()
            )));
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|e| Error::io("<manifest>", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<manifest>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ItemEntry = serde_json::from_str(&line).map_err(|e| {
                Error::Validation(format!("manifest line {}: {e}", lineno + 1))
            })?;
            entries.push(entry);
        }
        Self::new(entries)
    }
}

pub fn save_embeddings(path: &Path, matrix: &EmbeddingMatrix) -> Result<()> {
    let bytes = matrix.to_bytes()?;
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

/// Reads an embedding file. With `require_normalized` the returned matrix
/// is an L2-normalized copy of what is on disk.
pub fn load_embeddings(path: &Path, require_normalized: bool) -> Result<EmbeddingMatrix> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let m = EmbeddingMatrix::from_bytes(&bytes)?;
    if require_normalized {
        m.normalized()
    } else {
        Ok(m)
    }
}

pub fn save_manifest(path: &Path, manifest: &ItemManifest) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    manifest.write_jsonl(&mut f)?;
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<ItemManifest> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    ItemManifest::read_jsonl(BufReader::new(f))
}

/// Writes the matrix and its manifest side by side.
pub fn save(
    matrix: &EmbeddingMatrix,
    manifest: &ItemManifest,
    emb_path: &Path,
    items_path: &Path,
) -> Result<()> {
    manifest.check_matches(matrix)?;
    save_embeddings(emb_path, matrix)?;
    save_manifest(items_path, manifest)
}

pub fn load(
    emb_path: &Path,
    items_path: &Path,
    require_normalized: bool,
) -> Result<(EmbeddingMatrix, ItemManifest)> {
    let matrix = load_embeddings(emb_path, require_normalized)?;
    let manifest = load_manifest(items_path)?;
    manifest.check_matches(&matrix)?;
    Ok((matrix, manifest))
}
