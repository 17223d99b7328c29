//! Codebook vectors per RVQ scale, stored in the `CBK1` binary format:
//! magic `CBK1`, `u32` scale count, then per scale `u32` rows, `u32` dim and
//! `rows * dim` little-endian `f32` values, row-major.

use std::io::Read;
use std::path::Path;

use crate::{Error, Result};

pub const CODEBOOK_MAGIC: &[u8; 4] = b"CBK1";

#[derive(Clone, Debug, PartialEq)]
pub struct CodebookScale {
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl CodebookScale {
    pub fn new(rows: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || dim == 0 || values.len() != rows * dim {
            return Err(Error::invalid(format!(
                "codebook scale {rows}x{dim} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("codebook contains non-finite values"));
        }
        Ok(CodebookScale { rows, dim, values })
    }

    pub fn row(&self, token: usize) -> &[f32] {
        &self.values[token * self.dim..(token + 1) * self.dim]
    }
}

/// Row index = token id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    pub scales: Vec<CodebookScale>,
}

impl EmbeddingTable {
    pub fn scale(&self, s: usize) -> Result<&CodebookScale> {
        self.scales.get(s).ok_or_else(|| {
            Error::invalid(format!("scale out of range: {s} (codebook has {})", self.scales.len()))
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CODEBOOK_MAGIC);
        out.extend_from_slice(&(self.scales.len() as u32).to_le_bytes());
        for s in &self.scales {
            out.extend_from_slice(&(s.rows as u32).to_le_bytes());
            out.extend_from_slice(&(s.dim as u32).to_le_bytes());
            for v in &s.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::invalid("codebook file too short"))?;
        if &magic != CODEBOOK_MAGIC {
            return Err(Error::invalid("not a CBK1 codebook (bad magic)"));
        }
        let n = read_u32(&mut r)? as usize;
        let mut scales = Vec::with_capacity(n);
        for s in 0..n {
            let rows = read_u32(&mut r)? as usize;
            let dim = read_u32(&mut r)? as usize;
            let count = rows
                .checked_mul(dim)
                .filter(|c| c * 4 <= r.len())
                .ok_or_else(|| Error::invalid(format!("codebook truncated in scale {s}")))?;
            let (vals, rest) = r.split_at(count * 4);
            r = rest;
            let values = vals
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            scales.push(CodebookScale::new(rows, dim, values)?);
        }
        if !r.is_empty() {
            return Err(Error::invalid("trailing bytes after the last codebook scale"));
        }
        Ok(EmbeddingTable { scales })
    }
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::invalid("codebook file truncated"))?;
    Ok(u32::from_le_bytes(b))
}

pub fn load_codebook(path: &Path) -> Result<EmbeddingTable> {
    EmbeddingTable::from_bytes(&std::fs::read(path)?)
}

pub fn save_codebook(table: &EmbeddingTable, path: &Path) -> Result<()> {
    std::fs::write(path, table.to_bytes())?;
    Ok(())
}
