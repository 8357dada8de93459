//! Affine adapter `x -> Wx + b` over frozen base embeddings, and its
//! `.hxad` file format:
//!
//! ```text
//! "HXAD" | u32 version (=1) | u32 header length | JSON header
//! dim*dim f64 weights (row-major) | dim f64 bias      all little-endian
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AdaptError;
use crate::embedstore::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Contrastive,
    Distill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Hist,
    Modern,
    Mixed,
}

/// Which embedding sides the adapter maps at evaluation and search time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApplyTo {
    Source,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterMeta {
    pub dim: usize,
    pub objective: Objective,
    pub strategy: Strategy,
    pub apply_to: ApplyTo,
    pub seed: u64,
    pub scale: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hist_pairs: usize,
    pub modern_pairs: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterModel {
    pub meta: AdapterMeta,
    /// Row-major `dim x dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub const MAGIC: &[u8; 4] = b"HXAD";
pub const VERSION: u32 = 1;

impl AdapterModel {
    pub fn identity(meta: AdapterMeta) -> Self {
        let dim = meta.dim;
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self {
            meta,
            weight,
            bias: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn is_identity(&self) -> bool {
        let d = self.dim();
        self.bias.iter().all(|&b| b == 0.0)
            && self
                .weight
                .iter()
                .enumerate()
                .all(|(k, &w)| w == if k / d == k % d { 1.0 } else { 0.0 })
    }

    pub(crate) fn apply_f64(&self, x: &[f32], out: &mut [f64]) {
        let d = self.dim();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.weight[i * d..(i + 1) * d];
            *o = self.bias[i]
                + row
                    .iter()
                    .zip(x)
                    .map(|(&w, &v)| w * f64::from(v))
                    .sum::<f64>();
        }
    }

    pub fn apply(&self, x: &[f32]) -> Result<Vec<f32>, AdaptError> {
        if x.len() != self.dim() {
            return Err(AdaptError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let mut out = vec![0.0; self.dim()];
        self.apply_f64(x, &mut out);
        Ok(out.into_iter().map(|v| v as f32).collect())
    }

    /// Maps every row; the result is not re-normalised.
    pub fn apply_matrix(&self, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix, AdaptError> {
        if m.dim() != self.dim() {
            return Err(AdaptError::DimensionMismatch {
                expected: self.dim(),
                found: m.dim(),
            });
        }
        let mut buf = vec![0.0; self.dim()];
        Ok(m.map_rows(self.dim(), |r| {
            self.apply_f64(r, &mut buf);
            buf.iter().map(|&v| v as f32).collect()
        })?)
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.meta).expect("meta serializes");
        let mut buf = Vec::with_capacity(12 + header.len() + 8 * (self.weight.len() + self.bias.len()));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for v in self.weight.iter().chain(&self.bias) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, AdaptError> {
        let truncated = |section: &'static str| AdaptError::Truncated { section };
        if bytes.len() < 4 {
            return Err(truncated("magic"));
        }
        if &bytes[..4] != MAGIC {
            return Err(AdaptError::BadMagic);
        }
        if bytes.len() < 12 {
            return Err(truncated("header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(AdaptError::UnsupportedVersion(version));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = bytes.get(12..12 + hlen).ok_or(truncated("header"))?;
        let meta: AdapterMeta = serde_json::from_slice(header)
            .map_err(|e| AdaptError::Corrupt(format!("header: {e}")))?;
        let d = meta.dim;
        if d == 0 {
            return Err(AdaptError::Corrupt("dim is zero".into()));
        }
        let count = d
            .checked_mul(d)
            .and_then(|x| x.checked_add(d))
            .ok_or_else(|| AdaptError::Corrupt("dim overflows".into()))?;
        let body = &bytes[12 + hlen..];
        if body.len() / 8 < count {
            return Err(truncated("weights"));
        }
        if body.len() != count * 8 {
            return Err(AdaptError::Corrupt(format!("{} trailing bytes", body.len() - count * 8)));
        }
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (weight, bias) = vals.split_at(d * d);
        Ok(Self {
            meta,
            weight: weight.to_vec(),
            bias: bias.to_vec(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AdaptError> {
        let path = path.as_ref();
        let tmp = path.with_extension("hxad.tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.encode())?;
        f.sync_all()?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AdaptError> {
        Self::decode(&fs::read(path)?)
    }
}

#[cfg(test)]
pub(crate) fn test_meta(dim: usize) -> AdapterMeta {
    AdapterMeta {
        dim,
        objective: Objective::Contrastive,
        strategy: Strategy::Hist,
        apply_to: ApplyTo::Source,
        seed: 0,
        scale: 20.0,
        learning_rate: 2e-5,
        batch_size: 8,
        epochs: 1,
        hist_pairs: 0,
        modern_pairs: 0,
        steps: 0,
    }
}
