use std::collections::HashMap;

use super::StoreError;

/// Dense row-major `n x dim` store of f32 sentence vectors keyed by id.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    normalized: bool,
    index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.normalized == other.normalized
            && self.ids == other.ids
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

const UNIT_TOLERANCE: f64 = 1e-4;

impl EmbeddingMatrix {
    pub fn new(
        dim: usize,
        ids: Vec<String>,
        data: Vec<f32>,
        normalized: bool,
    ) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::ZeroDimension);
        }
        if data.len() != ids.len() * dim {
            return Err(StoreError::Shape {
                expected: ids.len() * dim,
                found: data.len(),
            });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(StoreError::DuplicateId(id.clone()));
            }
        }
        let m = Self {
            dim,
            ids,
            data,
            normalized,
            index,
        };
        if normalized {
            for i in 0..m.len() {
                let norm = l2_norm(m.row(i));
                if (norm - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(StoreError::NotUnit { row: i, norm });
                }
            }
        }
        Ok(m)
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f32>]) -> Result<Self, StoreError> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(StoreError::DimensionDrift {
                    row,
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        if rows.is_empty() {
            return Err(StoreError::ZeroDimension);
        }
        Self::new(dim, ids, data, false)
    }

    /// An empty store of the given dimension.
    pub fn empty(dim: usize) -> Result<Self, StoreError> {
        Self::new(dim, Vec::new(), Vec::new(), false)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Builds a new matrix from the given ids, in that order.
    pub fn select(&self, ids: &[String]) -> Result<Self, StoreError> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let row = self
                .get(id)
                .ok_or_else(|| StoreError::MissingId(id.clone()))?;
            data.extend_from_slice(row);
        }
        Self::new(self.dim, ids.to_vec(), data, self.normalized)
    }

    /// Applies `f` to every row, producing a matrix of dimension `out_dim`.
    pub fn map_rows(
        &self,
        out_dim: usize,
        mut f: impl FnMut(&[f32]) -> Vec<f32>,
    ) -> Result<Self, StoreError> {
        let mut data = Vec::with_capacity(self.len() * out_dim);
        for (row, r) in self.rows().enumerate() {
            let mapped = f(r);
            if mapped.len() != out_dim {
                return Err(StoreError::DimensionDrift {
                    row,
                    expected: out_dim,
                    found: mapped.len(),
                });
            }
            data.extend(mapped);
        }
        Self::new(out_dim, self.ids.clone(), data, false)
    }
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub fn normalize_rows(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix, StoreError> {
    let mut data = Vec::with_capacity(m.data.len());
    for (row, r) in m.rows().enumerate() {
        let norm = l2_norm(r);
        if norm == 0.0 || !norm.is_finite() {
            return Err(StoreError::ZeroRow { row });
        }
        data.extend(r.iter().map(|&x| (f64::from(x) / norm) as f32));
    }
    EmbeddingMatrix::new(m.dim, m.ids.clone(), data, true)
}

/// Cosine similarity, accumulated in f64 and clamped to [-1, 1].
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, StoreError> {
    if a.len() != b.len() {
        return Err(StoreError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(StoreError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
