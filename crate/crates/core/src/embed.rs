//! Base text embeddings: the `EMB1` matrix file, the embedding-provider
//! contract and a deterministic feature-hashing embedder.

use std::path::Path;

use crate::binio::{self, len_u32, Reader, Writer};
use crate::error::{Error, Result};
use crate::text;

/// Row-major `n x d` matrix of finite `f32` values.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "embedding entry ({}, {}) is {}",
                i / d.max(1),
                i % d.max(1),
                values[i]
            )));
        }
        Ok(EmbeddingMatrix { n, d, values })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        EmbeddingMatrix {
            n,
            d,
            values: vec![0.0; n * d],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>], d: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), d, values)
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| f64::from(x)).collect()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> EmbeddingMatrix {
        let mut values = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix {
            n: idx.len(),
            d: self.d,
            values,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(Vec::with_capacity(12 + 4 * self.values.len()));
        w.bytes(b"EMB1")?;
        w.u32(len_u32(self.n)?)?;
        w.u32(len_u32(self.d)?)?;
        for &v in &self.values {
            w.f32(v)?;
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(b"EMB1")?;
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        let expected = n
            .checked_mul(d)
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| Error::Format("size mismatch: n*d overflows".into()))?;
        if r.remaining() != expected {
            return Err(Error::Format(format!(
                "size mismatch: header says {n}x{d} ({expected} bytes), payload has {}",
                r.remaining()
            )));
        }
        let mut values = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            values.push(r.f32()?);
        }
        Self::new(n, d, values)
    }
}

pub fn save_embeddings(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    binio::write_file(path, &matrix.to_bytes()?)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::from_bytes(&binio::read_file(path)?)
        .map_err(|e| e.context(format!("loading {}", path.display())))
}

/// Maps texts to fixed-width dense vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<EmbeddingMatrix>;
}

/// Signed feature hashing over lowercase whitespace tokens, L2-normalized.
#[derive(Clone, Copy, Debug)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 384;

    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 8 {
            return Err(Error::Invalid(format!("hash embedding dimension must be >= 8, got {dim}")));
        }
        Ok(HashEmbedder { dim, seed })
    }

    fn embed_one(&self, text: &str, out: &mut [f32]) {
        let mut acc = vec![0.0f64; self.dim];
        for tok in text::tokens(text) {
            let h = text::hash64(&tok, self.seed);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            acc[bucket] += sign;
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (o, a) in out.iter_mut().zip(&acc) {
                *o = (a / norm) as f32;
            }
        }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<EmbeddingMatrix> {
        let mut m = EmbeddingMatrix::zeros(texts.len(), self.dim);
        for (i, t) in texts.iter().enumerate() {
            self.embed_one(t, &mut m.values[i * self.dim..(i + 1) * self.dim]);
        }
        Ok(m)
    }
}

pub fn hash_embed(texts: &[String], d: usize, seed: u64) -> Result<EmbeddingMatrix> {
    HashEmbedder::new(d, seed)?.embed(texts)
}

/// Dot product accumulated in `f64`.
pub fn inner_product(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum())
}
