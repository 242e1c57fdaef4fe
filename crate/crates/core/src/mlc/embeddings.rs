use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::Vocabulary;
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"SWTE";

/// Frozen text embeddings, one row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddings {
    pub count: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl TextEmbeddings {
    pub fn new(count: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != count * dim {
            return Err(Error::shape(format!(
                "{} values cannot fill {count} rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { count, dim, data })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Magic `SWTE`, `u32` count, `u32` dim, then little-endian `f32` rows.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(self.count as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != EMBEDDING_MAGIC {
            return Err(Error::format("embedding file", "bad header"));
        }
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        let (count, dim) = (word(4), word(8));
        let body = &bytes[12..];
        if body.len() != 4 * count * dim {
            return Err(Error::format(
                "embedding file",
                format!("expected {count}x{dim} floats, found {} bytes", body.len()),
            ));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::new(count, dim, data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Deterministic stand-in for a text encoder: each word hashes to a seed
/// for a Gaussian vector, normalized to unit length.
pub fn pseudo_embedding(word: &str, dim: usize, seed: u64) -> Vec<f32> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(word.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    v.iter().map(|x| (x / norm) as f32).collect()
}

pub fn pseudo_embeddings(vocab: &Vocabulary, dim: usize, seed: u64) -> TextEmbeddings {
    let data = vocab
        .entries()
        .iter()
        .flat_map(|e| pseudo_embedding(&e.word, dim, seed))
        .collect();
    TextEmbeddings {
        count: vocab.len(),
        dim,
        data,
    }
}
