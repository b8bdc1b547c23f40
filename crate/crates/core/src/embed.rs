//! Embedding providers: the seam where a real text/vision encoder would plug in.
//!
//! Two providers exist. `HashText` feature-hashes character trigrams of each
//! token into a signed bucket vector and L2-normalises it, so lexically similar
//! prompts land near each other. `FeatureFile` looks a prompt up as an id in a
//! precomputed UPBK matrix plus a sidecar id map (one id per line).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::linalg::{l2_normalize, Embedding, FeatureMatrix};
use crate::rng::{splitmix64, stable_hash, SeededRng};
use crate::text::{char_ngrams, tokenize};

/// Serializable description of a provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProviderSpec {
    HashText {
        dim: usize,
        #[serde(default = "default_ngram")]
        ngram: usize,
        #[serde(default)]
        seed: u64,
    },
    FeatureFile {
        matrix: PathBuf,
        ids: PathBuf,
    },
}

fn default_ngram() -> usize {
    3
}

impl Default for ProviderSpec {
    fn default() -> Self {
        ProviderSpec::HashText {
            dim: 64,
            ngram: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    HashText(HashTextProvider),
    FeatureFile(FeatureFileProvider),
}

impl EmbeddingProvider {
    pub fn from_spec(spec: &ProviderSpec) -> Result<Self> {
        match spec {
            ProviderSpec::HashText { dim, ngram, seed } => {
                Ok(Self::HashText(HashTextProvider::new(*dim, *ngram, *seed)?))
            }
            ProviderSpec::FeatureFile { matrix, ids } => {
                Ok(Self::FeatureFile(FeatureFileProvider::open(matrix, ids)?))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::HashText(p) => p.dim,
            Self::FeatureFile(p) => p.matrix.dim(),
        }
    }

    pub fn encode_text(&self, prompt: &str) -> Result<Embedding> {
        match self {
            Self::HashText(p) => p.encode(prompt),
            Self::FeatureFile(p) => p.encode(prompt),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashTextProvider {
    dim: usize,
    ngram: usize,
    seed: u64,
}

impl HashTextProvider {
    pub fn new(dim: usize, ngram: usize, seed: u64) -> Result<Self> {
        if dim == 0 || ngram == 0 {
            return Err(Error::InvalidArgument(
                "hash-text provider needs dim > 0 and ngram > 0".into(),
            ));
        }
        Ok(Self { dim, ngram, seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spec(&self) -> ProviderSpec {
        ProviderSpec::HashText {
            dim: self.dim,
            ngram: self.ngram,
            seed: self.seed,
        }
    }

    pub fn encode(&self, prompt: &str) -> Result<Embedding> {
        let tokens = tokenize(prompt);
        if tokens.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let mut acc = vec![0.0f64; self.dim];
        for token in &tokens {
            for gram in char_ngrams(token, self.ngram) {
                let h = splitmix64(stable_hash(gram.as_bytes()) ^ self.seed);
                let bucket = (h % self.dim as u64) as usize;
                let sign = if splitmix64(h) & 1 == 0 { 1.0 } else { -1.0 };
                acc[bucket] += sign;
            }
        }
        l2_normalize(&Embedding::new(acc)?)
    }
}

#[derive(Debug, Clone)]
pub struct FeatureFileProvider {
    matrix: FeatureMatrix,
    ids: HashMap<String, usize>,
}

impl FeatureFileProvider {
    pub fn open(matrix: &Path, ids: &Path) -> Result<Self> {
        let m = codec::read_matrix(matrix).map_err(|e| Error::ProviderIo(e.to_string()))?;
        let text = fs::read_to_string(ids)
            .map_err(|e| Error::ProviderIo(format!("{}: {e}", ids.display())))?;
        let ids: Vec<String> = text.lines().map(|l| l.trim().to_string()).collect();
        Self::new(m, ids)
    }

    pub fn new(matrix: FeatureMatrix, ids: Vec<String>) -> Result<Self> {
        if ids.len() != matrix.rows() {
            return Err(Error::ProviderIo(format!(
                "id map has {} lines but matrix has {} rows",
                ids.len(),
                matrix.rows()
            )));
        }
        let ids = ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect();
        Ok(Self { matrix, ids })
    }

    pub fn encode(&self, id: &str) -> Result<Embedding> {
        let row = self
            .ids
            .get(id.trim())
            .ok_or_else(|| Error::UnknownId(id.trim().to_string()))?;
        self.matrix.row_embedding(*row)
    }
}

/// Frozen token-hash embedding table producing a prompt's `L_r × width` input sequence.
#[derive(Debug, Clone)]
pub struct TokenHashTable {
    table: Array2<f64>,
    max_tokens: usize,
    seed: u64,
}

impl TokenHashTable {
    pub fn new(buckets: usize, width: usize, max_tokens: usize, seed: u64) -> Self {
        let mut rng = SeededRng::derive(seed, "token-hash-table");
        let scale = 1.0 / (width as f64).sqrt();
        let table = Array2::from_shape_fn((buckets, width), |_| rng.normal() * scale);
        Self {
            table,
            max_tokens,
            seed,
        }
    }

    pub fn width(&self) -> usize {
        self.table.ncols()
    }

    pub fn token_ids(&self, prompt: &str) -> Result<Vec<usize>> {
        let ids: Vec<usize> = tokenize(prompt)
            .iter()
            .take(self.max_tokens)
            .map(|t| {
                (splitmix64(stable_hash(t.as_bytes()) ^ self.seed) % self.table.nrows() as u64)
                    as usize
            })
            .collect();
        if ids.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        Ok(ids)
    }

    pub fn embed(&self, prompt: &str) -> Result<Array2<f64>> {
        let ids = self.token_ids(prompt)?;
        let w = self.width();
        let mut out = Array2::zeros((ids.len(), w));
        for (r, id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&self.table.row(*id));
        }
        Ok(out)
    }
}
