//! Hybrid prototype retrieval.
//!
//! A prompt is encoded to a unit query and scored against the text and vision
//! dense indices (global branch). Independently, vocabulary keywords are parsed
//! from the prompt text; the rarest few each contribute a couple of randomly
//! sampled postings (local branch). The union is de-duplicated in
//! text → vision → local order, clipped to `K_m`, and the matching prototype
//! features are gathered.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bank::{DenseIndex, InvertedIndex, PrototypeBank, Vocabulary};
use crate::embed::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::linalg::{dot, l2_normalize, Embedding, FeatureMatrix};
use crate::rng::{derive_seed, SeededRng};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Total prototype budget.
    pub km: usize,
    pub k_t: usize,
    pub k_v: usize,
    /// Number of rarest keywords used by the local branch.
    pub n_kw: usize,
    /// Prototypes sampled per keyword.
    pub n_per: usize,
    pub seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            km: 16,
            k_t: 4,
            k_v: 4,
            n_kw: 4,
            n_per: 2,
            seed: 0,
        }
    }
}

/// Where a retrieved id came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum Provenance {
    GlobalText { score: f64 },
    GlobalVision { score: f64 },
    Local { term: String },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::GlobalText { score } => write!(f, "{score:.6}\tglobal-text"),
            Provenance::GlobalVision { score } => write!(f, "{score:.6}\tglobal-vision"),
            Provenance::Local { term } => write!(f, "{term}\tlocal"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub ids: Vec<usize>,
    pub features: FeatureMatrix,
    pub provenance: Vec<Provenance>,
}

impl RetrievalResult {
    pub fn empty(d_p: usize) -> Self {
        Self {
            ids: Vec::new(),
            features: FeatureMatrix::zeros(0, d_p),
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// One line per id: `id<TAB>score-or-term<TAB>provenance`.
    pub fn report(&self) -> String {
        self.ids
            .iter()
            .zip(&self.provenance)
            .map(|(id, p)| format!("{id}\t{p}\n"))
            .collect()
    }
}

/// Top-`k` rows of `index` by dot product with `q`; ties go to the lower id.
pub fn top_k(index: &DenseIndex, q: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
    if q.len() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            got: q.len(),
        });
    }
    let m = index.matrix();
    let mut scored: Vec<(usize, f64)> = (0..m.rows()).map(|i| (i, dot(m.row(i), q))).collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(k);
    Ok(scored)
}

/// Text Top-`k_t` followed by vision Top-`k_v`, first occurrence kept.
pub fn global_retrieve(
    q: &Embedding,
    bank: &PrototypeBank,
    k_t: usize,
    k_v: usize,
) -> Result<Vec<Candidate>> {
    let text = top_k(bank.text_index(), q.values(), k_t)?;
    let vision = top_k(bank.vision_index(), q.values(), k_v)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(k_t + k_v);
    for (id, score) in text {
        if seen.insert(id) {
            out.push(Candidate {
                id,
                provenance: Provenance::GlobalText { score },
            });
        }
    }
    for (id, score) in vision {
        if seen.insert(id) {
            out.push(Candidate {
                id,
                provenance: Provenance::GlobalVision { score },
            });
        }
    }
    Ok(out)
}

/// Vocabulary terms in the prompt, by greedy longest match left to right.
///
/// Each prompt token belongs to at most one matched term; a term repeated in
/// the prompt is listed once, at its first match.
pub fn parse_keywords(prompt: &str, inverted: &InvertedIndex, vocab: &Vocabulary) -> Vec<String> {
    let tokens = tokenize(prompt);
    let max_n = vocab.max_ngram();
    let mut out: Vec<String> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = (1..=max_n.min(tokens.len() - i)).rev().find_map(|n| {
            let phrase = tokens[i..i + n].join(" ");
            (vocab.contains(&phrase) && inverted.postings(&phrase).is_some()).then_some((n, phrase))
        });
        match longest {
            Some((n, phrase)) => {
                if !out.contains(&phrase) {
                    out.push(phrase);
                }
                i += n;
            }
            None => i += 1,
        }
    }
    out
}

/// Matched keywords ordered rarest first (bank frequency, then lexicographic).
pub fn rarest_keywords(prompt: &str, bank: &PrototypeBank) -> Vec<String> {
    let mut terms = parse_keywords(prompt, bank.inverted(), bank.vocab());
    terms.sort_by(|a, b| {
        let fa = bank.vocab().freq(a).unwrap_or(0);
        let fb = bank.vocab().freq(b).unwrap_or(0);
        fa.cmp(&fb).then_with(|| a.cmp(b))
    });
    terms
}

/// Up to `n_per` uniformly drawn postings for each of the `n_kw` rarest keywords.
pub fn local_retrieve(
    prompt: &str,
    bank: &PrototypeBank,
    n_kw: usize,
    n_per: usize,
    seed: u64,
) -> Vec<Candidate> {
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::new();
    for term in rarest_keywords(prompt, bank).into_iter().take(n_kw) {
        let postings = bank.inverted().postings(&term).unwrap_or(&[]);
        for pick in rng.choose_k(postings.len(), n_per) {
            out.push(Candidate {
                id: postings[pick],
                provenance: Provenance::Local { term: term.clone() },
            });
        }
    }
    out
}

/// Per-query seed: the configured seed mixed with a stable hash of the prompt.
pub fn query_seed(seed: u64, prompt: &str) -> u64 {
    derive_seed(seed, prompt.trim())
}

/// Global ∪ local, clipped to `K_m`, with gathered prototype features.
pub fn hybrid_retrieve(
    prompt: &str,
    bank: &PrototypeBank,
    cfg: &RetrievalConfig,
    provider: &EmbeddingProvider,
) -> Result<RetrievalResult> {
    if cfg.km == 0 {
        return Ok(RetrievalResult::empty(bank.d_p()));
    }
    if provider.dim() != bank.d_q() {
        return Err(Error::DimensionMismatch {
            expected: bank.d_q(),
            got: provider.dim(),
        });
    }
    let q = l2_normalize(&provider.encode_text(prompt)?)?;
    let global = global_retrieve(&q, bank, cfg.k_t, cfg.k_v)?;
    let local = local_retrieve(prompt, bank, cfg.n_kw, cfg.n_per, query_seed(cfg.seed, prompt));
    let mut seen = HashSet::new();
    let mut ids = Vec::new();
    let mut provenance = Vec::new();
    for c in global.into_iter().chain(local) {
        if ids.len() == cfg.km {
            break;
        }
        if seen.insert(c.id) {
            ids.push(c.id);
            provenance.push(c.provenance);
        }
    }
    let features = bank.proto().gather(&ids)?;
    Ok(RetrievalResult {
        ids,
        features,
        provenance,
    })
}

/// Branch masks for the retrieval-component ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMode {
    TextOnly,
    VisionOnly,
    HybridGlobal,
    LocalOnly,
    GlobalLocal,
}

impl RetrievalMode {
    pub const ALL: [RetrievalMode; 5] = [
        RetrievalMode::TextOnly,
        RetrievalMode::VisionOnly,
        RetrievalMode::HybridGlobal,
        RetrievalMode::LocalOnly,
        RetrievalMode::GlobalLocal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RetrievalMode::TextOnly => "text-only",
            RetrievalMode::VisionOnly => "vision-only",
            RetrievalMode::HybridGlobal => "hybrid-global",
            RetrievalMode::LocalOnly => "local-only",
            RetrievalMode::GlobalLocal => "global+local",
        }
    }

    /// Zeroes the counts of the disabled branches.
    pub fn apply(self, cfg: &RetrievalConfig) -> RetrievalConfig {
        let mut c = *cfg;
        match self {
            RetrievalMode::TextOnly => {
                c.k_v = 0;
                c.n_kw = 0;
            }
            RetrievalMode::VisionOnly => {
                c.k_t = 0;
                c.n_kw = 0;
            }
            RetrievalMode::HybridGlobal => c.n_kw = 0,
            RetrievalMode::LocalOnly => {
                c.k_t = 0;
                c.k_v = 0;
            }
            RetrievalMode::GlobalLocal => {}
        }
        c
    }
}

impl std::str::FromStr for RetrievalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RetrievalMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown retrieval mode `{s}`")))
    }
}
