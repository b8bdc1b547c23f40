//! Caption/image agreement and ranked-retrieval metrics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cosine_slices, FeatureMatrix};

/// Mean cosine over paired rows.
pub fn alignment_score(captions: &FeatureMatrix, images: &FeatureMatrix) -> Result<f64> {
    if captions.rows() != images.rows() {
        return Err(Error::CountMismatch {
            left: captions.rows(),
            right: images.rows(),
        });
    }
    if captions.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    let mut sum = 0.0;
    for i in 0..captions.rows() {
        sum += cosine_slices(captions.row(i), images.row(i)).map_err(|e| match e {
            Error::ZeroVector { .. } => Error::ZeroVector { row: Some(i) },
            other => other,
        })?;
    }
    Ok(sum / captions.rows() as f64)
}

/// Per-query ranked gallery ids with the relevant ids of each query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRetrieval {
    rankings: Vec<Vec<usize>>,
    relevant: Vec<BTreeSet<usize>>,
}

impl RankedRetrieval {
    pub fn new(rankings: Vec<Vec<usize>>, relevant: Vec<BTreeSet<usize>>, gallery_size: usize) -> Result<Self> {
        if rankings.len() != relevant.len() {
            return Err(Error::CountMismatch {
                left: rankings.len(),
                right: relevant.len(),
            });
        }
        for (q, list) in rankings.iter().enumerate() {
            let unique: BTreeSet<_> = list.iter().collect();
            if unique.len() != list.len() {
                return Err(Error::InvalidArgument(format!("ranking {q} repeats an id")));
            }
            if let Some(bad) = list.iter().chain(&relevant[q]).find(|&&id| id >= gallery_size) {
                return Err(Error::UnknownId(format!("gallery id {bad}")));
            }
        }
        Ok(Self { rankings, relevant })
    }

    /// Ranks the gallery by cosine to each query; query `i` is relevant to
    /// gallery item `i` only.
    pub fn paired(queries: &FeatureMatrix, gallery: &FeatureMatrix) -> Result<Self> {
        if queries.rows() != gallery.rows() {
            return Err(Error::CountMismatch {
                left: queries.rows(),
                right: gallery.rows(),
            });
        }
        let rankings = rank_by_cosine(queries, gallery)?;
        let relevant = (0..queries.rows()).map(|i| BTreeSet::from([i])).collect();
        Self::new(rankings, relevant, gallery.rows())
    }

    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }

    pub fn rankings(&self) -> &[Vec<usize>] {
        &self.rankings
    }

    pub fn relevant(&self) -> &[BTreeSet<usize>] {
        &self.relevant
    }
}

/// Gallery ids by descending cosine, ties to the lower id.
pub fn rank_by_cosine(queries: &FeatureMatrix, gallery: &FeatureMatrix) -> Result<Vec<Vec<usize>>> {
    let g = gallery.normalized_rows()?;
    let q = queries.normalized_rows()?;
    if q.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            got: q.dim(),
        });
    }
    let sims = q.as_array().dot(&g.as_array().t());
    Ok(sims
        .rows()
        .into_iter()
        .map(|row| {
            let mut ids: Vec<usize> = (0..row.len()).collect();
            ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            ids
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalAtK {
    pub k: usize,
    pub recall: f64,
    pub map: f64,
}

/// Precision at each relevant hit within the top `k`, summed and divided
/// by `min(|relevant|, k)`. Zero when nothing is relevant.
pub fn average_precision_at(ranking: &[usize], relevant: &BTreeSet<usize>, k: usize) -> f64 {
    let denom = relevant.len().min(k);
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (rank, id) in ranking.iter().take(k).enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    sum / denom as f64
}

/// Recall@k (fraction of queries with a relevant id in the top `k`) and
/// mAP@k for every `k` in `ks`.
pub fn retrieval_metrics(r: &RankedRetrieval, ks: &[usize]) -> Result<Vec<RetrievalAtK>> {
    if r.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    if ks.is_empty() {
        return Err(Error::InvalidArgument("no cutoffs given".into()));
    }
    let nq = r.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| {
            let mut recall = 0.0;
            let mut map = 0.0;
            for (ranking, rel) in r.rankings.iter().zip(&r.relevant) {
                if ranking.iter().take(k).any(|id| rel.contains(id)) {
                    recall += 1.0;
                }
                map += average_precision_at(ranking, rel, k);
            }
            RetrievalAtK {
                k,
                recall: recall / nq,
                map: map / nq,
            }
        })
        .collect())
}
