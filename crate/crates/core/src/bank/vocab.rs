use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::text::{normalize_phrase, tokenize};

/// Default number of n-gram candidates kept.
pub const DEFAULT_TOP_N: usize = 5000;

/// Ranked list of lowercase token phrases with per-term caption frequencies.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocabulary {
    terms: Vec<String>,
    doc_freq: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(terms: Vec<String>, doc_freq: Vec<usize>) -> Result<Self> {
        if terms.len() != doc_freq.len() {
            return Err(Error::CountMismatch {
                left: terms.len(),
                right: doc_freq.len(),
            });
        }
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if t.is_empty() || normalize_phrase(t) != *t {
                return Err(Error::InvalidArgument(format!(
                    "vocabulary term `{t}` is not a normalised phrase"
                )));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate term `{t}`")));
            }
        }
        Ok(Self {
            terms,
            doc_freq,
            index,
        })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn doc_freq(&self) -> &[usize] {
        &self.doc_freq
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.index.contains_key(term)
    }

    pub fn freq(&self, term: &str) -> Option<usize> {
        self.index.get(term).map(|&i| self.doc_freq[i])
    }

    /// Longest term length in tokens.
    pub fn max_ngram(&self) -> usize {
        self.terms
            .iter()
            .map(|t| t.split(' ').count())
            .max()
            .unwrap_or(0)
    }

    /// Keeps only terms present in `allow` (phrases are normalised first). Rank order is preserved.
    pub fn filter_allowed<S: AsRef<str>>(&self, allow: &[S]) -> Self {
        let allow: BTreeSet<String> = allow.iter().map(|s| normalize_phrase(s.as_ref())).collect();
        let (terms, freq): (Vec<_>, Vec<_>) = self
            .terms
            .iter()
            .zip(&self.doc_freq)
            .filter(|(t, _)| allow.contains(*t))
            .map(|(t, f)| (t.clone(), *f))
            .unzip();
        Self::new(terms, freq).expect("subset of a valid vocabulary")
    }

    /// Same terms, frequencies replaced (e.g. by bank posting lengths).
    pub fn with_frequencies(&self, freq: impl Fn(&str) -> usize) -> Self {
        let doc_freq = self.terms.iter().map(|t| freq(t)).collect();
        Self::new(self.terms.clone(), doc_freq).expect("same terms")
    }
}

/// Distinct token n-grams (lengths `1..=max_n`) of one text.
pub fn phrase_set(text: &str, max_n: usize) -> BTreeSet<String> {
    let tokens = tokenize(text);
    let mut out = BTreeSet::new();
    for n in 1..=max_n.min(tokens.len()) {
        for w in tokens.windows(n) {
            out.insert(w.join(" "));
        }
    }
    out
}

/// Top-`top_n` token n-grams ranked by caption frequency, then lexicographically.
pub fn extract_vocabulary<S: AsRef<str>>(
    captions: &[S],
    top_n: usize,
    max_ngram: usize,
) -> Result<Vocabulary> {
    if top_n == 0 || max_ngram == 0 {
        return Err(Error::InvalidArgument(
            "top_n and max_ngram must be at least 1".into(),
        ));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for c in captions {
        for p in phrase_set(c.as_ref(), max_ngram) {
            *counts.entry(p).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_n);
    let (terms, freq) = ranked.into_iter().unzip();
    Vocabulary::new(terms, freq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_then_lexicographic() {
        let v = extract_vocabulary(&["a b", "a c"], 1, 1).unwrap();
        assert_eq!(v.terms(), &["a".to_string()]);
        assert_eq!(v.doc_freq(), &[2]);
        let v = extract_vocabulary(&["a b", "a c"], 10, 2).unwrap();
        assert_eq!(v.terms(), &["a", "a b", "a c", "b", "c"]);
        assert_eq!(v.doc_freq(), &[2, 1, 1, 1, 1]);
    }

    #[test]
    fn single_caption_and_errors() {
        let v = extract_vocabulary(&["x"], 10, 3).unwrap();
        assert_eq!(v.terms(), &["x".to_string()]);
        assert!(matches!(
            extract_vocabulary::<&str>(&[], 10, 1),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(extract_vocabulary(&["  "], 10, 1), Err(Error::EmptyCorpus)));
        assert!(extract_vocabulary(&["x"], 0, 1).is_err());
    }

    #[test]
    fn frequency_counts_captions_not_occurrences() {
        let v = extract_vocabulary(&["cell cell cell", "cell"], 5, 1).unwrap();
        assert_eq!(v.freq("cell"), Some(2));
    }

    #[test]
    fn allow_list_filters_and_keeps_rank() {
        let v = extract_vocabulary(&["Nuclear atypia here", "nuclear atypia"], 20, 2).unwrap();
        let f = v.filter_allowed(&["Nuclear  Atypia", "here", "absent"]);
        assert_eq!(f.terms(), &["nuclear atypia", "here"]);
        assert_eq!(v.max_ngram(), 2);
    }

    #[test]
    fn rejects_duplicates() {
        assert!(Vocabulary::new(vec!["a".into(), "a".into()], vec![1, 1]).is_err());
        assert!(Vocabulary::new(vec!["A".into()], vec![1]).is_err());
    }
}
