use std::collections::BTreeMap;

use crate::bank::vocab::{phrase_set, Vocabulary};
use crate::error::{Error, Result};

/// Term → strictly ascending list of caption ids containing the term as a whole-token phrase.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<usize>>,
}

impl InvertedIndex {
    pub fn from_postings(postings: BTreeMap<String, Vec<usize>>, m: usize) -> Result<Self> {
        for (term, ids) in &postings {
            if ids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::ShapeMismatch(format!(
                    "posting list for `{term}` is not strictly ascending"
                )));
            }
            if let Some(&bad) = ids.iter().find(|&&id| id >= m) {
                return Err(Error::ShapeMismatch(format!(
                    "posting id {bad} for `{term}` exceeds bank size {m}"
                )));
            }
        }
        Ok(Self { postings })
    }

    pub fn postings(&self, term: &str) -> Option<&[usize]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }

    pub fn as_map(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.postings
    }
}

/// Scans every caption once, recording which vocabulary phrases it contains.
/// Terms that occur nowhere keep an empty posting list.
pub fn build_inverted_index<S: AsRef<str>>(
    captions: &[S],
    vocab: &Vocabulary,
) -> Result<InvertedIndex> {
    if vocab.is_empty() {
        return Err(Error::InvalidArgument("vocabulary is empty".into()));
    }
    let max_n = vocab.max_ngram();
    let mut postings: BTreeMap<String, Vec<usize>> =
        vocab.terms().iter().map(|t| (t.clone(), Vec::new())).collect();
    for (i, caption) in captions.iter().enumerate() {
        for phrase in phrase_set(caption.as_ref(), max_n) {
            if let Some(list) = postings.get_mut(&phrase) {
                list.push(i);
            }
        }
    }
    InvertedIndex::from_postings(postings, captions.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;
    use proptest::prelude::*;

    fn vocab(terms: &[&str]) -> Vocabulary {
        Vocabulary::new(
            terms.iter().map(|s| s.to_string()).collect(),
            vec![0; terms.len()],
        )
        .unwrap()
    }

    #[test]
    fn postings_examples() {
        let caps = ["mitotic figures seen", "no atypia", "rare mitotic figures"];
        let idx = build_inverted_index(&caps, &vocab(&["mitotic figures", "necrosis"])).unwrap();
        assert_eq!(idx.postings("mitotic figures"), Some(&[0usize, 2][..]));
        assert_eq!(idx.postings("necrosis"), Some(&[][..]));
    }

    #[test]
    fn case_folding_and_whole_tokens() {
        let caps = ["Marked Nuclear Atypia.", "stroma only"];
        let idx = build_inverted_index(&caps, &vocab(&["nuclear atypia", "oma"])).unwrap();
        assert_eq!(idx.postings("nuclear atypia"), Some(&[0usize][..]));
        assert_eq!(idx.postings("oma"), Some(&[][..]));
    }

    #[test]
    fn rejects_bad_postings() {
        let mut p = BTreeMap::new();
        p.insert("a".to_string(), vec![2, 1]);
        assert!(InvertedIndex::from_postings(p.clone(), 5).is_err());
        p.insert("a".to_string(), vec![1, 7]);
        assert!(InvertedIndex::from_postings(p, 5).is_err());
        assert!(build_inverted_index(&["x"], &Vocabulary::default()).is_err());
    }

    /// Naive oracle: slide each term over each caption's token list.
    fn naive_contains(caption: &str, term: &str) -> bool {
        let toks = tokenize(caption);
        let t: Vec<&str> = term.split(' ').collect();
        toks.windows(t.len()).any(|w| w.iter().zip(&t).all(|(a, b)| a == b))
    }

    proptest! {
        #[test]
        fn postings_equal_naive_scan(
            caps in prop::collection::vec(
                prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "E"]), 0..6)
                    .prop_map(|w| w.join(" ")),
                1..15),
        ) {
            let v = vocab(&["a", "b c", "a b", "d e", "c", "e a b"]);
            let idx = build_inverted_index(&caps, &v).unwrap();
            for term in v.terms() {
                let expected: Vec<usize> = (0..caps.len()).filter(|&i| naive_contains(&caps[i], term)).collect();
                prop_assert_eq!(idx.postings(term).unwrap(), &expected[..]);
            }
        }
    }
}
