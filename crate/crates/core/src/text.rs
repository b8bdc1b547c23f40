//! Tokenisation shared by the hash-text encoder, vocabulary extraction,
//! inverted-index parsing, and keyword matching.

/// Lowercased tokens, split on Unicode whitespace and punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Canonical form of a phrase: its tokens joined by single spaces.
pub fn normalize_phrase(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Character n-grams of one token. Tokens no longer than `n` yield themselves.
pub fn char_ngrams(token: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = token.chars().collect();
    if chars.len() <= n {
        return vec![token.to_string()];
    }
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_and_folds() {
        assert_eq!(
            tokenize("Nuclear Atypia, high-grade!  (G3)"),
            vec!["nuclear", "atypia", "high", "grade", "g3"]
        );
        assert!(tokenize("  ,;  ").is_empty());
        assert_eq!(normalize_phrase(" Nuclear   ATYPIA "), "nuclear atypia");
    }

    #[test]
    fn ngrams() {
        assert_eq!(char_ngrams("cell", 3), vec!["cel", "ell"]);
        assert_eq!(char_ngrams("ab", 3), vec!["ab"]);
        assert_eq!(char_ngrams("né", 3), vec!["né"]);
    }
}
