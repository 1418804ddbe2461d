//! Content-word classification backed by the shipped stopword list.

use std::collections::BTreeSet;
use std::sync::OnceLock;

const STOPWORDS: &str = include_str!("../data/stopwords.txt");

pub fn stopwords() -> &'static BTreeSet<&'static str> {
    static SET: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

pub fn is_punctuation(word: &str) -> bool {
    !word.is_empty() && word.chars().all(|c| c.is_ascii_punctuation())
}

pub fn is_content_word(word: &str) -> bool {
    !word.is_empty() && !is_punctuation(word) && !stopwords().contains(word)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_has_forty_entries() {
        assert_eq!(stopwords().len(), 40);
    }

    #[test]
    fn classification() {
        assert!(!is_content_word("the"));
        assert!(!is_content_word(","));
        assert!(!is_content_word("..."));
        assert!(is_content_word("w042"));
        assert!(is_content_word("harbor"));
    }
}
