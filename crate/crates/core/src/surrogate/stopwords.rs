//! Bundled stop-word list.

/// Function words excluded from keyword selection and candidate sets.
/// Sorted for binary search.
pub static STOP_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an",
    "and", "any", "are", "as", "at", "be", "been", "before", "behind",
    "being", "below", "beside", "between", "both", "but", "by", "can",
    "could", "did", "do", "does", "doing", "down", "during", "each", "few",
    "for", "from", "further", "had", "has", "have", "having", "he", "her",
    "here", "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it",
    "its", "just", "me", "more", "most", "my", "near", "no", "nor", "not",
    "now", "of", "off", "on", "once", "only", "or", "other", "our", "out",
    "over", "own", "same", "she", "should", "so", "some", "such", "than",
    "that", "the", "their", "them", "then", "there", "these", "they", "this",
    "those", "through", "to", "too", "under", "until", "up", "upon", "us",
    "very", "was", "we", "were", "what", "when", "where", "which", "while",
    "who", "whom", "why", "will", "with", "would", "you", "your",
];

/// True when the word is in the stop-word list.
pub fn is_stop_word(word: &str) -> bool {
    STOP_WORDS.binary_search(&word).is_ok()
}

/// True for stop words and for tokens with no alphanumeric content
/// (punctuation tokens).
pub fn is_stop_token(token: &str) -> bool {
    is_stop_word(token) || !token.chars().any(|c| c.is_alphanumeric())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_is_sorted_and_deduplicated() {
        for w in STOP_WORDS.windows(2) {
            assert!(w[0] < w[1], "{:?} out of order", w);
        }
    }

    #[test]
    fn common_function_words_are_stop_words() {
        for w in ["a", "on", "the", "is", "with"] {
            assert!(is_stop_word(w), "{w} should be a stop word");
        }
        assert!(!is_stop_word("cat"));
    }

    #[test]
    fn punctuation_is_a_stop_token() {
        assert!(is_stop_token("."));
        assert!(is_stop_token(","));
        assert!(is_stop_token("a"));
        assert!(!is_stop_token("dog"));
        assert!(!is_stop_token("3"));
    }
}
