use std::collections::HashSet;
use std::sync::OnceLock;

/// The bundled English stopword list, one word per line.
pub const ENGLISH_LIST: &str = include_str!("stopwords_en.txt");

pub fn english() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        ENGLISH_LIST
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect()
    })
}

pub fn is_stopword(word: &str) -> bool {
    english().contains(word)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_list_has_127_unique_words() {
        let lines: Vec<&str> = ENGLISH_LIST.lines().filter(|l| !l.is_empty()).collect();
        assert_eq!(lines.len(), 127);
        assert_eq!(english().len(), 127);
        assert!(is_stopword("the"));
        assert!(!is_stopword("excellent"));
    }
}
