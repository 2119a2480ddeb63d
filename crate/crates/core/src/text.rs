//! Text normalization and tokenization.

use alloc::string::String;
use alloc::vec::Vec;

use unicode_normalization::UnicodeNormalization;

/// Minimum token length (in chars) kept by [`tokenize`].
pub const MIN_TOKEN_CHARS: usize = 2;

/// Trim and NFC-normalize free text. Case is preserved.
pub fn normalize_text(s: &str) -> String {
    s.trim().nfc().collect()
}

/// Trim, NFC-normalize and case-fold a categorical value.
pub fn normalize_category(s: &str) -> String {
    normalize_text(s).to_lowercase()
}

/// Lowercase, split on non-alphanumeric boundaries and drop short tokens.
pub fn tokenize(s: &str) -> Vec<String> {
    let lowered = s.to_lowercase();
    lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= MIN_TOKEN_CHARS)
        .map(String::from)
        .collect()
}

/// Join non-empty trimmed segments with single spaces.
pub fn join_segments<'a, I>(segments: I) -> String
where
    I: IntoIterator<Item = &'a str>,
{
    let mut out = String::new();
    for seg in segments {
        let seg = seg.trim();
        if seg.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(seg);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn tokenize_splits_and_filters() {
        assert_eq!(
            tokenize("Read a PDF-file, extract_tables v2!"),
            vec!["read", "pdf", "file", "extract", "tables", "v2"]
        );
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("a b c ! ?").is_empty());
    }

    #[test]
    fn category_is_case_folded_and_trimmed() {
        assert_eq!(normalize_category("  Python \n"), "python");
        // Decomposed e + combining acute composes under NFC.
        assert_eq!(normalize_text("Caf\u{0065}\u{0301}"), "Caf\u{00e9}");
    }

    #[test]
    fn join_skips_blank_segments() {
        assert_eq!(join_segments(["S", "", "  ", "x y"]), "S x y");
        assert_eq!(join_segments::<[&str; 0]>([]), "");
    }
}
