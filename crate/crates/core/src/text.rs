//! String normalization shared by cleaning, answer matching and tokenization.

/// Trims and collapses every run of internal whitespace into one space.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Casefolded, trimmed, whitespace-collapsed form used as a comparison key
/// for answers and for duplicate question detection.
pub fn normalize_key(s: &str) -> String {
    collapse_whitespace(s).to_lowercase()
}
