//! String normalization shared by the perception, fusion, pruning and
//! evaluation stages.

use std::collections::BTreeSet;

use unicode_normalization::UnicodeNormalization;

/// NFC-normalize and trim. Predicates are stored this way, otherwise verbatim.
pub fn normalize_predicate(s: &str) -> String {
    s.nfc().collect::<String>().trim().to_string()
}

/// Canonical form for label comparison: NFC, lowercase, internal whitespace
/// collapsed to single spaces.
pub fn normalize_label(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    nfc.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercase alphanumeric tokens.
pub fn tokens(s: &str) -> BTreeSet<String> {
    let nfc: String = s.nfc().collect();
    nfc.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Jaccard overlap of the token sets of two labels.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let ta = tokens(a);
    let tb = tokens(b);
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let inter = ta.intersection(&tb).count() as f64;
    let union = ta.union(&tb).count() as f64;
    inter / union
}
