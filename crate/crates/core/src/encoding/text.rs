//! Signed feature hashing for condition text and text column values.

use crate::hash::fnv1a;

/// Lower-cased alphanumeric tokens with quoted literals and numeric tokens removed.
pub fn tokenize(s: &str) -> Vec<String> {
    let mut unquoted = String::with_capacity(s.len());
    let mut in_quote = false;
    for c in s.chars() {
        if c == '\'' {
            in_quote = !in_quote;
            unquoted.push(' ');
        } else if !in_quote {
            unquoted.push(c);
        }
    }
    unquoted
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter(|t| !t.chars().next().is_some_and(|c| c.is_ascii_digit()))
        .map(str::to_lowercase)
        .collect()
}

/// Hashes each token to a signed slot of a `dim`-wide vector and L2-normalizes
/// the sum. No tokens gives the zero vector.
pub fn embed_text(s: &str, dim: usize) -> Vec<f64> {
    assert!(dim >= 1, "embedding dimension must be positive");
    let mut v = vec![0.0; dim];
    for tok in tokenize(s) {
        let h = fnv1a(tok.as_bytes());
        let idx = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}
