use std::collections::HashSet;

/// Consecutive repeats of one token that make an output degenerate.
pub const MAX_TOKEN_RUN: usize = 5;
/// Character-trigram repetition ratio above which an output is degenerate.
pub const MAX_REPETITION_RATIO: f64 = 0.9;

/// `1 - distinct/total` over character trigrams; 0 for strings shorter than
/// three characters.
pub fn repetition_ratio(text: &str) -> f64 {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() < 3 {
        return 0.0;
    }
    let grams: Vec<&[char]> = chars.windows(3).collect();
    let distinct: HashSet<&[char]> = grams.iter().copied().collect();
    1.0 - distinct.len() as f64 / grams.len() as f64
}

fn longest_token_run(text: &str) -> usize {
    let mut best = 0;
    let mut run = 0;
    let mut prev: Option<&str> = None;
    for tok in text.split_whitespace() {
        run = if prev == Some(tok) { run + 1 } else { 1 };
        best = best.max(run);
        prev = Some(tok);
    }
    best
}

/// Empty output, a token repeated [`MAX_TOKEN_RUN`] times in a row, or a
/// trigram repetition ratio above [`MAX_REPETITION_RATIO`].
pub fn is_degenerate(prediction: &str) -> bool {
    let p = prediction.trim();
    p.is_empty() || longest_token_run(p) >= MAX_TOKEN_RUN || repetition_ratio(p) > MAX_REPETITION_RATIO
}

/// True when more than half of `predictions` are degenerate.
pub fn detect_nonsense<S: AsRef<str>>(predictions: &[S]) -> bool {
    let bad = predictions.iter().filter(|p| is_degenerate(p.as_ref())).count();
    2 * bad > predictions.len()
}
