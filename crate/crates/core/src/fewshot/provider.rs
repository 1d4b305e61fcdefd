use alloc::borrow::Cow;
use alloc::string::String;
use alloc::vec::Vec;

use super::{ContrastivePair, FewShotError};

/// A sentence-embedding model that can be fine-tuned on contrastive pairs.
///
/// Implementations must be deterministic: the same state and text always
/// produce the same vector, of length [`dimension`](Self::dimension).
pub trait EmbeddingProvider {
    fn model_id(&self) -> &str;

    fn dimension(&self) -> usize;

    /// Input limit in whitespace tokens; longer texts are truncated with
    /// [`truncate_tokens`].
    fn max_input_tokens(&self) -> usize;

    fn fine_tunable(&self) -> bool;

    fn embed(&self, text: &str) -> Result<Vec<f64>, FewShotError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, FewShotError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }

    /// Resets optimizer state before a fine-tuning run.
    fn begin_fine_tune(&mut self) {}

    /// One optimizer step on `batch` under the cosine-similarity loss
    /// `(cos(a, b) - label)^2`. Returns the mean batch loss.
    fn train_step(&mut self, batch: &[&ContrastivePair<'_>], learning_rate: f64) -> Result<f64, FewShotError>;
}

/// Keeps the first 75% and the last 25% of `limit` tokens. Failure details
/// usually sit at the end of a log.
pub fn truncate_tokens(text: &str, limit: usize) -> Cow<'_, str> {
    let count = text.split_whitespace().count();
    if count <= limit {
        return Cow::Borrowed(text);
    }
    let tail = limit / 4;
    let head = limit - tail;
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut out = String::with_capacity(text.len().min(limit * 8));
    for (i, t) in tokens[..head].iter().chain(&tokens[count - tail..]).enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t);
    }
    Cow::Owned(out)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (libm::sqrt(na) * libm::sqrt(nb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_keeps_head_and_tail() {
        let text = "a b c d e f g h i j";
        assert_eq!(truncate_tokens(text, 20), text);
        // limit 8: tail 2, head 6
        assert_eq!(truncate_tokens(text, 8), "a b c d e f i j");
        assert_eq!(truncate_tokens(text, 3), "a b c");
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0, 0.0], &[2.0, 0.0]), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }
}
