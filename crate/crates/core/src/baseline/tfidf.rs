use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{BaselineError, SparseVec};

/// Vocabulary columns are assigned in lexicographic token order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TfidfModel {
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub n_docs: usize,
}

/// Lowercased whitespace tokens.
fn tokens(doc: &str) -> impl Iterator<Item = String> + '_ {
    doc.split_whitespace().map(str::to_lowercase)
}

/// Smoothed idf: `ln((1 + n) / (1 + df)) + 1`.
pub fn tfidf_fit(docs: &[&str]) -> Result<TfidfModel, BaselineError> {
    if docs.len() < 2 {
        return Err(BaselineError::TooFewDocuments(docs.len()));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        let mut seen: Vec<String> = tokens(doc).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let n = docs.len() as f64;
    let mut vocabulary = BTreeMap::new();
    let mut idf = Vec::with_capacity(df.len());
    for (i, (tok, count)) in df.into_iter().enumerate() {
        idf.push(libm::log((1.0 + n) / (1.0 + count as f64)) + 1.0);
        vocabulary.insert(tok, i);
    }
    Ok(TfidfModel { vocabulary, idf, n_docs: docs.len() })
}

impl TfidfModel {
    pub fn n_features(&self) -> usize {
        self.idf.len()
    }

    /// Raw counts times idf, L2-normalised. Unknown tokens are ignored; a
    /// document with no known tokens maps to the empty (zero) vector.
    pub fn transform(&self, doc: &str) -> SparseVec {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in tokens(doc) {
            if let Some(&col) = self.vocabulary.get(&t) {
                *counts.entry(col).or_insert(0.0) += 1.0;
            }
        }
        let mut row: SparseVec = counts.into_iter().map(|(c, tf)| (c, tf * self.idf[c])).collect();
        let norm = libm::sqrt(row.iter().map(|(_, v)| v * v).sum::<f64>());
        if norm > 0.0 {
            for (_, v) in &mut row {
                *v /= norm;
            }
        }
        row
    }
}

pub fn tfidf_transform(model: &TfidfModel, doc: &str) -> SparseVec {
    model.transform(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_document() {
        let m = tfidf_fit(&["a b c", "a b c", "a b c"]).unwrap();
        assert!(m.idf.iter().all(|&v| v == 1.0));
        let row = m.transform("a b c");
        let n: f64 = row.iter().map(|(_, v)| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn common_tokens_weigh_less() {
        let m = tfidf_fit(&["x common", "y common", "z common"]).unwrap();
        let idf = |t: &str| m.idf[m.vocabulary[t]];
        assert!(idf("common") < idf("x"));
    }

    #[test]
    fn hand_computed_toy_corpus() {
        // docs: "a a b", "b c", "c"
        // df: a=1 b=2 c=2 ; n=3
        let m = tfidf_fit(&["a a b", "b c", "c"]).unwrap();
        let ia = libm::log(4.0 / 2.0) + 1.0;
        let ib = libm::log(4.0 / 3.0) + 1.0;
        assert_eq!(m.vocabulary.keys().map(String::as_str).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert!((m.idf[0] - ia).abs() < 1e-15 && (m.idf[1] - ib).abs() < 1e-15 && (m.idf[2] - ib).abs() < 1e-15);
        let r = m.transform("a a b");
        let (x, y) = (2.0 * ia, ib);
        let n = libm::sqrt(x * x + y * y);
        assert_eq!(r.len(), 2);
        assert!((r[0].1 - x / n).abs() < 1e-12 && (r[1].1 - y / n).abs() < 1e-12);
        let r = m.transform("b c");
        assert!((r[0].1 - libm::sqrt(0.5)).abs() < 1e-12);
        assert!(m.transform("").is_empty());
        assert!(m.transform("unseen words").is_empty());
    }

    #[test]
    fn too_small_corpus() {
        assert_eq!(tfidf_fit(&[]), Err(BaselineError::TooFewDocuments(0)));
        assert_eq!(tfidf_fit(&["only"]), Err(BaselineError::TooFewDocuments(1)));
    }
}
