//! Tokenization, TF-IDF weighting and LSA.

mod lsa;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecError};

pub use lsa::{fit_lsa, LsaProjection, RankDeficiency};

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("cannot fit on an empty corpus")]
    EmptyCorpus,
    #[error("no term reaches min_df = {min_df}")]
    EmptyVocabulary { min_df: usize },
    #[error("need at least {k} rows for {k} components, got {rows}")]
    TooFewRows { rows: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Lowercases, splits on anything that is not alphanumeric and drops
/// tokens shorter than two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().nth(1).is_some())
        .map(str::to_lowercase)
        .collect()
}

/// Fitted TF-IDF vocabulary. Terms are sorted lexicographically and their
/// position is the column index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    terms: Vec<String>,
    df: Vec<u32>,
    n_docs: usize,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    terms: Vec<String>,
    df: Vec<u32>,
    n_docs: usize,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Vocabulary::from_parts(r.terms, r.df, r.n_docs)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr { terms: v.terms, df: v.df, n_docs: v.n_docs }
    }
}

impl Vocabulary {
    fn from_parts(terms: Vec<String>, df: Vec<u32>, n_docs: usize) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { terms, df, n_docs, index }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).map(|&i| i as usize)
    }

    pub fn df(&self, term: &str) -> Option<u32> {
        self.index_of(term).map(|i| self.df[i])
    }

    /// Smoothed inverse document frequency, `ln((1 + n) / (1 + df)) + 1`.
    pub fn idf(&self, column: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + f64::from(self.df[column]))).ln() + 1.0
    }

    /// L2-normalized TF-IDF vector of a tokenized document. Unknown tokens
    /// are ignored; a document with no known tokens maps to the zero vector.
    pub fn transform<S: AsRef<str>>(&self, doc: &[S]) -> SparseVector {
        let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
        for tok in doc {
            if let Some(&i) = self.index.get(tok.as_ref()) {
                *tf.entry(i).or_default() += 1;
            }
        }
        let mut entries: Vec<(u32, f64)> =
            tf.into_iter().map(|(i, c)| (i, f64::from(c) * self.idf(i as usize))).collect();
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut entries {
                *w /= norm;
            }
        }
        SparseVector { dim: self.len(), entries }
    }

    pub fn transform_text(&self, text: &str) -> SparseVector {
        self.transform(&tokenize(text))
    }

    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        Ok(codec::write_file(path, VOCAB_MAGIC, 1, self)?)
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        Ok(codec::read_file(path, VOCAB_MAGIC, 1)?)
    }
}

const VOCAB_MAGIC: [u8; 4] = *b"ATVO";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TfidfConfig {
    pub min_df: usize,
    /// Return an empty vocabulary instead of [`TextError::EmptyVocabulary`].
    pub allow_empty: bool,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        TfidfConfig { min_df: 2, allow_empty: false }
    }
}

pub fn fit_tfidf<S: AsRef<str>>(docs: &[Vec<S>], min_df: usize) -> Result<Vocabulary, TextError> {
    fit_tfidf_with(docs, TfidfConfig { min_df, allow_empty: false })
}

pub fn fit_tfidf_with<S: AsRef<str>>(docs: &[Vec<S>], config: TfidfConfig) -> Result<Vocabulary, TextError> {
    if docs.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let mut df: BTreeMap<&str, u32> = BTreeMap::new();
    for doc in docs {
        let mut seen: Vec<&str> = doc.iter().map(AsRef::as_ref).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let min_df = config.min_df.max(1) as u32;
    let (terms, dfs): (Vec<String>, Vec<u32>) =
        df.into_iter().filter(|(_, c)| *c >= min_df).map(|(t, c)| (t.to_string(), c)).unzip();
    if terms.is_empty() && !config.allow_empty {
        return Err(TextError::EmptyVocabulary { min_df: config.min_df });
    }
    Ok(Vocabulary::from_parts(terms, dfs, docs.len()))
}

/// Sparse row with strictly increasing column indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    /// Builds a vector from arbitrary (index, weight) pairs; duplicates are
    /// summed and zeros dropped.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (usize, f64)>) -> Result<Self, TextError> {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for (i, w) in pairs {
            if i >= dim {
                return Err(TextError::DimensionMismatch { expected: dim, found: i + 1 });
            }
            *acc.entry(i as u32).or_default() += w;
        }
        Ok(SparseVector { dim, entries: acc.into_iter().filter(|(_, w)| *w != 0.0).collect() })
    }

    pub fn from_dense(values: &[f64]) -> Self {
        SparseVector {
            dim: values.len(),
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, w)| (i as u32, *w))
                .collect(),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        SparseVector { dim, entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|&(i, w)| (i as usize, w))
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, w)| w * dense[i as usize]).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, w) in &self.entries {
            out[i as usize] = w;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("We collect your Name."), toks(&["we", "collect", "your", "name"]));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("GPS/location-data"), toks(&["gps", "location", "data"]));
        assert_eq!(tokenize("a I to"), toks(&["to"]));
    }

    #[test]
    fn df_filtering() {
        let docs = vec![toks(&["a", "b"]), toks(&["b", "c"])];
        let v = fit_tfidf(&docs, 2).unwrap();
        assert_eq!(v.terms(), &["b".to_string()]);
        let v = fit_tfidf(&[toks(&["a"])], 1).unwrap();
        assert_eq!(v.df("a"), Some(1));
        assert!(matches!(fit_tfidf(&docs, 3), Err(TextError::EmptyVocabulary { min_df: 3 })));
        let empty = fit_tfidf_with(&docs, TfidfConfig { min_df: 3, allow_empty: true }).unwrap();
        assert!(empty.is_empty());
        assert!(matches!(fit_tfidf::<String>(&[], 1), Err(TextError::EmptyCorpus)));
    }

    #[test]
    fn vocabulary_sorted_and_dense() {
        let docs = vec![toks(&["zeta", "alpha", "mid"]), toks(&["alpha"])];
        let v = fit_tfidf(&docs, 1).unwrap();
        assert_eq!(v.terms(), &toks(&["alpha", "mid", "zeta"])[..]);
        for (i, t) in v.terms().iter().enumerate() {
            assert_eq!(v.index_of(t), Some(i));
        }
    }

    #[test]
    fn transform_edge_cases() {
        let docs = vec![toks(&["cat", "dog"]), toks(&["dog", "eel"]), toks(&["cat", "cat", "eel"])];
        let v = fit_tfidf(&docs, 1).unwrap();
        let empty: Vec<String> = vec![];
        assert!(v.transform(&empty).is_zero());
        assert!(v.transform(&toks(&["unknown"])).is_zero());
        let single = v.transform(&toks(&["dog", "dog"]));
        assert_eq!(single.iter().collect::<Vec<_>>(), vec![(1, 1.0)]);
    }

    #[test]
    fn transform_matches_hand_computation() {
        // n = 3; df(cat) = 2, df(dog) = 2, df(eel) = 2, df(fox) = 1
        let docs = vec![toks(&["cat", "dog", "fox"]), toks(&["dog", "eel"]), toks(&["cat", "cat", "eel"])];
        let v = fit_tfidf(&docs, 1).unwrap();
        let idf2 = (4.0f64 / 3.0).ln() + 1.0;
        let idf1 = (4.0f64 / 2.0).ln() + 1.0;
        // doc: cat x2, fox x1, dog x3
        let raw = [2.0 * idf2, 3.0 * idf2, 1.0 * idf1];
        let norm = raw.iter().map(|w| w * w).sum::<f64>().sqrt();
        let got = v.transform(&toks(&["cat", "fox", "dog", "cat", "dog", "dog"]));
        let want = [(0usize, raw[0] / norm), (1, raw[1] / norm), (3, raw[2] / norm)];
        let got: Vec<_> = got.iter().collect();
        assert_eq!(got.len(), 3);
        for ((gi, gw), (wi, ww)) in got.iter().zip(want.iter()) {
            assert_eq!(gi, wi);
            assert!((gw - ww).abs() < 1e-12);
        }
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = fit_tfidf(&[toks(&["x", "yy"]), toks(&["yy", "zz"])], 1).unwrap();
        let path = dir.path().join("v.bin");
        v.save(&path).unwrap();
        let back = Vocabulary::load(&path).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.index_of("zz"), Some(2));
    }

    proptest! {
        #[test]
        fn nonempty_outputs_are_unit_norm(docs in prop::collection::vec(prop::collection::vec("[a-e]{2}", 1..12), 1..8),
                                          query in prop::collection::vec("[a-e]{2}", 0..20)) {
            let v = fit_tfidf_with(&docs, TfidfConfig { min_df: 1, allow_empty: true }).unwrap();
            let x = v.transform(&query);
            if !x.is_zero() {
                prop_assert!((x.norm() - 1.0).abs() < 1e-9);
            }
            let idx: Vec<_> = x.iter().map(|(i, _)| i).collect();
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            // determinism
            let v2 = fit_tfidf_with(&docs, TfidfConfig { min_df: 1, allow_empty: true }).unwrap();
            prop_assert_eq!(&v, &v2);
            prop_assert_eq!(x, v2.transform(&query));
        }
    }
}
