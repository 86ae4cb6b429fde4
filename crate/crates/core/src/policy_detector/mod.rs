//! Decides whether a fetched page is an English-language privacy policy.
//!
//! Features are unigram TF-IDF vectors; the model is L2-regularized logistic
//! regression. A page is a policy when the model probability is strictly
//! above 0.5 *and* the text passes a stopword-density English gate.

mod html;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecError};
use crate::logreg::{self, LogisticConfig, LogisticModel, TrainReport};
use crate::textfeat::{fit_tfidf_with, tokenize, TextError, TfidfConfig, Vocabulary};

pub use html::{extract_text, Extracted};

pub const DEFAULT_GATE_THRESHOLD: f64 = 0.08;

const STOPWORDS: &[&str] = &[
    "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are", "as", "at", "be",
    "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has", "have", "having",
    "he", "her", "here", "hers", "him", "his", "how", "if", "in", "into", "is", "it", "its", "itself", "just",
    "may", "me", "might", "more", "most", "must", "my", "no", "nor", "not", "now", "of", "off", "on", "once",
    "only", "or", "other", "our", "ours", "out", "over", "own", "same", "shall", "she", "should", "so", "some",
    "such", "than", "that", "the", "their", "theirs", "them", "then", "there", "these", "they", "this", "those",
    "through", "to", "too", "under", "until", "up", "upon", "us", "very", "was", "we", "were", "what", "when",
    "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// True when at least `threshold` of the tokens are English stopwords.
pub fn english_gate(text: &str, threshold: f64) -> bool {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return false;
    }
    let hits = tokens.iter().filter(|t| is_stopword(t)).count();
    hits as f64 / tokens.len() as f64 >= threshold
}

#[derive(Debug, thiserror::Error)]
pub enum DetectorError {
    #[error("training data must contain both policies and non-policies")]
    SingleClassCorpus,
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub seed: u64,
    pub l2: f64,
    pub min_df: usize,
    pub gate_threshold: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            seed: 0,
            l2: 1.0,
            min_df: 1,
            gate_threshold: DEFAULT_GATE_THRESHOLD,
            max_iter: 1000,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorMeta {
    pub corpus_size: usize,
    pub positives: usize,
    pub seed: u64,
    pub l2: f64,
    pub gate_threshold: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub vocabulary: Vocabulary,
    pub model: LogisticModel,
    pub meta: DetectorMeta,
}

const DETECTOR_MAGIC: [u8; 4] = *b"ATDM";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageVerdict {
    pub is_policy: bool,
    pub probability: f64,
    pub english: bool,
    pub not_html: bool,
}

/// Trains on `(text, is_policy)` pairs. Texts are already-extracted visible
/// text, not HTML.
pub fn train_detector(
    labeled: &[(String, bool)],
    config: &DetectorConfig,
) -> Result<(DetectorModel, TrainReport), DetectorError> {
    let positives = labeled.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == labeled.len() {
        return Err(DetectorError::SingleClassCorpus);
    }
    let docs: Vec<Vec<String>> = labeled.iter().map(|(t, _)| tokenize(t)).collect();
    let vocabulary = fit_tfidf_with(&docs, TfidfConfig { min_df: config.min_df, allow_empty: false })?;
    let xs: Vec<_> = docs.iter().map(|d| vocabulary.transform(d)).collect();
    let ys: Vec<bool> = labeled.iter().map(|(_, y)| *y).collect();
    let lr = LogisticConfig { l2: config.l2, max_iter: config.max_iter, grad_tol: config.grad_tol, ..Default::default() };
    let (model, report) = logreg::train(&xs, &ys, vocabulary.len(), &lr);
    let meta = DetectorMeta {
        corpus_size: labeled.len(),
        positives,
        seed: config.seed,
        l2: config.l2,
        gate_threshold: config.gate_threshold,
        iterations: report.iterations,
        converged: report.converged,
        grad_norm: report.grad_norm,
    };
    Ok((DetectorModel { vocabulary, model, meta }, report))
}

impl DetectorModel {
    pub fn probability(&self, text: &str) -> f64 {
        self.model.predict_proba(&self.vocabulary.transform_text(text))
    }

    pub fn classify_text(&self, text: &str) -> PageVerdict {
        let probability = self.probability(text);
        let english = english_gate(text, self.meta.gate_threshold);
        PageVerdict { is_policy: probability > 0.5 && english, probability, english, not_html: false }
    }

    pub fn save(&self, path: &Path) -> Result<(), DetectorError> {
        Ok(codec::write_file(path, DETECTOR_MAGIC, 1, self)?)
    }

    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        Ok(codec::read_file(path, DETECTOR_MAGIC, 1)?)
    }
}

pub fn classify_page(model: &DetectorModel, raw_html: &[u8]) -> PageVerdict {
    let extracted = extract_text(raw_html);
    let mut verdict = model.classify_text(&extracted.text);
    verdict.not_html = extracted.not_html;
    verdict
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support_pos: usize,
    pub support_neg: usize,
}

impl DetectorMetrics {
    /// Metrics of hard predictions against truth, policy as the positive class.
    pub fn from_predictions(predicted: &[bool], truth: &[bool]) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        DetectorMetrics {
            accuracy: ratio(tp + tn, predicted.len()),
            precision,
            recall,
            f1,
            support_pos: tp + fn_,
            support_neg: tn + fp,
        }
    }
}

pub fn evaluate_detector(model: &DetectorModel, pages: &[(Vec<u8>, bool)]) -> DetectorMetrics {
    let predicted: Vec<bool> = pages.iter().map(|(html, _)| classify_page(model, html).is_policy).collect();
    let truth: Vec<bool> = pages.iter().map(|(_, t)| *t).collect();
    DetectorMetrics::from_predictions(&predicted, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    const POLICY: &str = "This privacy policy explains how we collect and use your personal information. \
        We may share your data with our partners when you use the app.";
    const LANDING: &str = "Download now! Top charts, new games, best deals, five stars, free coins today.";

    #[test]
    fn stopword_list_is_sorted() {
        assert!(STOPWORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn gate_examples() {
        assert!(english_gate(POLICY, DEFAULT_GATE_THRESHOLD));
        assert!(!english_gate("ラーメン 餃子 寿司", DEFAULT_GATE_THRESHOLD));
        assert!(!english_gate("", DEFAULT_GATE_THRESHOLD));
    }

    #[test]
    fn separable_pair_trains_to_perfect_accuracy() {
        let labeled = vec![("privacy policy data collect".to_string(), true), ("games coins stars deals".to_string(), false)];
        let (model, report) = train_detector(&labeled, &DetectorConfig::default()).unwrap();
        assert!(report.converged);
        assert!(model.probability(&labeled[0].0) > 0.5);
        assert!(model.probability(&labeled[1].0) < 0.5);
    }

    #[test]
    fn single_class_is_rejected() {
        let labeled = vec![("a b".to_string(), true), ("c d".to_string(), true)];
        assert!(matches!(train_detector(&labeled, &DetectorConfig::default()), Err(DetectorError::SingleClassCorpus)));
    }

    fn trained() -> DetectorModel {
        let labeled = vec![(POLICY.to_string(), true), (LANDING.to_string(), false)];
        train_detector(&labeled, &DetectorConfig::default()).unwrap().0
    }

    #[test]
    fn zero_model_is_not_a_policy() {
        let mut model = trained();
        model.model = LogisticModel::zeros(model.vocabulary.len());
        let v = classify_page(&model, format!("<p>{POLICY}</p>").as_bytes());
        assert_eq!(v.probability, 0.5);
        assert!(!v.is_policy);
    }

    #[test]
    fn gate_dominates_score() {
        let mut model = trained();
        model.model.bias = 10.0;
        let v = classify_page(&model, "<p>ラーメン 餃子 寿司 privacy</p>".as_bytes());
        assert!(v.probability > 0.99);
        assert!(!v.is_policy);
        let v = classify_page(&model, format!("<html><body><p>{POLICY}</p></body></html>").as_bytes());
        assert!(v.is_policy);
    }

    #[test]
    fn whitespace_does_not_change_probability() {
        let model = trained();
        let a = classify_page(&model, format!("<p>{POLICY}</p>").as_bytes());
        let spaced = POLICY.replace(' ', "  \n\t ");
        let b = classify_page(&model, format!("<p>  {spaced}  </p>").as_bytes());
        assert_eq!(a.probability, b.probability);
    }

    #[test]
    fn metrics_f1_consistency() {
        let m = DetectorMetrics::from_predictions(&[true, true, false, false], &[true, false, true, false]);
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 0.5);
        assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-15);
        assert_eq!((m.support_pos, m.support_neg), (2, 2));
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = trained();
        let path = dir.path().join("m.bin");
        model.save(&path).unwrap();
        let back = DetectorModel::load(&path).unwrap();
        assert_eq!(back.probability(POLICY), model.probability(POLICY));
    }
}
