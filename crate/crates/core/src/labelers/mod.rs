//! One binary classifier per data type, ensemble selection and metrics.

mod bundle;
mod metrics;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{DataType, PolicyCorpus};
use crate::logreg::{self, LogisticConfig, LogisticModel};
use crate::sampler::{SplitExample, SplitSet};
use crate::textfeat::{fit_tfidf_with, tokenize, TextError, TfidfConfig, Vocabulary};

pub use bundle::{load_bundle, read_predictions, save_bundle, write_predictions, BundleManifest, ManifestEntry};
pub use metrics::{compute_metrics, ClassMetrics, Confusion};

pub const DECISION_THRESHOLD: f64 = 0.5;
pub const L2_GRID: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, thiserror::Error)]
pub enum LabelerError {
    #[error("training split for {0} contains a single class")]
    SingleClassData(DataType),
    #[error("unknown architecture {0:?}")]
    UnknownArchitecture(String),
    #[error("truth contains a single class")]
    DegenerateTruth,
    #[error("no model for {0}")]
    MissingDataType(DataType),
    #[error("test split for {0} overlaps its training data")]
    SplitLeakage(DataType),
    #[error("no text for policy {0}")]
    MissingPolicy(String),
    #[error("external {arch} model for {data_type} has no score for {policy_url}")]
    MissingPrediction { arch: String, data_type: DataType, policy_url: String },
    #[error("malformed predictions: {0}")]
    MalformedPredictions(String),
    #[error("malformed bundle: {0}")]
    MalformedBundle(String),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArchitectureId(pub String);

impl ArchitectureId {
    pub fn new(name: impl Into<String>) -> Self {
        ArchitectureId(name.into())
    }

    pub fn logistic() -> Self {
        ArchitectureId::new(LOGISTIC)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ArchitectureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub const LOGISTIC: &str = "logistic-regression";
pub const MLP: &str = "multilayer-perceptron";

/// Architectures from simplest to most complex.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureRoster {
    order: Vec<ArchitectureId>,
}

impl Default for ArchitectureRoster {
    fn default() -> Self {
        ArchitectureRoster { order: vec![ArchitectureId::new(LOGISTIC), ArchitectureId::new(MLP)] }
    }
}

impl ArchitectureRoster {
    /// Duplicates keep their first position.
    pub fn new(order: impl IntoIterator<Item = ArchitectureId>) -> Self {
        let mut out: Vec<ArchitectureId> = Vec::new();
        for a in order {
            if !out.contains(&a) {
                out.push(a);
            }
        }
        ArchitectureRoster { order: out }
    }

    pub fn rank(&self, arch: &ArchitectureId) -> Option<usize> {
        self.order.iter().position(|a| a == arch)
    }

    pub fn architectures(&self) -> &[ArchitectureId] {
        &self.order
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Logistic { vocabulary: Vocabulary, model: LogisticModel },
    /// Scores produced elsewhere, keyed by policy URL.
    External { scores: BTreeMap<String, f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub l2: Option<f64>,
    pub split_checksum: String,
    /// Sorted SHA-256 hex digests of the training policy URLs.
    pub train_fingerprints: Vec<String>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryModel {
    pub arch: ArchitectureId,
    pub data_type: DataType,
    pub kind: ModelKind,
    pub meta: TrainingMeta,
}

pub fn url_fingerprint(url: &str) -> String {
    hex::encode(Sha256::digest(url.as_bytes()))
}

/// SHA-256 over the sorted training URLs.
pub fn split_checksum(examples: &[SplitExample]) -> String {
    let mut urls: Vec<&str> = examples.iter().map(|e| e.policy_url.as_str()).collect();
    urls.sort_unstable();
    let mut h = Sha256::new();
    for u in urls {
        h.update(u.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Policy text by URL.
#[derive(Clone, Debug, Default)]
pub struct TextIndex<'a> {
    texts: HashMap<&'a str, &'a str>,
}

impl<'a> TextIndex<'a> {
    pub fn from_corpus(corpus: &'a PolicyCorpus) -> Self {
        TextIndex { texts: corpus.entries.iter().map(|e| (e.policy_url.as_str(), e.text.as_str())).collect() }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        TextIndex { texts: pairs.into_iter().collect() }
    }

    pub fn get(&self, url: &str) -> Result<&'a str, LabelerError> {
        self.texts.get(url).copied().ok_or_else(|| LabelerError::MissingPolicy(url.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub l2: f64,
    pub min_df: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams { l2: 1.0, min_df: 1, max_iter: 1000, grad_tol: 1e-6 }
    }
}

/// Trains the model for `split.data_type` on its train portion.
pub fn train_binary(
    split: &SplitSet,
    texts: &TextIndex<'_>,
    arch: &ArchitectureId,
    hparams: Hyperparams,
    seed: u64,
) -> Result<BinaryModel, LabelerError> {
    if arch.as_str() != LOGISTIC {
        return Err(LabelerError::UnknownArchitecture(arch.0.clone()));
    }
    let train = &split.train;
    let positives = train.iter().filter(|e| e.label).count();
    if positives == 0 || positives == train.len() {
        return Err(LabelerError::SingleClassData(split.data_type));
    }
    let docs = train.iter().map(|e| texts.get(&e.policy_url).map(tokenize)).collect::<Result<Vec<_>, _>>()?;
    let vocabulary = fit_tfidf_with(&docs, TfidfConfig { min_df: hparams.min_df, allow_empty: true })?;
    let xs: Vec<_> = docs.iter().map(|d| vocabulary.transform(d)).collect();
    let ys: Vec<bool> = train.iter().map(|e| e.label).collect();
    let config = LogisticConfig { l2: hparams.l2, max_iter: hparams.max_iter, grad_tol: hparams.grad_tol, ..Default::default() };
    let (model, report) = logreg::train(&xs, &ys, vocabulary.len(), &config);
    let mut train_fingerprints: Vec<String> = train.iter().map(|e| url_fingerprint(&e.policy_url)).collect();
    train_fingerprints.sort_unstable();
    Ok(BinaryModel {
        arch: arch.clone(),
        data_type: split.data_type,
        kind: ModelKind::Logistic { vocabulary, model },
        meta: TrainingMeta {
            seed,
            l2: Some(hparams.l2),
            split_checksum: split_checksum(train),
            train_fingerprints,
            iterations: report.iterations,
            converged: report.converged,
        },
    })
}

/// Wraps scores from an external model as a [`BinaryModel`].
pub fn external_model(
    arch: ArchitectureId,
    data_type: DataType,
    scores: BTreeMap<String, f64>,
    train: &[SplitExample],
) -> BinaryModel {
    let mut train_fingerprints: Vec<String> = train.iter().map(|e| url_fingerprint(&e.policy_url)).collect();
    train_fingerprints.sort_unstable();
    BinaryModel {
        arch,
        data_type,
        kind: ModelKind::External { scores },
        meta: TrainingMeta {
            seed: 0,
            l2: None,
            split_checksum: split_checksum(train),
            train_fingerprints,
            iterations: 0,
            converged: true,
        },
    }
}

impl BinaryModel {
    /// Probability that the policy discloses collection of this data type.
    pub fn predict_proba(&self, policy_url: &str, text: &str) -> Result<f64, LabelerError> {
        match &self.kind {
            ModelKind::Logistic { vocabulary, model } => Ok(model.predict_proba(&vocabulary.transform_text(text))),
            ModelKind::External { scores } => {
                scores.get(policy_url).map(|p| p.clamp(0.0, 1.0)).ok_or_else(|| LabelerError::MissingPrediction {
                    arch: self.arch.0.clone(),
                    data_type: self.data_type,
                    policy_url: policy_url.to_string(),
                })
            }
        }
    }

    pub fn trained_on(&self, policy_url: &str) -> bool {
        self.meta.train_fingerprints.binary_search(&url_fingerprint(policy_url)).is_ok()
    }

    pub fn evaluate(&self, examples: &[SplitExample], texts: &TextIndex<'_>) -> Result<ClassMetrics, LabelerError> {
        let mut probs = Vec::with_capacity(examples.len());
        for e in examples {
            probs.push(self.predict_proba(&e.policy_url, texts.get(&e.policy_url)?)?);
        }
        let truth: Vec<bool> = examples.iter().map(|e| e.label).collect();
        compute_metrics(&probs, &truth, DECISION_THRESHOLD)
    }
}

/// Probability that a data type is *not* collected.
pub fn not_collected(p: f64) -> f64 {
    1.0 - p
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub model: BinaryModel,
    pub validation: ClassMetrics,
}

/// Trains logistic regression for every value in `grid` and keeps the one
/// with the best validation Macro F1 (earlier grid values win ties).
pub fn tune_logistic(
    split: &SplitSet,
    texts: &TextIndex<'_>,
    grid: &[f64],
    base: Hyperparams,
    seed: u64,
) -> Result<Candidate, LabelerError> {
    let mut best: Option<Candidate> = None;
    for &l2 in grid {
        let model = train_binary(split, texts, &ArchitectureId::logistic(), Hyperparams { l2, ..base }, seed)?;
        let validation = model.evaluate(&split.validation, texts)?;
        if best.as_ref().map_or(true, |b| validation.macro_f1 > b.validation.macro_f1) {
            best = Some(Candidate { model, validation });
        }
    }
    best.ok_or_else(|| LabelerError::MissingDataType(split.data_type))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub models: BTreeMap<DataType, BinaryModel>,
    pub val_macro_f1: BTreeMap<DataType, f64>,
}

/// Per data type, the candidate with the highest validation Macro F1; exact
/// ties go to the simpler architecture, then to the earlier candidate.
pub fn select_ensemble(candidates: Vec<Candidate>, roster: &ArchitectureRoster) -> Result<EnsembleModel, LabelerError> {
    let mut best: BTreeMap<DataType, (usize, Candidate)> = BTreeMap::new();
    for cand in candidates {
        let rank = roster.rank(&cand.model.arch).ok_or_else(|| LabelerError::UnknownArchitecture(cand.model.arch.0.clone()))?;
        let dt = cand.model.data_type;
        let better = match best.get(&dt) {
            None => true,
            Some((r, b)) => {
                cand.validation.macro_f1 > b.validation.macro_f1
                    || (cand.validation.macro_f1 == b.validation.macro_f1 && rank < *r)
            }
        };
        if better {
            best.insert(dt, (rank, cand));
        }
    }
    if let Some(missing) = DataType::ALL.into_iter().find(|d| !best.contains_key(d)) {
        return Err(LabelerError::MissingDataType(missing));
    }
    let val_macro_f1 = best.iter().map(|(d, (_, c))| (*d, c.validation.macro_f1)).collect();
    let models = best.into_iter().map(|(d, (_, c))| (d, c.model)).collect();
    Ok(EnsembleModel { models, val_macro_f1 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedPolicyProfile {
    pub policy_url: String,
    probs: Vec<f64>,
}

impl PredictedPolicyProfile {
    /// Fails unless there is exactly one probability in [0,1] per data type.
    pub fn new(policy_url: impl Into<String>, probs: Vec<f64>) -> Result<Self, LabelerError> {
        if probs.len() != DataType::COUNT {
            return Err(LabelerError::MalformedPredictions(format!("expected {} probabilities, got {}", DataType::COUNT, probs.len())));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(LabelerError::MalformedPredictions(format!("probability {p} outside [0,1]")));
        }
        Ok(PredictedPolicyProfile { policy_url: policy_url.into(), probs })
    }

    pub fn p(&self, d: DataType) -> f64 {
        self.probs[d.index()]
    }

    pub fn p_not(&self, d: DataType) -> f64 {
        not_collected(self.p(d))
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl EnsembleModel {
    pub fn model(&self, d: DataType) -> Result<&BinaryModel, LabelerError> {
        self.models.get(&d).ok_or(LabelerError::MissingDataType(d))
    }

    pub fn predict_profile(&self, policy_url: &str, text: &str) -> Result<PredictedPolicyProfile, LabelerError> {
        let probs = DataType::ALL
            .into_iter()
            .map(|d| self.model(d)?.predict_proba(policy_url, text))
            .collect::<Result<Vec<_>, _>>()?;
        PredictedPolicyProfile::new(policy_url, probs)
    }
}

pub fn predict_profile(ensemble: &EnsembleModel, policy_url: &str, text: &str) -> Result<PredictedPolicyProfile, LabelerError> {
    ensemble.predict_profile(policy_url, text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEvaluation {
    pub per_type: BTreeMap<DataType, ClassMetrics>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
}

/// Test metrics per data type plus their unweighted means.
pub fn evaluate_ensemble(
    ensemble: &EnsembleModel,
    splits: &[SplitSet],
    texts: &TextIndex<'_>,
) -> Result<EnsembleEvaluation, LabelerError> {
    let mut per_type = BTreeMap::new();
    for s in splits {
        let model = ensemble.model(s.data_type)?;
        if s.test.iter().any(|e| model.trained_on(&e.policy_url)) {
            return Err(LabelerError::SplitLeakage(s.data_type));
        }
        per_type.insert(s.data_type, model.evaluate(&s.test, texts)?);
    }
    let n = per_type.len().max(1) as f64;
    let mean_accuracy = per_type.values().map(|m| m.accuracy).sum::<f64>() / n;
    let mean_macro_f1 = per_type.values().map(|m| m.macro_f1).sum::<f64>() / n;
    Ok(EnsembleEvaluation { per_type, mean_accuracy, mean_macro_f1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{SplitMeta, SplitSizes};

    fn ex(url: &str, label: bool) -> SplitExample {
        SplitExample { policy_url: url.into(), label }
    }

    fn toy_split() -> (SplitSet, Vec<(String, String)>) {
        let texts = vec![
            ("a".to_string(), "we collect your name and email".to_string()),
            ("b".to_string(), "your name is stored".to_string()),
            ("c".to_string(), "no personal data at all".to_string()),
            ("d".to_string(), "anonymous usage only".to_string()),
            ("e".to_string(), "name collected for accounts".to_string()),
            ("f".to_string(), "nothing stored anonymous".to_string()),
        ];
        let set = SplitSet {
            data_type: DataType::Name,
            train: vec![ex("a", true), ex("b", true), ex("c", false), ex("d", false)],
            validation: vec![ex("e", true), ex("f", false)],
            test: vec![ex("e", true), ex("f", false)],
            meta: SplitMeta {
                seed: 1,
                eps: 0.5,
                min_samples: 5,
                k: 10,
                sizes: SplitSizes { train: 4, validation: 2, test: 2 },
                n_clusters: 0,
                n_noise: 0,
                positive_centroids: 0,
                negative_centroids: 0,
                balance: BTreeMap::new(),
            },
        };
        (set, texts)
    }

    #[test]
    fn trains_and_memorizes() {
        let (set, texts) = toy_split();
        let index = TextIndex::from_pairs(texts.iter().map(|(u, t)| (u.as_str(), t.as_str())));
        let m = train_binary(&set, &index, &ArchitectureId::logistic(), Hyperparams::default(), 3).unwrap();
        for e in &set.train {
            let p = m.predict_proba(&e.policy_url, index.get(&e.policy_url).unwrap()).unwrap();
            assert_eq!(p > 0.5, e.label);
        }
        let again = train_binary(&set, &index, &ArchitectureId::logistic(), Hyperparams::default(), 3).unwrap();
        assert_eq!(m, again);
        assert!(m.trained_on("a") && !m.trained_on("e"));
        assert!(matches!(
            train_binary(&set, &index, &ArchitectureId::new(MLP), Hyperparams::default(), 3),
            Err(LabelerError::UnknownArchitecture(_))
        ));
    }

    #[test]
    fn single_class_is_rejected() {
        let (mut set, texts) = toy_split();
        set.train.retain(|e| e.label);
        let index = TextIndex::from_pairs(texts.iter().map(|(u, t)| (u.as_str(), t.as_str())));
        assert!(matches!(
            train_binary(&set, &index, &ArchitectureId::logistic(), Hyperparams::default(), 0),
            Err(LabelerError::SingleClassData(DataType::Name))
        ));
    }

    fn metrics(f: f64) -> ClassMetrics {
        ClassMetrics {
            accuracy_neg: f,
            accuracy_pos: f,
            precision_neg: f,
            precision_pos: f,
            recall_neg: f,
            recall_pos: f,
            f1_neg: f,
            f1_pos: f,
            macro_f1: f,
            accuracy: f,
            support_neg: 1,
            support_pos: 1,
        }
    }

    fn candidates(f_lr: f64, f_mlp: f64) -> Vec<Candidate> {
        let mut out = Vec::new();
        for d in DataType::ALL {
            for (arch, f) in [(LOGISTIC, f_lr), (MLP, f_mlp)] {
                out.push(Candidate {
                    model: external_model(ArchitectureId::new(arch), d, BTreeMap::new(), &[]),
                    validation: metrics(f),
                });
            }
        }
        out
    }

    #[test]
    fn selection_rules() {
        let roster = ArchitectureRoster::default();
        let e = select_ensemble(candidates(0.90, 0.90), &roster).unwrap();
        assert!(e.models.values().all(|m| m.arch.as_str() == LOGISTIC));
        let mut reversed = candidates(0.90, 0.90);
        reversed.reverse();
        assert_eq!(select_ensemble(reversed, &roster).unwrap(), e);
        let e = select_ensemble(candidates(0.88, 0.91), &roster).unwrap();
        assert!(e.models.values().all(|m| m.arch.as_str() == MLP));
        assert_eq!(e.models.len(), 32);
        let mut partial = candidates(0.5, 0.5);
        partial.retain(|c| c.model.data_type != DataType::Health);
        assert!(matches!(select_ensemble(partial, &roster), Err(LabelerError::MissingDataType(DataType::Health))));
    }

    #[test]
    fn leakage_is_detected() {
        let (mut set, texts) = toy_split();
        let index = TextIndex::from_pairs(texts.iter().map(|(u, t)| (u.as_str(), t.as_str())));
        let model = train_binary(&set, &index, &ArchitectureId::logistic(), Hyperparams::default(), 0).unwrap();
        let mut models = BTreeMap::new();
        models.insert(DataType::Name, model);
        let ensemble = EnsembleModel { models, val_macro_f1: BTreeMap::new() };
        assert!(evaluate_ensemble(&ensemble, std::slice::from_ref(&set), &index).is_ok());
        set.test.push(ex("a", true));
        assert!(matches!(
            evaluate_ensemble(&ensemble, &[set], &index),
            Err(LabelerError::SplitLeakage(DataType::Name))
        ));
    }

    #[test]
    fn profile_validation() {
        assert!(PredictedPolicyProfile::new("u", vec![0.5; 31]).is_err());
        assert!(PredictedPolicyProfile::new("u", vec![1.5; 32]).is_err());
        let p = PredictedPolicyProfile::new("u", vec![0.1; 32]).unwrap();
        assert_eq!(p.p(DataType::Name) + p.p_not(DataType::Name), 1.0);
    }
}
