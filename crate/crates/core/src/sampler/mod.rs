//! Noise-reducing importance sampling.
//!
//! Policies are embedded with TF-IDF followed by LSA, clustered with DBSCAN,
//! and each cluster is labelled for one data type with a two-proportion
//! z-test. Training examples are then drawn near the centroids of the
//! significant clusters of their own class.

mod dbscan;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DataType, PolicyCorpus};
use crate::special::normal_two_tailed;
use crate::textfeat::{fit_lsa, fit_tfidf_with, tokenize, LsaProjection, TextError, TfidfConfig, Vocabulary};

pub use dbscan::{dbscan, squared_distance, ClusterAssignment, ClusterLabel};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("cluster has no labelled points")]
    EmptyCluster,
    #[error("insufficient pool: needed {needed}, available {available}")]
    InsufficientPool { needed: usize, available: usize },
    #[error("invalid sampler parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed split line {line}: {reason}")]
    MalformedSplit { line: usize, reason: String },
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    pub p_value: f64,
}

/// Compares the positive and negative proportions inside one cluster with a
/// pooled proportion of one half.
pub fn two_proportion_z(n_pos: usize, n_neg: usize) -> Result<ZTest, SamplerError> {
    let n = n_pos + n_neg;
    if n == 0 {
        return Err(SamplerError::EmptyCluster);
    }
    let nf = n as f64;
    let (p1, p2) = (n_pos as f64 / nf, n_neg as f64 / nf);
    let z = (p1 - p2) / (0.25 * (2.0 / nf)).sqrt();
    Ok(ZTest { z, p_value: normal_two_tailed(z) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClusterClass {
    Positive,
    Negative,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterVerdict {
    pub cluster: usize,
    pub verdict: ClusterClass,
    pub z: f64,
    pub p_value: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// One verdict per cluster; noise points are ignored.
pub fn label_clusters(assignment: &ClusterAssignment, labels: &[bool]) -> Vec<ClusterVerdict> {
    assert_eq!(assignment.labels.len(), labels.len(), "assignment and labels must align");
    let mut counts = vec![(0usize, 0usize); assignment.n_clusters];
    for (l, &y) in assignment.labels.iter().zip(labels) {
        if let Some(c) = l.cluster() {
            if y {
                counts[c].0 += 1;
            } else {
                counts[c].1 += 1;
            }
        }
    }
    counts
        .into_iter()
        .enumerate()
        .filter(|(_, (p, n))| p + n > 0)
        .map(|(cluster, (n_pos, n_neg))| {
            let t = two_proportion_z(n_pos, n_neg).expect("non-empty cluster");
            let verdict = if t.p_value >= ALPHA {
                ClusterClass::Inconclusive
            } else if n_pos > n_neg {
                ClusterClass::Positive
            } else {
                ClusterClass::Negative
            };
            ClusterVerdict { cluster, verdict, z: t.z, p_value: t.p_value, n_pos, n_neg }
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCentroids {
    pub positive: Vec<Vec<f64>>,
    pub negative: Vec<Vec<f64>>,
}

impl ClassCentroids {
    pub fn of(&self, positive: bool) -> &[Vec<f64>] {
        if positive {
            &self.positive
        } else {
            &self.negative
        }
    }
}

/// Mean of the member points of every significant cluster, grouped by class.
pub fn centroids(points: &[Vec<f64>], assignment: &ClusterAssignment, verdicts: &[ClusterVerdict]) -> ClassCentroids {
    let mut out = ClassCentroids::default();
    for v in verdicts {
        let target = match v.verdict {
            ClusterClass::Positive => &mut out.positive,
            ClusterClass::Negative => &mut out.negative,
            ClusterClass::Inconclusive => continue,
        };
        let dim = points.first().map_or(0, Vec::len);
        let mut sum = vec![0.0; dim];
        let mut n = 0usize;
        for i in assignment.members(v.cluster) {
            for (s, x) in sum.iter_mut().zip(&points[i]) {
                *s += x;
            }
            n += 1;
        }
        if n > 0 {
            sum.iter_mut().for_each(|s| *s /= n as f64);
            target.push(sum);
        }
    }
    out
}

/// Seeded simple random sample of `n_target / 2` pool members.
pub fn random_sample(pool: &[usize], n_target: usize, seed: u64) -> Result<Vec<usize>, SamplerError> {
    let half = n_target / 2;
    if pool.len() < half {
        return Err(SamplerError::InsufficientPool { needed: half, available: pool.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(pool.choose_multiple(&mut rng, half).copied().collect())
}

/// Selects `n_target / 2` members of `pool` (indices into `points`) close to
/// `class_centroids`.
///
/// `n_target` candidates are drawn from the pool with replacement; duplicates
/// collapse, and if fewer than `n_target / 2` distinct candidates remain the
/// set is topped up from the rest of the pool in shuffled order. Each
/// centroid then takes its quota of nearest unselected candidates (ties by
/// point index), and any rounding remainder goes to the candidates nearest
/// to any centroid. Without centroids this is [`random_sample`].
pub fn importance_sample(
    points: &[Vec<f64>],
    pool: &[usize],
    class_centroids: &[Vec<f64>],
    n_target: usize,
    seed: u64,
) -> Result<Vec<usize>, SamplerError> {
    let half = n_target / 2;
    if pool.len() < half {
        return Err(SamplerError::InsufficientPool { needed: half, available: pool.len() });
    }
    if class_centroids.is_empty() {
        return random_sample(pool, n_target, seed);
    }
    if half == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    for _ in 0..n_target {
        seen.insert(pool[rng.gen_range(0..pool.len())]);
    }
    if seen.len() < half {
        let mut rest: Vec<usize> = pool.iter().copied().filter(|i| !seen.contains(i)).collect();
        rest.shuffle(&mut rng);
        let missing = half - seen.len();
        seen.extend(rest.into_iter().take(missing));
    }
    let candidates: Vec<usize> = seen.into_iter().collect();

    let c = class_centroids.len();
    let quota = (2 * half + c) / (2 * c);
    let mut taken = vec![false; candidates.len()];
    let mut selected = Vec::with_capacity(half);
    for centroid in class_centroids {
        let want = quota.min(half - selected.len());
        if want == 0 {
            break;
        }
        let mut order: Vec<(f64, usize, usize)> = candidates
            .iter()
            .enumerate()
            .filter(|(slot, _)| !taken[*slot])
            .map(|(slot, &i)| (squared_distance(&points[i], centroid), i, slot))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, i, slot) in order.iter().take(want) {
            taken[slot] = true;
            selected.push(i);
        }
    }
    if selected.len() < half {
        let mut order: Vec<(f64, usize, usize)> = candidates
            .iter()
            .enumerate()
            .filter(|(slot, _)| !taken[*slot])
            .map(|(slot, &i)| {
                let d = class_centroids.iter().map(|c| squared_distance(&points[i], c)).fold(f64::INFINITY, f64::min);
                (d, i, slot)
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let missing = half - selected.len();
        selected.extend(order.iter().take(missing).map(|&(_, i, _)| i));
    }
    Ok(selected)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerParams {
    pub eps: f64,
    pub min_samples: usize,
    pub k: usize,
    pub min_df: usize,
}

impl Default for SamplerParams {
    fn default() -> Self {
        SamplerParams { eps: 0.5, min_samples: 5, k: 10, min_df: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { train: 1000, validation: 150, test: 150 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Test,
    Validation,
    Train,
}

impl SplitKind {
    pub const ORDER: [SplitKind; 3] = [SplitKind::Test, SplitKind::Validation, SplitKind::Train];

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Test => "test",
            SplitKind::Validation => "validation",
            SplitKind::Train => "train",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitExample {
    pub policy_url: String,
    pub label: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub seed: u64,
    pub eps: f64,
    pub min_samples: usize,
    pub k: usize,
    pub sizes: SplitSizes,
    pub n_clusters: usize,
    pub n_noise: usize,
    pub positive_centroids: usize,
    pub negative_centroids: usize,
    pub balance: BTreeMap<SplitKind, ClassBalance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub data_type: DataType,
    pub train: Vec<SplitExample>,
    pub validation: Vec<SplitExample>,
    pub test: Vec<SplitExample>,
    pub meta: SplitMeta,
}

impl SplitSet {
    pub fn split(&self, kind: SplitKind) -> &[SplitExample] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Test => &self.test,
        }
    }

    fn split_mut(&mut self, kind: SplitKind) -> &mut Vec<SplitExample> {
        match kind {
            SplitKind::Train => &mut self.train,
            SplitKind::Validation => &mut self.validation,
            SplitKind::Test => &mut self.test,
        }
    }
}

/// LSA embedding and clustering of a corpus, shared by every data type.
#[derive(Clone, Debug)]
pub struct SamplingSpace {
    pub vocabulary: Vocabulary,
    pub projection: LsaProjection,
    pub points: Vec<Vec<f64>>,
    pub assignment: ClusterAssignment,
    pub params: SamplerParams,
    pub seed: u64,
}

impl SamplingSpace {
    pub fn build(corpus: &PolicyCorpus, params: SamplerParams, seed: u64) -> Result<Self, SamplerError> {
        if !(params.eps > 0.0) || params.min_samples == 0 || params.k == 0 {
            return Err(SamplerError::InvalidParameter(format!(
                "eps={} min_samples={} k={}",
                params.eps, params.min_samples, params.k
            )));
        }
        let docs: Vec<Vec<String>> = corpus.entries.iter().map(|e| tokenize(&e.text)).collect();
        let vocabulary = fit_tfidf_with(&docs, TfidfConfig { min_df: params.min_df, allow_empty: false })?;
        let rows: Vec<_> = docs.iter().map(|d| vocabulary.transform(d)).collect();
        let projection = fit_lsa(&rows, params.k, seed)?;
        let points = rows.iter().map(|r| projection.project(r)).collect::<Result<Vec<_>, _>>()?;
        let assignment = dbscan(&points, params.eps, params.min_samples);
        Ok(SamplingSpace { vocabulary, projection, points, assignment, params, seed })
    }
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Deterministic child seed for a numbered sub-task.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, p| mix(acc ^ mix(*p)))
}

/// Test, validation and train splits for one data type over a prepared space.
pub fn build_splits_in(
    space: &SamplingSpace,
    corpus: &PolicyCorpus,
    data_type: DataType,
    sizes: SplitSizes,
    seed: u64,
) -> Result<SplitSet, SamplerError> {
    let labels: Vec<bool> = corpus.entries.iter().map(|e| e.merged_label.contains(data_type)).collect();
    let verdicts = label_clusters(&space.assignment, &labels);
    let cents = centroids(&space.points, &space.assignment, &verdicts);
    let mut used = vec![false; labels.len()];
    let mut set = SplitSet {
        data_type,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        meta: SplitMeta {
            seed,
            eps: space.params.eps,
            min_samples: space.params.min_samples,
            k: space.params.k,
            sizes,
            n_clusters: space.assignment.n_clusters,
            n_noise: space.assignment.noise_count(),
            positive_centroids: cents.positive.len(),
            negative_centroids: cents.negative.len(),
            balance: BTreeMap::new(),
        },
    };
    for (si, kind) in SplitKind::ORDER.into_iter().enumerate() {
        let size = match kind {
            SplitKind::Test => sizes.test,
            SplitKind::Validation => sizes.validation,
            SplitKind::Train => sizes.train,
        };
        let n_pos = size.div_ceil(2);
        let n_neg = size / 2;
        let mut picked = Vec::with_capacity(size);
        for (class, n_class) in [(true, n_pos), (false, n_neg)] {
            let pool: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class && !used[i]).collect();
            let s = derive_seed(seed, &[data_type.index() as u64, si as u64, class as u64]);
            let chosen = importance_sample(&space.points, &pool, cents.of(class), 2 * n_class, s)?;
            for i in chosen {
                used[i] = true;
                picked.push(i);
            }
        }
        picked.sort_unstable();
        let examples = picked
            .iter()
            .map(|&i| SplitExample { policy_url: corpus.entries[i].policy_url.clone(), label: labels[i] })
            .collect();
        set.meta.balance.insert(kind, ClassBalance { positive: n_pos, negative: n_neg });
        *set.split_mut(kind) = examples;
    }
    Ok(set)
}

/// Embeds and clusters the corpus, then builds splits for one data type.
pub fn build_splits(
    corpus: &PolicyCorpus,
    data_type: DataType,
    sizes: SplitSizes,
    params: SamplerParams,
    seed: u64,
) -> Result<SplitSet, SamplerError> {
    let space = SamplingSpace::build(corpus, params, seed)?;
    build_splits_in(&space, corpus, data_type, sizes, seed)
}

#[derive(Serialize, Deserialize)]
struct SplitLine {
    data_type: DataType,
    split: SplitKind,
    policy_url: String,
    label: u8,
}

/// One JSON object per example, in data-type then split order.
pub fn write_splits_jsonl(sets: &[SplitSet], mut out: impl Write) -> Result<(), SamplerError> {
    for set in sets {
        for kind in SplitKind::ORDER {
            for ex in set.split(kind) {
                let line = SplitLine {
                    data_type: set.data_type,
                    split: kind,
                    policy_url: ex.policy_url.clone(),
                    label: u8::from(ex.label),
                };
                serde_json::to_writer(&mut out, &line)?;
                out.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

/// Sidecar metadata keyed by data type name.
pub fn splits_metadata(sets: &[SplitSet]) -> BTreeMap<String, SplitMeta> {
    sets.iter().map(|s| (s.data_type.name().to_string(), s.meta.clone())).collect()
}

/// Reads splits back; metadata comes from the sidecar when present.
pub fn read_splits_jsonl(
    input: impl BufRead,
    metadata: &BTreeMap<String, SplitMeta>,
) -> Result<Vec<SplitSet>, SamplerError> {
    let mut by_type: BTreeMap<DataType, SplitSet> = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SplitLine = serde_json::from_str(&line)
            .map_err(|e| SamplerError::MalformedSplit { line: i + 1, reason: e.to_string() })?;
        if rec.label > 1 {
            return Err(SamplerError::MalformedSplit { line: i + 1, reason: format!("label {}", rec.label) });
        }
        let set = by_type.entry(rec.data_type).or_insert_with(|| SplitSet {
            data_type: rec.data_type,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
            meta: metadata.get(rec.data_type.name()).cloned().unwrap_or(SplitMeta {
                seed: 0,
                eps: 0.0,
                min_samples: 0,
                k: 0,
                sizes: SplitSizes { train: 0, validation: 0, test: 0 },
                n_clusters: 0,
                n_noise: 0,
                positive_centroids: 0,
                negative_centroids: 0,
                balance: BTreeMap::new(),
            }),
        });
        set.split_mut(rec.split).push(SplitExample { policy_url: rec.policy_url, label: rec.label == 1 });
    }
    Ok(by_type.into_values().collect())
}

/// How often a policy used for training one data type is evaluated on
/// another.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub unique_train: usize,
    pub unique_validation: usize,
    pub unique_test: usize,
    /// Policies in some type's train split and another type's test split.
    pub train_in_other_test: usize,
}

pub fn overlap_stats(sets: &[SplitSet]) -> OverlapStats {
    let mut train: HashMap<&str, BTreeSet<DataType>> = HashMap::new();
    let mut test: HashMap<&str, BTreeSet<DataType>> = HashMap::new();
    let mut val = BTreeSet::new();
    for s in sets {
        for e in &s.train {
            train.entry(&e.policy_url).or_default().insert(s.data_type);
        }
        for e in &s.test {
            test.entry(&e.policy_url).or_default().insert(s.data_type);
        }
        for e in &s.validation {
            val.insert(e.policy_url.as_str());
        }
    }
    let train_in_other_test = train
        .iter()
        .filter(|(url, types)| test.get(*url).is_some_and(|t| t.iter().any(|d| !types.contains(d) || types.len() > 1)))
        .count();
    OverlapStats { unique_train: train.len(), unique_validation: val.len(), unique_test: test.len(), train_in_other_test }
}
