//! Seeded inputs for the benchmarks under `benches/`.

use atlas_core::textfeat::{fit_tfidf, tokenize};
use atlas_core::{AppRecord, DataType, PredictedPolicyProfile, PrivacyLabel, SparseVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` labeled apps and one profile per app, sharing policy URLs.
pub fn judge_inputs(n: usize, seed: u64) -> (Vec<AppRecord>, Vec<PredictedPolicyProfile>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles: Vec<PredictedPolicyProfile> = (0..n)
        .map(|j| {
            let probs = (0..DataType::COUNT).map(|_| rng.gen::<f64>()).collect();
            PredictedPolicyProfile::new(format!("https://p{j}.bench/privacy"), probs).expect("probabilities in range")
        })
        .collect();
    let apps = (0..n)
        .map(|i| AppRecord {
            app_id: format!("app{i}"),
            name: String::new(),
            category: String::new(),
            is_popular: false,
            rating: None,
            policy_url: Some(format!("https://p{}.bench/privacy", rng.gen_range(0..n))),
            label: Some(PrivacyLabel::from_bits(rng.gen())),
        })
        .collect();
    (apps, profiles)
}

/// `n` points in `d` dimensions drawn around `centers` well-separated centers.
pub fn clustered_points(n: usize, d: usize, centers: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mids: Vec<Vec<f64>> = (0..centers).map(|_| (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect()).collect();
    (0..n)
        .map(|i| mids[i % centers].iter().map(|m| m + rng.gen_range(-0.5..0.5)).collect())
        .collect()
}

/// Synthetic documents over a Zipf-like vocabulary of `vocab` words.
pub fn documents(n: usize, len: usize, vocab: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (0..len)
                .map(|_| {
                    let r: f64 = rng.gen();
                    format!("w{}", ((vocab as f64).powf(r) as usize).min(vocab - 1))
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// TF-IDF rows of [`documents`] with binary targets tied to one word.
pub fn tfidf_rows(n: usize, seed: u64) -> (Vec<SparseVector>, Vec<bool>, usize) {
    let docs = documents(n, 60, 400, seed);
    let tokens: Vec<Vec<String>> = docs.iter().map(|d| tokenize(d)).collect();
    let vocab = fit_tfidf(&tokens, 1).expect("non-empty corpus");
    let ys = tokens.iter().map(|t| t.iter().any(|w| w == "w3")).collect();
    let xs = tokens.iter().map(|t| vocab.transform(t)).collect();
    (xs, ys, vocab.len())
}
