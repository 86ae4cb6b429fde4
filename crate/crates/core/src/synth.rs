//! Seeded synthetic data: a planted two-vocabulary corpus with label noise,
//! and a small fixture world of listings and policy pages.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AppRecord, CorpusEntry, DataType, PolicyCorpus, PrivacyLabel, Rating};
use crate::pipeline::{FixturePage, FixtureServer, PipelineError};

/// Data type carrying the planted signal.
pub const PLANTED_TYPE: DataType = DataType::Name;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedParams {
    pub n_docs: usize,
    pub flip_rate: f64,
    pub doc_len: usize,
    pub class_words: usize,
    pub shared_words: usize,
    /// Share of each document's tokens drawn from its class vocabulary.
    pub signal: f64,
}

impl Default for PlantedParams {
    fn default() -> Self {
        PlantedParams { n_docs: 4000, flip_rate: 0.2, doc_len: 40, class_words: 30, shared_words: 40, signal: 0.5 }
    }
}

/// Documents with a known class and a noisy observed label.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedCorpus {
    /// `merged_label` contains [`PLANTED_TYPE`] iff the observed label is positive.
    pub corpus: PolicyCorpus,
    pub truth: Vec<bool>,
    pub observed: Vec<bool>,
}

fn planted_word(class: Option<bool>, i: usize) -> String {
    match class {
        Some(true) => format!("pa{i:02}"),
        Some(false) => format!("nb{i:02}"),
        None => format!("sh{i:02}"),
    }
}

/// One document of the given class.
pub fn planted_text(params: &PlantedParams, positive: bool, rng: &mut impl Rng) -> String {
    let words: Vec<String> = (0..params.doc_len)
        .map(|_| {
            if rng.gen::<f64>() < params.signal {
                planted_word(Some(positive), rng.gen_range(0..params.class_words))
            } else {
                planted_word(None, rng.gen_range(0..params.shared_words))
            }
        })
        .collect();
    words.join(" ")
}

/// Half positive, half negative (alternating), each label flipped with
/// probability `flip_rate`.
pub fn planted_corpus(params: &PlantedParams, seed: u64) -> PlantedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(params.n_docs);
    let mut truth = Vec::with_capacity(params.n_docs);
    let mut observed = Vec::with_capacity(params.n_docs);
    for i in 0..params.n_docs {
        let t = i % 2 == 0;
        let text = planted_text(params, t, &mut rng);
        let o = if rng.gen::<f64>() < params.flip_rate { !t } else { t };
        let mut label = PrivacyLabel::empty();
        if o {
            label.insert(PLANTED_TYPE);
        }
        entries.push(CorpusEntry {
            policy_url: format!("https://planted.test/{i:05}"),
            text,
            merged_label: label,
            app_ids: vec![format!("planted-{i:05}")],
        });
        truth.push(t);
        observed.push(o);
    }
    PlantedCorpus { corpus: PolicyCorpus { entries }, truth, observed }
}

/// Clean held-out `(url, text, truth)` triples from the same generator.
pub fn planted_holdout(params: &PlantedParams, n: usize, seed: u64) -> Vec<(String, String, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let t = i % 2 == 0;
            (format!("https://holdout.test/{i:05}"), planted_text(params, t, &mut rng), t)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub n_apps: usize,
    pub n_policies: usize,
    /// Chance that a policy discloses each data type.
    pub p_type: f64,
    /// Chance that a disclosed type is missing from an app's label.
    pub p_drop: f64,
    /// Chance that an undisclosed type is added to an app's label.
    pub p_add: f64,
    pub p_no_policy_url: f64,
    pub p_no_label: f64,
    pub p_dead: f64,
    pub p_extraneous: f64,
    pub p_redirect: f64,
    pub p_popular: f64,
    pub failure_rate: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            n_apps: 700,
            n_policies: 500,
            p_type: 0.3,
            p_drop: 0.05,
            p_add: 0.02,
            p_no_policy_url: 0.04,
            p_no_label: 0.04,
            p_dead: 0.04,
            p_extraneous: 0.05,
            p_redirect: 0.1,
            p_popular: 0.15,
            failure_rate: 0.05,
        }
    }
}

/// Listings, pages and detector training data for a fixture crawl.
#[derive(Clone, Debug, PartialEq)]
pub struct FixtureWorld {
    /// Ground-truth catalog; a crawl should recover it from the listings.
    pub apps: Vec<AppRecord>,
    pub listing_urls: Vec<String>,
    pub server: FixtureServer,
    pub detector_training: Vec<(String, bool)>,
    /// Data types each reachable policy actually discloses.
    pub disclosed: BTreeMap<String, PrivacyLabel>,
}

/// Word used in policy text for a data type.
pub fn marker(d: DataType) -> String {
    d.slug().replace('-', "")
}

/// Phrase naming a data type: its marker and three derived words.
pub fn marker_phrase(d: DataType) -> String {
    let m = marker(d);
    format!("{m} {m}record {m}details {m}fields")
}

const POLICY_FILLER: &[&str] = &[
    "This privacy policy describes how we handle information when you use our services.",
    "We take reasonable measures to protect the information we hold.",
    "You may contact us at any time with questions about this policy.",
    "We may update this policy from time to time and will post any changes here.",
    "Information is retained only as long as necessary for the purposes described.",
    "Our services are not directed to children under the age of thirteen.",
    "By using the app you agree to the practices described in this policy.",
    "We do not sell personal information to third parties.",
    "You have the right to request access to or deletion of your information.",
    "We rely on service providers who process information on our behalf.",
];

const COLLECT_TEMPLATES: &[&str] = &[
    "We collect {} when you use the app.",
    "The app may gather your {} to provide its features.",
    "We store {} on our servers.",
    "Your {} is shared with our analytics partners.",
];

const STOREFRONT_FILLER: &[&str] = &[
    "Download now and start playing today.",
    "Top charts in games and entertainment.",
    "Ratings and reviews from players around the world.",
    "Screenshots iPhone iPad Apple Watch.",
    "Offers in-app purchases.",
    "Editors choice featured this week.",
    "Get it free on the store.",
    "Sign in to continue shopping.",
    "Page not found, return to the home screen.",
    "Subscribe for weekly news and special deals.",
];

pub fn policy_html(disclosed: PrivacyLabel, rng: &mut impl Rng) -> Vec<u8> {
    let mut sentences: Vec<String> = POLICY_FILLER.choose_multiple(rng, 6).map(|s| s.to_string()).collect();
    for d in disclosed.iter() {
        for t in COLLECT_TEMPLATES.choose_multiple(rng, 2) {
            sentences.push(t.replace("{}", &marker_phrase(d)));
        }
    }
    sentences.shuffle(rng);
    let paras: String = sentences.iter().map(|s| format!("<p>{s}</p>")).collect();
    format!(
        "<html><head><title>Privacy Policy</title><script>var t = 1;</script></head>\
         <body><nav>Home | Support</nav><h1>Privacy Policy</h1>{paras}<footer>Copyright</footer></body></html>"
    )
    .into_bytes()
}

pub fn storefront_html(rng: &mut impl Rng) -> Vec<u8> {
    let paras: String = STOREFRONT_FILLER.choose_multiple(rng, 4).map(|s| format!("<p>{s}</p>")).collect();
    format!("<html><head><title>App Store</title></head><body><h1>Get the app</h1>{paras}</body></html>").into_bytes()
}

fn text_of(html: &[u8]) -> String {
    crate::policy_detector::extract_text(html).text
}

const CATEGORIES: &[&str] = &["Games", "Health & Fitness", "Finance", "Social Networking", "Utilities", "Education"];

pub fn fixture_world(params: &WorldParams, seed: u64) -> FixtureWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pages = BTreeMap::new();
    let mut disclosed = BTreeMap::new();
    let mut policy_urls = Vec::with_capacity(params.n_policies);
    for j in 0..params.n_policies {
        let url = format!("https://dev{j:03}.fixture.test/privacy");
        let r: f64 = rng.gen();
        if r < params.p_dead {
            pages.insert(url.clone(), FixturePage::Dead);
        } else if r < params.p_dead + params.p_extraneous {
            pages.insert(url.clone(), FixturePage::Ok { body: storefront_html(&mut rng) });
        } else {
            let label: PrivacyLabel = DataType::ALL.into_iter().filter(|_| rng.gen::<f64>() < params.p_type).collect();
            let body = policy_html(label, &mut rng);
            if rng.gen::<f64>() < params.p_redirect {
                let target = format!("https://dev{j:03}.fixture.test/legal/privacy-policy");
                pages.insert(url.clone(), FixturePage::Redirect { location: target.clone() });
                pages.insert(target, FixturePage::Ok { body });
            } else {
                pages.insert(url.clone(), FixturePage::Ok { body });
            }
            disclosed.insert(url.clone(), label);
        }
        policy_urls.push(url);
    }

    let mut apps = Vec::with_capacity(params.n_apps);
    let mut listing_urls = Vec::with_capacity(params.n_apps);
    for i in 0..params.n_apps {
        let app_id = format!("id{:06}", 100_000 + i);
        let url = if rng.gen::<f64>() < params.p_no_policy_url {
            None
        } else {
            // The first n_policies apps cover every policy once; the rest share.
            let j = if i < params.n_policies { i } else { rng.gen_range(0..params.n_policies) };
            Some(policy_urls[j].clone())
        };
        let truth = url.as_ref().and_then(|u| disclosed.get(u)).copied();
        let label = if rng.gen::<f64>() < params.p_no_label {
            None
        } else {
            let base = truth.unwrap_or_else(|| DataType::ALL.into_iter().filter(|_| rng.gen::<f64>() < params.p_type).collect());
            Some(
                DataType::ALL
                    .into_iter()
                    .filter(|d| {
                        let r: f64 = rng.gen();
                        if base.contains(*d) {
                            r >= params.p_drop
                        } else {
                            r < params.p_add
                        }
                    })
                    .collect(),
            )
        };
        let rating = if rng.gen::<f64>() < 0.05 { None } else { Rating::from_tenths(rng.gen_range(10..=50)) };
        let app = AppRecord {
            name: format!("Fixture App {i}"),
            category: CATEGORIES.choose(&mut rng).expect("categories").to_string(),
            is_popular: rng.gen::<f64>() < params.p_popular,
            rating,
            policy_url: url,
            label,
            app_id,
        };
        let listing = format!("https://apps.fixture.test/app/{}", app.app_id);
        pages.insert(listing.clone(), FixturePage::Ok { body: app.to_json().into_bytes() });
        listing_urls.push(listing);
        apps.push(app);
    }

    let mut detector_training = Vec::new();
    let mut drng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for k in 0..80 {
        let html = if k % 2 == 0 {
            let label: PrivacyLabel = DataType::ALL.into_iter().filter(|_| drng.gen::<f64>() < params.p_type).collect();
            policy_html(label, &mut drng)
        } else {
            storefront_html(&mut drng)
        };
        detector_training.push((text_of(&html), k % 2 == 0));
    }

    let server = FixtureServer::new(pages).with_failures(params.failure_rate, seed);
    FixtureWorld { apps, listing_urls, server, detector_training, disclosed }
}

#[derive(Serialize, Deserialize)]
struct TrainingLine {
    text: String,
    is_policy: bool,
}

impl FixtureWorld {
    /// Writes `server/`, `listings.txt`, `detector_training.jsonl` and
    /// `catalog.jsonl` (the ground truth) under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir)?;
        self.server.save(&dir.join("server"))?;
        let mut listings = self.listing_urls.join("\n");
        listings.push('\n');
        fs::write(dir.join("listings.txt"), listings)?;
        let mut out = std::io::BufWriter::new(fs::File::create(dir.join("detector_training.jsonl"))?);
        for (text, is_policy) in &self.detector_training {
            serde_json::to_writer(&mut out, &TrainingLine { text: text.clone(), is_policy: *is_policy })?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        crate::corpus::write_catalog(&dir.join("catalog.jsonl"), &self.apps)?;
        Ok(())
    }
}

impl FixtureWorld {
    /// Reads a directory written by [`FixtureWorld::save`]. Disclosed types
    /// are not saved and come back empty.
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        Ok(FixtureWorld {
            apps: crate::corpus::load_catalog(&dir.join("catalog.jsonl"))?,
            listing_urls: read_url_list(&dir.join("listings.txt"))?,
            server: FixtureServer::load(&dir.join("server"))?,
            detector_training: read_detector_training(&dir.join("detector_training.jsonl"))?,
            disclosed: BTreeMap::new(),
        })
    }
}

/// URLs, one per non-empty line.
pub fn read_url_list(path: &Path) -> Result<Vec<String>, std::io::Error> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let line = line.trim();
        if !line.is_empty() {
            out.push(line.to_string());
        }
    }
    Ok(out)
}

/// Reads `(text, is_policy)` pairs written by [`FixtureWorld::save`].
pub fn read_detector_training(path: &Path) -> Result<Vec<(String, bool)>, PipelineError> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TrainingLine = serde_json::from_str(&line)?;
        out.push((t.text, t.is_policy));
    }
    Ok(out)
}
