//! Apps, labels and policies: catalog ingestion, URL deduplication with label
//! merging, and adoption statistics.

mod datatype;
mod label;
mod store;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use datatype::{DataType, UnknownDataType};
pub use label::{merge_labels, EmptyInput, PrivacyLabel};
pub use store::{page_file_name, FetchStatus, PageClass, PolicyDocument, PolicyStore};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate app id `{0}`")]
    DuplicateAppId(String),
    #[error("{0} policy pages are still unclassified")]
    UnclassifiedPages(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Star rating in tenths, `0..=50`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Rating(u8);

impl TryFrom<u8> for Rating {
    type Error = String;

    fn try_from(tenths: u8) -> Result<Self, String> {
        Rating::from_tenths(tenths).ok_or_else(|| format!("rating {tenths} tenths is above 50"))
    }
}

impl From<Rating> for u8 {
    fn from(r: Rating) -> u8 {
        r.0
    }
}

impl Rating {
    pub fn from_tenths(tenths: u8) -> Option<Rating> {
        (tenths <= 50).then_some(Rating(tenths))
    }

    /// Accepts only values that sit on the 0.1 grid within `[0, 5]`.
    pub fn from_f64(value: f64) -> Option<Rating> {
        if !value.is_finite() {
            return None;
        }
        let scaled = value * 10.0;
        let k = scaled.round();
        if (scaled - k).abs() > 1e-6 || !(0.0..=50.0).contains(&k) {
            return None;
        }
        Some(Rating(k as u8))
    }

    pub fn tenths(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 10.0
    }
}

/// One App Store listing.
#[derive(Clone, Debug, PartialEq)]
pub struct AppRecord {
    pub app_id: String,
    pub name: String,
    pub category: String,
    pub is_popular: bool,
    pub rating: Option<Rating>,
    pub policy_url: Option<String>,
    pub label: Option<PrivacyLabel>,
}

#[derive(Serialize, Deserialize)]
struct CatalogLine {
    app_id: String,
    #[serde(default)]
    name: String,
    #[serde(default)]
    category: String,
    #[serde(default)]
    popular: bool,
    #[serde(default)]
    rating: Option<f64>,
    #[serde(default)]
    policy_url: Option<String>,
    #[serde(default)]
    label: Option<Vec<String>>,
}

impl AppRecord {
    fn from_line(line: CatalogLine) -> Result<AppRecord, String> {
        if line.app_id.is_empty() {
            return Err("app_id is empty".into());
        }
        let rating = match line.rating {
            None => None,
            Some(r) => Some(Rating::from_f64(r).ok_or_else(|| format!("rating {r} is not k/10 in [0,5]"))?),
        };
        let label = match line.label {
            None => None,
            Some(names) => Some(
                names
                    .iter()
                    .map(|n| n.parse::<DataType>().map_err(|e| e.to_string()))
                    .collect::<Result<PrivacyLabel, _>>()?,
            ),
        };
        Ok(AppRecord {
            app_id: line.app_id,
            name: line.name,
            category: line.category,
            is_popular: line.popular,
            rating,
            policy_url: line.policy_url,
            label,
        })
    }

    fn to_line(&self) -> CatalogLine {
        CatalogLine {
            app_id: self.app_id.clone(),
            name: self.name.clone(),
            category: self.category.clone(),
            popular: self.is_popular,
            rating: self.rating.map(Rating::value),
            policy_url: self.policy_url.clone(),
            label: self.label.map(|l| l.iter().map(|d| d.name().to_string()).collect()),
        }
    }

    /// Parses a single catalog JSON object (as served by listing pages).
    pub fn from_json(text: &str) -> Result<AppRecord, String> {
        let line: CatalogLine = serde_json::from_str(text).map_err(|e| e.to_string())?;
        AppRecord::from_line(line)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_line()).expect("catalog line serializes")
    }
}

pub fn parse_catalog(reader: impl Read) -> Result<Vec<AppRecord>, CorpusError> {
    let mut apps = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::MalformedRecord { line: i + 1, reason };
        let raw: CatalogLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let app = AppRecord::from_line(raw).map_err(malformed)?;
        if !seen.insert(app.app_id.clone()) {
            return Err(CorpusError::DuplicateAppId(app.app_id));
        }
        apps.push(app);
    }
    Ok(apps)
}

/// Reads a JSONL catalog, one [`AppRecord`] per non-blank line.
pub fn load_catalog(path: &Path) -> Result<Vec<AppRecord>, CorpusError> {
    parse_catalog(fs::File::open(path)?)
}

pub fn write_catalog(path: &Path, apps: &[AppRecord]) -> Result<(), CorpusError> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for app in apps {
        serde_json::to_writer(&mut out, &app.to_line())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// One unique policy and every app that links to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub policy_url: String,
    pub text: String,
    pub merged_label: PrivacyLabel,
    pub app_ids: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyCorpus {
    pub entries: Vec<CorpusEntry>,
}

impl PolicyCorpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })?);
        }
        Ok(PolicyCorpus { entries })
    }
}

/// Why apps were left out of the corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupeSummary {
    pub eligible_apps: usize,
    pub skipped_no_policy_url: usize,
    pub skipped_no_label: usize,
    pub skipped_inaccessible: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DedupeOptions {
    /// Lowercase scheme and host and drop the fragment before comparing.
    pub normalize_urls: bool,
}

/// Lowercases the scheme and host and strips any `#fragment`.
pub fn normalize_url(url: &str) -> String {
    let url = url.split('#').next().unwrap_or("");
    let (scheme, rest) = match url.find("://") {
        Some(i) => (&url[..i], &url[i + 3..]),
        None => return url.to_string(),
    };
    let host_end = rest.find(['/', '?']).unwrap_or(rest.len());
    format!(
        "{}://{}{}",
        scheme.to_ascii_lowercase(),
        rest[..host_end].to_ascii_lowercase(),
        &rest[host_end..]
    )
}

/// Groups eligible apps by policy URL and unions their labels.
///
/// An app is eligible when it has a label and a policy URL whose stored page
/// is an accessible policy. Entries are ordered by URL.
pub fn dedupe_policies(
    catalog: &[AppRecord],
    store: &PolicyStore,
    options: DedupeOptions,
) -> (PolicyCorpus, DedupeSummary) {
    let mut summary = DedupeSummary::default();
    let mut groups: BTreeMap<String, (String, PrivacyLabel, Vec<String>)> = BTreeMap::new();
    for app in catalog {
        let Some(url) = &app.policy_url else {
            summary.skipped_no_policy_url += 1;
            continue;
        };
        let Some(label) = app.label else {
            summary.skipped_no_label += 1;
            continue;
        };
        let doc = match store.get(url) {
            Some(doc) if doc.page_class == PageClass::AccessiblePolicy => doc,
            _ => {
                summary.skipped_inaccessible += 1;
                continue;
            }
        };
        summary.eligible_apps += 1;
        let key = if options.normalize_urls { normalize_url(url) } else { url.clone() };
        let entry = groups
            .entry(key)
            .or_insert_with(|| (doc.extracted_text.clone(), PrivacyLabel::empty(), Vec::new()));
        entry.1 = entry.1.union(label);
        entry.2.push(app.app_id.clone());
    }
    let entries = groups
        .into_iter()
        .map(|(policy_url, (text, merged_label, app_ids))| CorpusEntry { policy_url, text, merged_label, app_ids })
        .collect();
    (PolicyCorpus { entries }, summary)
}

/// Page accessibility and label adoption over a catalog.
///
/// Page-class percentages use the apps that have a policy URL as their
/// denominator so the three classes sum to 100; label percentages use all
/// apps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdoptionStats {
    pub n_apps: usize,
    pub n_with_policy_url: usize,
    pub pct_accessible_policy: f64,
    pub pct_extraneous: f64,
    pub pct_dead_links: f64,
    pub pct_label: f64,
    pub pct_both: f64,
    pub declared: BTreeMap<DataType, u64>,
    pub declared_popular: BTreeMap<DataType, u64>,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

pub fn adoption_report(catalog: &[AppRecord], store: &PolicyStore) -> Result<AdoptionStats, CorpusError> {
    let (mut with_url, mut accessible, mut extraneous, mut dead, mut labeled, mut both, mut unclassified) =
        (0, 0, 0, 0, 0, 0, 0);
    for app in catalog {
        if app.label.is_some() {
            labeled += 1;
        }
        let Some(url) = &app.policy_url else { continue };
        with_url += 1;
        match store.get(url).map(|d| d.page_class).unwrap_or(PageClass::Unclassified) {
            PageClass::AccessiblePolicy => {
                accessible += 1;
                if app.label.is_some() {
                    both += 1;
                }
            }
            PageClass::Extraneous => extraneous += 1,
            PageClass::Dead => dead += 1,
            PageClass::Unclassified => unclassified += 1,
        }
    }
    if unclassified > 0 {
        return Err(CorpusError::UnclassifiedPages(unclassified));
    }
    let histogram = data_type_histogram(catalog);
    Ok(AdoptionStats {
        n_apps: catalog.len(),
        n_with_policy_url: with_url,
        pct_accessible_policy: pct(accessible, with_url),
        pct_extraneous: pct(extraneous, with_url),
        pct_dead_links: pct(dead, with_url),
        pct_label: pct(labeled, catalog.len()),
        pct_both: pct(both, catalog.len()),
        declared: histogram.counts_map(false),
        declared_popular: histogram.counts_map(true),
    })
}

/// Number of apps declaring each data type, overall and among popular apps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataTypeHistogram {
    pub all: [u64; 32],
    pub popular: [u64; 32],
}

impl DataTypeHistogram {
    fn counts_map(&self, popular: bool) -> BTreeMap<DataType, u64> {
        let counts = if popular { &self.popular } else { &self.all };
        DataType::ALL.iter().map(|d| (*d, counts[d.index()])).collect()
    }
}

pub fn data_type_histogram(catalog: &[AppRecord]) -> DataTypeHistogram {
    let mut hist = DataTypeHistogram { all: [0; 32], popular: [0; 32] };
    for app in catalog {
        let Some(label) = app.label else { continue };
        for d in label.iter() {
            hist.all[d.index()] += 1;
            if app.is_popular {
                hist.popular[d.index()] += 1;
            }
        }
    }
    hist
}
