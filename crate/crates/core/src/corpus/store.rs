use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CorpusError;
use crate::policy_detector::extract_text;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FetchStatus {
    Ok,
    Dead,
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PageClass {
    AccessiblePolicy,
    Extraneous,
    Dead,
    Unclassified,
}

/// A fetched policy page together with its classification.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyDocument {
    pub url: String,
    pub final_url: String,
    pub raw_html: Vec<u8>,
    pub extracted_text: String,
    pub fetch_status: FetchStatus,
    pub page_class: PageClass,
    pub fetched_at_ms: u64,
}

impl PolicyDocument {
    /// A page that could not be fetched. Always classified as `Dead`.
    pub fn failed(url: impl Into<String>, status: FetchStatus, fetched_at_ms: u64) -> Self {
        let url = url.into();
        let status = if status == FetchStatus::Ok { FetchStatus::Dead } else { status };
        PolicyDocument {
            final_url: url.clone(),
            url,
            raw_html: Vec::new(),
            extracted_text: String::new(),
            fetch_status: status,
            page_class: PageClass::Dead,
            fetched_at_ms,
        }
    }

    /// A successfully fetched page; text is extracted here so it always matches
    /// the stored bytes.
    pub fn fetched(
        url: impl Into<String>,
        final_url: impl Into<String>,
        raw_html: Vec<u8>,
        page_class: PageClass,
        fetched_at_ms: u64,
    ) -> Self {
        debug_assert!(page_class != PageClass::Dead);
        let page_class = if page_class == PageClass::Dead { PageClass::Unclassified } else { page_class };
        let extracted_text = extract_text(&raw_html).text;
        PolicyDocument {
            url: url.into(),
            final_url: final_url.into(),
            raw_html,
            extracted_text,
            fetch_status: FetchStatus::Ok,
            page_class,
            fetched_at_ms,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct IndexLine {
    url: String,
    status: FetchStatus,
    fetched_at: u64,
    #[serde(default = "unclassified")]
    page_class: PageClass,
    #[serde(default)]
    final_url: Option<String>,
}

fn unclassified() -> PageClass {
    PageClass::Unclassified
}

/// File name of a stored page: hex SHA-256 of the URL plus `.html`.
pub fn page_file_name(url: &str) -> String {
    let digest = Sha256::digest(url.as_bytes());
    format!("{}.html", hex::encode(digest))
}

/// Policy pages keyed by the URL they were requested under.
#[derive(Clone, Debug, Default)]
pub struct PolicyStore {
    docs: BTreeMap<String, PolicyDocument>,
}

impl PolicyStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, doc: PolicyDocument) {
        self.docs.insert(doc.url.clone(), doc);
    }

    pub fn get(&self, url: &str) -> Option<&PolicyDocument> {
        self.docs.get(url)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PolicyDocument> {
        self.docs.values()
    }

    /// Writes `index.jsonl` plus one `{sha256(url)}.html` per fetched page.
    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir)?;
        let mut index = fs::File::create(dir.join("index.jsonl"))?;
        for doc in self.docs.values() {
            if doc.fetch_status == FetchStatus::Ok {
                fs::write(dir.join(page_file_name(&doc.url)), &doc.raw_html)?;
            }
            let line = IndexLine {
                url: doc.url.clone(),
                status: doc.fetch_status,
                fetched_at: doc.fetched_at_ms,
                page_class: doc.page_class,
                final_url: (doc.final_url != doc.url).then(|| doc.final_url.clone()),
            };
            serde_json::to_writer(&mut index, &line)?;
            index.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let index = fs::File::open(dir.join("index.jsonl"))?;
        let mut store = PolicyStore::new();
        for (i, line) in BufReader::new(index).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: IndexLine = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })?;
            let doc = match entry.status {
                FetchStatus::Ok => {
                    let raw = fs::read(dir.join(page_file_name(&entry.url)))?;
                    let final_url = entry.final_url.unwrap_or_else(|| entry.url.clone());
                    PolicyDocument::fetched(entry.url, final_url, raw, entry.page_class, entry.fetched_at)
                }
                status => PolicyDocument::failed(entry.url, status, entry.fetched_at),
            };
            store.insert(doc);
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dead_iff_not_ok() {
        let d = PolicyDocument::failed("u", FetchStatus::Timeout, 0);
        assert_eq!(d.page_class, PageClass::Dead);
        let ok = PolicyDocument::fetched("u", "u", b"<p>x</p>".to_vec(), PageClass::Extraneous, 1);
        assert_eq!(ok.fetch_status, FetchStatus::Ok);
        assert_eq!(ok.extracted_text, "x");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = PolicyStore::new();
        store.insert(PolicyDocument::fetched(
            "https://a.example/privacy",
            "https://a.example/privacy/",
            b"<p>We collect &amp; share</p>".to_vec(),
            PageClass::AccessiblePolicy,
            12,
        ));
        store.insert(PolicyDocument::failed("https://b.example/", FetchStatus::Dead, 13));
        store.save(dir.path()).unwrap();
        let back = PolicyStore::load(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        let a = back.get("https://a.example/privacy").unwrap();
        assert_eq!(a.extracted_text, "We collect & share");
        assert_eq!(a.final_url, "https://a.example/privacy/");
        assert_eq!(a.page_class, PageClass::AccessiblePolicy);
        assert_eq!(back.get("https://b.example/").unwrap().page_class, PageClass::Dead);
        assert!(dir.path().join(page_file_name("https://a.example/privacy")).exists());
    }
}
