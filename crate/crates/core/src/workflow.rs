//! End-to-end runs: crawl, detect, dedupe, sample, train, predict, judge and
//! report. Each step is a function the CLI calls on its own.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::corpus::{
    adoption_report, dedupe_policies, AdoptionStats, AppRecord, CorpusError, DedupeOptions, DedupeSummary,
    FetchStatus, PageClass, PolicyCorpus, PolicyDocument, PolicyStore,
};
use crate::discrepancy::{judge, DiscrepancyError, DiscrepancyOutcome};
use crate::labelers::{
    evaluate_ensemble, external_model, save_bundle, select_ensemble, tune_logistic, write_predictions,
    ArchitectureId, ArchitectureRoster, Candidate, EnsembleEvaluation, EnsembleModel, LabelerError, PredictedPolicyProfile, TextIndex,
};
use crate::pipeline::{
    classify_and_store, collect_listings, make_tasks, run_phase, Clock, FetchTask, IdentityPool, Nanos, Phase,
    PipelineError, ResultStore, RunLedger, TaskStatus, Transport,
};
use crate::policy_detector::{classify_page, train_detector, DetectorConfig, DetectorError, DetectorModel};
use crate::sampler::{build_splits_in, derive_seed, write_splits_jsonl, SamplerError, SamplingSpace, SplitSet, SplitSizes};
use crate::stats::{build_report, emit_report, StatsError};
use crate::synth::FixtureWorld;
use crate::DataType;

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Labeler(#[from] LabelerError),
    #[error(transparent)]
    Discrepancy(#[from] DiscrepancyError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Fetches `tasks` under the crawl settings of `config` and returns the
/// ledger together with the stored results.
pub fn crawl(
    tasks: Vec<FetchTask>,
    config: &RunConfig,
    pool: &mut IdentityPool,
    transport: &dyn Transport,
    clock: Clock,
) -> Result<(RunLedger, ResultStore), WorkflowError> {
    let mut store = ResultStore::new();
    let ledger = run_phase(tasks, &config.crawl.pipeline(), pool, transport, &mut store, clock)?;
    Ok((ledger, store))
}

/// Identity pool described by the crawl settings.
pub fn identity_pool(config: &RunConfig) -> Result<IdentityPool, WorkflowError> {
    let c = &config.crawl;
    let pool = if c.proxies.is_empty() {
        IdentityPool::new(c.identities, c.rate, c.burst)?
    } else {
        IdentityPool::with_endpoints(c.proxies.iter().cloned().map(Some).collect(), c.rate, c.burst)?
    };
    Ok(pool)
}

/// Distinct policy URLs of `apps`, in sorted order.
pub fn policy_urls(apps: &[AppRecord]) -> Vec<String> {
    let set: std::collections::BTreeSet<&str> = apps.iter().filter_map(|a| a.policy_url.as_deref()).collect();
    set.into_iter().map(String::from).collect()
}

/// Classifies every policy-phase result into a new store.
pub fn detect_store(results: &ResultStore, detector: &DetectorModel) -> Result<PolicyStore, WorkflowError> {
    let mut store = PolicyStore::new();
    for r in results.iter() {
        classify_and_store(r, detector, &mut store)?;
    }
    Ok(store)
}

/// Stores policy-phase results without classifying them.
pub fn store_unclassified(results: &ResultStore) -> PolicyStore {
    let mut store = PolicyStore::new();
    for r in results.iter().filter(|r| r.phase == Phase::Policies) {
        let at_ms = r.finished_at / 1_000_000;
        let doc = match (r.status, &r.body) {
            (TaskStatus::Ok, Some(body)) => {
                PolicyDocument::fetched(&r.url, &r.final_url, body.clone(), PageClass::Unclassified, at_ms)
            }
            (TaskStatus::Timeout | TaskStatus::RateLimited, _) => PolicyDocument::failed(&r.url, FetchStatus::Timeout, at_ms),
            _ => PolicyDocument::failed(&r.url, FetchStatus::Dead, at_ms),
        };
        store.insert(doc);
    }
    store
}

/// Runs the detector over every fetched page of `store`.
pub fn reclassify_store(store: &PolicyStore, detector: &DetectorModel) -> PolicyStore {
    let mut out = PolicyStore::new();
    for doc in store.iter() {
        let mut doc = doc.clone();
        if doc.fetch_status == FetchStatus::Ok {
            doc.page_class = if classify_page(detector, &doc.raw_html).is_policy {
                PageClass::AccessiblePolicy
            } else {
                PageClass::Extraneous
            };
        }
        out.insert(doc);
    }
    out
}

/// Splits for every data type over one shared sampling space.
pub fn sample_all(corpus: &PolicyCorpus, config: &RunConfig) -> Result<Vec<SplitSet>, WorkflowError> {
    let space = SamplingSpace::build(corpus, config.sampler, config.seed)?;
    let mut out = Vec::with_capacity(DataType::COUNT);
    for d in DataType::ALL {
        out.push(build_splits_in(&space, corpus, d, config.sizes, config.seed)?);
    }
    Ok(out)
}

/// Tunes one logistic model per split and selects the ensemble.
pub fn train_all(splits: &[SplitSet], texts: &TextIndex<'_>, config: &RunConfig) -> Result<EnsembleModel, WorkflowError> {
    train_with_externals(splits, texts, config, &[])
}

/// Like [`train_all`], with externally produced predictions standing in for
/// further architectures. Externals rank after logistic regression in the
/// given order.
pub fn train_with_externals(
    splits: &[SplitSet],
    texts: &TextIndex<'_>,
    config: &RunConfig,
    externals: &[(ArchitectureId, Vec<PredictedPolicyProfile>)],
) -> Result<EnsembleModel, WorkflowError> {
    let mut candidates = Vec::with_capacity(splits.len() * (1 + externals.len()));
    for s in splits {
        let seed = derive_seed(config.seed, &[s.data_type.index() as u64]);
        candidates.push(tune_logistic(s, texts, &config.training.l2_grid, config.training.hyperparams, seed)?);
        for (arch, profiles) in externals {
            let scores = profiles.iter().map(|p| (p.policy_url.clone(), p.p(s.data_type))).collect();
            let model = external_model(arch.clone(), s.data_type, scores, &s.train);
            let validation = model.evaluate(&s.validation, texts)?;
            candidates.push(Candidate { model, validation });
        }
    }
    let roster = if externals.is_empty() {
        ArchitectureRoster::default()
    } else {
        ArchitectureRoster::new(std::iter::once(ArchitectureId::logistic()).chain(externals.iter().map(|(a, _)| a.clone())))
    };
    Ok(select_ensemble(candidates, &roster)?)
}

/// One profile per corpus entry, in corpus order.
pub fn predict_corpus(ensemble: &EnsembleModel, corpus: &PolicyCorpus) -> Result<Vec<PredictedPolicyProfile>, WorkflowError> {
    corpus
        .entries
        .iter()
        .map(|e| ensemble.predict_profile(&e.policy_url, &e.text).map_err(WorkflowError::from))
        .collect()
}

/// Outcomes for every app with a label and a profiled policy, in app order.
pub fn judge_apps(apps: &[AppRecord], profiles: &[PredictedPolicyProfile]) -> Result<Vec<DiscrepancyOutcome>, WorkflowError> {
    let by_url: BTreeMap<&str, &PredictedPolicyProfile> = profiles.iter().map(|p| (p.policy_url.as_str(), p)).collect();
    let mut out = Vec::new();
    for app in apps {
        let (Some(_), Some(url)) = (app.label, app.policy_url.as_deref()) else { continue };
        if let Some(profile) = by_url.get(url) {
            out.extend(judge(app, profile)?);
        }
    }
    Ok(out)
}

/// Config sized for the default fixture world.
pub fn demo_config(seed: u64) -> RunConfig {
    let mut config = RunConfig::with_seed(seed);
    config.sizes = SplitSizes { train: 120, validation: 30, test: 30 };
    config
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorkflowSummary {
    pub n_listings: usize,
    pub n_apps: usize,
    pub n_policy_urls: usize,
    pub dedupe: DedupeSummary,
    pub corpus_size: usize,
    pub adoption: AdoptionStats,
    pub evaluation: EnsembleEvaluation,
    pub n_outcomes: usize,
    pub listings_finished_at: Nanos,
    pub policies_finished_at: Nanos,
    pub report_files: Vec<PathBuf>,
}

fn write_pretty(path: &Path, value: &impl Serialize) -> Result<(), WorkflowError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Runs every step against a fixture world on the simulated clock and
/// writes all artifacts under `out_dir`; the report bundle goes to
/// `out_dir/report`.
pub fn run_fixture_workflow(config: &RunConfig, world: &FixtureWorld, out_dir: &Path) -> Result<WorkflowSummary, WorkflowError> {
    fs::create_dir_all(out_dir)?;
    let mut pool = identity_pool(config)?;

    let (listings, listing_results) =
        crawl(make_tasks(&world.listing_urls, Phase::Listings), config, &mut pool, &world.server, Clock::Simulated(0))?;
    listings.write_jsonl(fs::File::create(out_dir.join("listings_ledger.jsonl"))?)?;
    let (apps, _bad) = collect_listings(&listing_results);
    crate::corpus::write_catalog(&out_dir.join("catalog.jsonl"), &apps)?;

    let urls = policy_urls(&apps);
    let (policies, policy_results) =
        crawl(make_tasks(&urls, Phase::Policies), config, &mut pool, &world.server, Clock::Simulated(listings.finished_at))?;
    policies.write_jsonl(fs::File::create(out_dir.join("policies_ledger.jsonl"))?)?;

    let detector_config = DetectorConfig { seed: config.seed, ..Default::default() };
    let (detector, _) = train_detector(&world.detector_training, &detector_config)?;
    let store = detect_store(&policy_results, &detector)?;
    store.save(&out_dir.join("store"))?;

    let (corpus, dedupe) = dedupe_policies(&apps, &store, DedupeOptions::default());
    corpus.save(&out_dir.join("corpus.jsonl"))?;
    let adoption = adoption_report(&apps, &store)?;
    write_pretty(&out_dir.join("adoption.json"), &adoption)?;

    let splits = sample_all(&corpus, config)?;
    write_splits_jsonl(&splits, fs::File::create(out_dir.join("splits.jsonl"))?)?;

    let texts = TextIndex::from_corpus(&corpus);
    let ensemble = train_all(&splits, &texts, config)?;
    save_bundle(&out_dir.join("models"), &ensemble)?;
    let evaluation = evaluate_ensemble(&ensemble, &splits, &texts)?;
    write_pretty(&out_dir.join("evaluation.json"), &evaluation)?;

    let profiles = predict_corpus(&ensemble, &corpus)?;
    write_predictions(fs::File::create(out_dir.join("predictions.csv"))?, &profiles)?;

    let outcomes = judge_apps(&apps, &profiles)?;
    let n_outcomes = outcomes.len();
    let report = build_report(&apps, outcomes, config.to_value());
    let report_files = emit_report(&report, &out_dir.join("report"))?;

    Ok(WorkflowSummary {
        n_listings: world.listing_urls.len(),
        n_apps: apps.len(),
        n_policy_urls: urls.len(),
        dedupe,
        corpus_size: corpus.len(),
        adoption,
        evaluation,
        n_outcomes,
        listings_finished_at: listings.finished_at,
        policies_finished_at: policies.finished_at,
        report_files,
    })
}
