//! `atlas`: the analysis workflow as subcommands.
//!
//! Exit codes: 0 on success, 2 for usage errors, 1 for failures inside a
//! step. Failures are reported on stderr as one JSON object.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use atlas_core::config::ConfigError;
use atlas_core::corpus::{adoption_report, dedupe_policies, load_catalog, write_catalog, DedupeOptions, PolicyCorpus, PolicyStore};
use atlas_core::discrepancy::{read_outcomes_csv, summarize, write_outcomes_csv, write_summary_csv};
use atlas_core::labelers::{evaluate_ensemble, load_bundle, read_predictions, save_bundle, write_predictions, ArchitectureId, TextIndex};
use atlas_core::pipeline::{collect_listings, make_tasks, Clock, FixtureServer, Phase, Transport};
use atlas_core::policy_detector::{train_detector, DetectorConfig, DetectorModel};
use atlas_core::sampler::{read_splits_jsonl, splits_metadata, write_splits_jsonl, SplitMeta};
use atlas_core::stats::{build_report, emit_report};
use atlas_core::synth::{fixture_world, read_detector_training, read_url_list, FixtureWorld, WorldParams};
use atlas_core::workflow::{
    crawl, demo_config, identity_pool, judge_apps, policy_urls, predict_corpus, reclassify_store, run_fixture_workflow,
    sample_all, store_unclassified, train_with_externals, WorkflowError,
};
use atlas_core::RunConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "atlas", version, about = "Privacy-label discrepancy analysis")]
struct Cli {
    /// Run config (TOML, or JSON when the file ends in .json).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; overrides the config. ATLAS_SEED is used when neither sets one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch listings or policy pages.
    Crawl(CrawlArgs),
    /// Classify fetched pages as policies or extraneous.
    Detect(DetectArgs),
    /// Group apps by policy URL and merge their labels.
    Dedupe(DedupeArgs),
    /// Policy accessibility and label adoption statistics.
    Adoption(AdoptionArgs),
    /// Build per-type train, validation and test splits.
    Sample(SampleArgs),
    /// Train per-type classifiers and select the ensemble.
    Train(TrainArgs),
    /// Predict one profile per policy.
    Predict(PredictArgs),
    /// Compare predicted profiles with declared labels.
    Judge(JudgeArgs),
    /// Write the CSV and JSON report bundle.
    Report(ReportArgs),
    /// Run every step against a synthetic fixture world.
    PipelineDemo(DemoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Listings,
    Policies,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Fixture,
    Http,
}

#[derive(Args)]
struct CrawlArgs {
    #[arg(long, value_enum)]
    phase: PhaseArg,
    #[arg(long)]
    workers: Option<usize>,
    /// Requests per second per identity.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    burst: Option<u32>,
    #[arg(long)]
    max_passes: Option<u32>,
    /// Seconds between requests per identity; sets the rate.
    #[arg(long, conflicts_with = "rate")]
    crawl_delay: Option<f64>,
    /// SOCKS proxy URL, one identity each (http transport only).
    #[arg(long = "proxy")]
    proxies: Vec<String>,
    #[arg(long, value_enum, default_value = "fixture")]
    transport: TransportArg,
    /// Fixture directory (a saved world or a server directory).
    #[arg(long)]
    fixture_dir: Option<PathBuf>,
    /// Transient failure probability injected into the fixture server.
    #[arg(long, default_value_t = 0.0)]
    failure_rate: f64,
    /// Listing URLs, one per line (listings phase; defaults to the fixture's list).
    #[arg(long)]
    urls: Option<PathBuf>,
    /// Catalog whose policy URLs are fetched (policies phase).
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    store: PathBuf,
    /// JSONL of {"text", "is_policy"} training pages.
    #[arg(long, required_unless_present = "model")]
    training: Option<PathBuf>,
    /// Previously saved detector.
    #[arg(long, conflicts_with = "training")]
    model: Option<PathBuf>,
    #[arg(long)]
    save_model: Option<PathBuf>,
    /// Output store directory; defaults to rewriting the input.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DedupeArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    normalize_urls: bool,
}

#[derive(Args)]
struct AdoptionArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Metadata sidecar; defaults to the output path with `.meta.json`.
    #[arg(long)]
    meta_out: Option<PathBuf>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_samples: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    validation_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    splits: PathBuf,
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Model bundle directory.
    #[arg(long)]
    out: PathBuf,
    /// External architecture as NAME=PREDICTIONS.csv; repeatable.
    #[arg(long = "external")]
    externals: Vec<String>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct JudgeArgs {
    /// Catalog carrying the declared labels.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    summary_out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, required_unless_present = "profiles", conflicts_with = "profiles")]
    outcomes: Option<PathBuf>,
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long)]
    out: PathBuf,
    /// Load a saved world instead of generating one.
    #[arg(long)]
    fixture_dir: Option<PathBuf>,
    /// Save the generated world here.
    #[arg(long, conflicts_with = "fixture_dir")]
    save_fixture: Option<PathBuf>,
    #[arg(long)]
    apps: Option<usize>,
    #[arg(long)]
    policies: Option<usize>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Step(WorkflowError),
}

impl<E: Into<WorkflowError>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Step(e.into())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn step_kind(e: &WorkflowError) -> &'static str {
    match e {
        WorkflowError::Pipeline(_) => "pipeline",
        WorkflowError::Detector(_) => "detector",
        WorkflowError::Corpus(_) => "corpus",
        WorkflowError::Sampler(_) => "sampler",
        WorkflowError::Labeler(_) => "labeler",
        WorkflowError::Discrepancy(_) => "discrepancy",
        WorkflowError::Stats(_) => "stats",
        WorkflowError::Io(_) => "io",
        WorkflowError::Json(_) => "json",
    }
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("ATLAS_SEED") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| usage(format!("ATLAS_SEED is not an integer: {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn config_error(e: ConfigError) -> CliError {
    match e {
        ConfigError::Io(e) => CliError::Step(e.into()),
        other => usage(other.to_string()),
    }
}

/// The run config; `default` supplies defaults when no config file is given.
fn resolve(cli: &Cli, default: fn(u64) -> RunConfig) -> Result<RunConfig, CliError> {
    let fallback = match cli.seed {
        Some(s) => Some(s),
        None => env_seed()?,
    };
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path, fallback).map_err(config_error)?,
        None => default(fallback.ok_or_else(|| usage(ConfigError::MissingSeed.to_string()))?),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    Ok(config)
}

fn print_json(value: &serde_json::Value) {
    // A closed stdout (for example a pipe into `head`) is not an error.
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(value).expect("json serializes"));
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(WorkflowError::from)?;
    text.push('\n');
    fs::write(path, text).map_err(WorkflowError::from)?;
    Ok(())
}

fn load_fixture_server(dir: &Path) -> Result<FixtureServer, CliError> {
    let server_dir = if dir.join("server").is_dir() { dir.join("server") } else { dir.to_path_buf() };
    Ok(FixtureServer::load(&server_dir)?)
}

fn cmd_crawl(cli: &Cli, a: &CrawlArgs) -> Result<(), CliError> {
    let mut config = resolve(cli, RunConfig::with_seed)?;
    let c = &mut config.crawl;
    if let Some(w) = a.workers {
        c.workers = w;
    }
    if let Some(r) = a.rate {
        c.rate = r;
    }
    if let Some(d) = a.crawl_delay {
        if !(d > 0.0) {
            return Err(usage("--crawl-delay must be positive"));
        }
        c.rate = 1.0 / d;
    }
    if let Some(n) = a.identities {
        c.identities = n;
    }
    if a.burst.is_some() {
        c.burst = a.burst;
    }
    if let Some(p) = a.max_passes {
        c.max_passes = p;
    }
    if !a.proxies.is_empty() {
        c.proxies = a.proxies.clone();
    }
    config.validate().map_err(config_error)?;

    let fixture = match (a.transport, &a.fixture_dir) {
        (TransportArg::Fixture, Some(dir)) => Some(load_fixture_server(dir)?.with_failures(a.failure_rate, config.seed)),
        (TransportArg::Fixture, None) => return Err(usage("--transport fixture needs --fixture-dir")),
        (TransportArg::Http, _) => None,
    };
    let phase = match a.phase {
        PhaseArg::Listings => Phase::Listings,
        PhaseArg::Policies => Phase::Policies,
    };
    let urls = match phase {
        Phase::Listings => match (&a.urls, &a.fixture_dir) {
            (Some(p), _) => read_url_list(p).map_err(WorkflowError::from)?,
            (None, Some(d)) if d.join("listings.txt").is_file() => read_url_list(&d.join("listings.txt")).map_err(WorkflowError::from)?,
            _ => return Err(usage("listings phase needs --urls")),
        },
        Phase::Policies => {
            let catalog = a.catalog.as_ref().ok_or_else(|| usage("policies phase needs --catalog"))?;
            policy_urls(&load_catalog(catalog)?)
        }
    };

    let mut pool = identity_pool(&config)?;
    let (ledger, results) = match fixture {
        Some(server) => crawl(make_tasks(&urls, phase), &config, &mut pool, &server, Clock::Simulated(0))?,
        None => {
            let transport = http_transport(&pool, config.crawl.request_timeout_ms)?;
            crawl(make_tasks(&urls, phase), &config, &mut pool, transport.as_ref(), Clock::Wall)?
        }
    };

    fs::create_dir_all(&a.out).map_err(WorkflowError::from)?;
    ledger.write_jsonl(fs::File::create(a.out.join("ledger.jsonl")).map_err(WorkflowError::from)?)?;
    let mut summary = json!({
        "phase": match phase { Phase::Listings => "listings", Phase::Policies => "policies" },
        "tasks": urls.len(),
        "status_counts": ledger.status_counts().iter().map(|(k, v)| (format!("{k:?}"), *v)).collect::<BTreeMap<_, _>>(),
        "passes": ledger.pass_boundaries.len() + 1,
        "elapsed_ns": ledger.finished_at - ledger.started_at,
        "hourly_throughput": ledger.hourly_throughput(),
    });
    match phase {
        Phase::Listings => {
            let (apps, bad) = collect_listings(&results);
            write_catalog(&a.out.join("catalog.jsonl"), &apps)?;
            summary["apps"] = json!(apps.len());
            summary["unparsed"] = json!(bad.iter().map(|(u, e)| json!({"url": u, "error": e})).collect::<Vec<_>>());
        }
        Phase::Policies => {
            let store = store_unclassified(&results);
            store.save(&a.out)?;
            summary["pages"] = json!(store.len());
        }
    }
    print_json(&summary);
    Ok(())
}

#[cfg(feature = "http")]
fn http_transport(pool: &atlas_core::pipeline::IdentityPool, timeout_ms: u64) -> Result<Box<dyn Transport>, CliError> {
    let ids = (0..pool.len()).map(|i| pool.identity(i).cloned()).collect::<Result<Vec<_>, _>>()?;
    Ok(Box::new(atlas_core::pipeline::HttpTransport::new(&ids, std::time::Duration::from_millis(timeout_ms))?))
}

#[cfg(not(feature = "http"))]
fn http_transport(_pool: &atlas_core::pipeline::IdentityPool, _timeout_ms: u64) -> Result<Box<dyn Transport>, CliError> {
    Err(usage("this build has no http transport"))
}

fn cmd_detect(cli: &Cli, a: &DetectArgs) -> Result<(), CliError> {
    let store = PolicyStore::load(&a.store)?;
    let detector = match (&a.model, &a.training) {
        (Some(path), _) => DetectorModel::load(path)?,
        (None, Some(training)) => {
            let config = resolve(cli, RunConfig::with_seed)?;
            let labeled = read_detector_training(training)?;
            train_detector(&labeled, &DetectorConfig { seed: config.seed, ..Default::default() })?.0
        }
        (None, None) => return Err(usage("detect needs --training or --model")),
    };
    if let Some(path) = &a.save_model {
        detector.save(path)?;
    }
    let out = reclassify_store(&store, &detector);
    out.save(a.out.as_ref().unwrap_or(&a.store))?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for d in out.iter() {
        *counts.entry(format!("{:?}", d.page_class)).or_default() += 1;
    }
    print_json(&json!({ "pages": out.len(), "page_classes": counts }));
    Ok(())
}

fn cmd_dedupe(a: &DedupeArgs) -> Result<(), CliError> {
    let catalog = load_catalog(&a.catalog)?;
    let store = PolicyStore::load(&a.store)?;
    let (corpus, summary) = dedupe_policies(&catalog, &store, DedupeOptions { normalize_urls: a.normalize_urls });
    corpus.save(&a.out)?;
    print_json(&json!({ "entries": corpus.len(), "summary": summary }));
    Ok(())
}

fn cmd_adoption(a: &AdoptionArgs) -> Result<(), CliError> {
    let catalog = load_catalog(&a.catalog)?;
    let store = PolicyStore::load(&a.store)?;
    let stats = adoption_report(&catalog, &store)?;
    match &a.out {
        Some(path) => write_json(path, &stats)?,
        None => print_json(&serde_json::to_value(&stats).map_err(WorkflowError::from)?),
    }
    Ok(())
}

fn meta_path(splits: &Path) -> PathBuf {
    let mut name = splits.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    splits.with_file_name(name)
}

fn cmd_sample(cli: &Cli, a: &SampleArgs) -> Result<(), CliError> {
    let mut config = resolve(cli, RunConfig::with_seed)?;
    if let Some(e) = a.eps {
        config.sampler.eps = e;
    }
    if let Some(m) = a.min_samples {
        config.sampler.min_samples = m;
    }
    if let Some(k) = a.k {
        config.sampler.k = k;
    }
    if let Some(n) = a.train_size {
        config.sizes.train = n;
    }
    if let Some(n) = a.validation_size {
        config.sizes.validation = n;
    }
    if let Some(n) = a.test_size {
        config.sizes.test = n;
    }
    config.validate().map_err(config_error)?;
    let corpus = PolicyCorpus::load(&a.corpus)?;
    let splits = sample_all(&corpus, &config)?;
    write_splits_jsonl(&splits, fs::File::create(&a.out).map_err(WorkflowError::from)?)?;
    let meta = splits_metadata(&splits);
    write_json(&a.meta_out.clone().unwrap_or_else(|| meta_path(&a.out)), &meta)?;
    let first = splits.first().map(|s| &s.meta);
    print_json(&json!({
        "data_types": splits.len(),
        "n_clusters": first.map(|m| m.n_clusters),
        "n_noise": first.map(|m| m.n_noise),
        "sizes": config.sizes,
    }));
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    let config = resolve(cli, RunConfig::with_seed)?;
    let corpus = PolicyCorpus::load(&a.corpus)?;
    let meta_file = a.meta.clone().unwrap_or_else(|| meta_path(&a.splits));
    let meta: BTreeMap<String, SplitMeta> =
        serde_json::from_slice(&fs::read(&meta_file).map_err(WorkflowError::from)?).map_err(WorkflowError::from)?;
    let splits = read_splits_jsonl(BufReader::new(fs::File::open(&a.splits).map_err(WorkflowError::from)?), &meta)?;
    let mut externals = Vec::new();
    for arg in &a.externals {
        let (name, path) = arg.split_once('=').ok_or_else(|| usage(format!("--external expects NAME=PATH, got {arg:?}")))?;
        let profiles = read_predictions(fs::File::open(path).map_err(WorkflowError::from)?)?;
        externals.push((ArchitectureId::new(name), profiles));
    }
    let texts = TextIndex::from_corpus(&corpus);
    let ensemble = train_with_externals(&splits, &texts, &config, &externals)?;
    save_bundle(&a.out, &ensemble)?;
    let evaluation = evaluate_ensemble(&ensemble, &splits, &texts)?;
    write_json(&a.out.join("evaluation.json"), &evaluation)?;
    let archs: BTreeMap<String, String> =
        ensemble.models.iter().map(|(d, m)| (d.name().to_string(), m.arch.as_str().to_string())).collect();
    print_json(&json!({
        "mean_accuracy": evaluation.mean_accuracy,
        "mean_macro_f1": evaluation.mean_macro_f1,
        "architectures": archs,
    }));
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<(), CliError> {
    let ensemble = load_bundle(&a.models)?;
    let corpus = PolicyCorpus::load(&a.corpus)?;
    let profiles = predict_corpus(&ensemble, &corpus)?;
    write_predictions(fs::File::create(&a.out).map_err(WorkflowError::from)?, &profiles)?;
    print_json(&json!({ "profiles": profiles.len() }));
    Ok(())
}

fn cmd_judge(a: &JudgeArgs) -> Result<(), CliError> {
    let apps = load_catalog(&a.labels)?;
    let profiles = read_predictions(fs::File::open(&a.profiles).map_err(WorkflowError::from)?)?;
    let outcomes = judge_apps(&apps, &profiles)?;
    write_outcomes_csv(fs::File::create(&a.out).map_err(WorkflowError::from)?, &outcomes)?;
    let summaries = summarize(&apps, &outcomes);
    if let Some(path) = &a.summary_out {
        write_summary_csv(fs::File::create(path).map_err(WorkflowError::from)?, &summaries)?;
    }
    print_json(&json!({ "apps": summaries.len(), "outcomes": outcomes.len() }));
    Ok(())
}

fn cmd_report(cli: &Cli, a: &ReportArgs) -> Result<(), CliError> {
    let config = resolve(cli, RunConfig::with_seed)?;
    let apps = load_catalog(&a.labels)?;
    let outcomes = match (&a.outcomes, &a.profiles) {
        (Some(path), _) => read_outcomes_csv(fs::File::open(path).map_err(WorkflowError::from)?)?,
        (None, Some(path)) => judge_apps(&apps, &read_predictions(fs::File::open(path).map_err(WorkflowError::from)?)?)?,
        (None, None) => return Err(usage("report needs --outcomes or --profiles")),
    };
    let report = build_report(&apps, outcomes, config.to_value());
    let files = emit_report(&report, &a.out)?;
    print_json(&json!({
        "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "notes": report.notes,
    }));
    Ok(())
}

fn cmd_demo(cli: &Cli, a: &DemoArgs) -> Result<(), CliError> {
    let config = resolve(cli, demo_config)?;
    config.validate().map_err(config_error)?;
    let world = match &a.fixture_dir {
        Some(dir) => FixtureWorld::load(dir)?,
        None => {
            let mut params = WorldParams::default();
            if let Some(n) = a.apps {
                params.n_apps = n;
            }
            if let Some(n) = a.policies {
                params.n_policies = n;
            }
            let world = fixture_world(&params, config.seed);
            if let Some(dir) = &a.save_fixture {
                world.save(dir)?;
            }
            world
        }
    };
    let summary = run_fixture_workflow(&config, &world, &a.out)?;
    print_json(&json!({
        "apps": summary.n_apps,
        "policy_urls": summary.n_policy_urls,
        "corpus_size": summary.corpus_size,
        "pct_accessible_policy": summary.adoption.pct_accessible_policy,
        "mean_accuracy": summary.evaluation.mean_accuracy,
        "mean_macro_f1": summary.evaluation.mean_macro_f1,
        "outcomes": summary.n_outcomes,
        "report": a.out.join("report").display().to_string(),
    }));
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Crawl(a) => cmd_crawl(cli, a),
        Command::Detect(a) => cmd_detect(cli, a),
        Command::Dedupe(a) => cmd_dedupe(a),
        Command::Adoption(a) => cmd_adoption(a),
        Command::Sample(a) => cmd_sample(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Predict(a) => cmd_predict(a),
        Command::Judge(a) => cmd_judge(a),
        Command::Report(a) => cmd_report(cli, a),
        Command::PipelineDemo(a) => cmd_demo(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("{}", json!({ "error": "usage", "message": msg }));
            ExitCode::from(2)
        }
        Err(CliError::Step(e)) => {
            eprintln!("{}", json!({ "error": step_kind(&e), "message": e.to_string() }));
            ExitCode::from(1)
        }
    }
}
