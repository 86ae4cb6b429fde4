//! One full fixture run: artifacts, internal consistency and the report
//! schema.

use atlas_core::corpus::load_catalog;
use atlas_core::discrepancy::read_outcomes_csv;
use atlas_core::stats::SUMMARY_SCHEMA;
use atlas_core::synth::{fixture_world, WorldParams};
use atlas_core::workflow::{demo_config, run_fixture_workflow};
use atlas_core::DataType;
use std::fs;

#[test]
fn fixture_workflow_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let seed = 31;
    let world = fixture_world(&WorldParams::default(), seed);
    let summary = run_fixture_workflow(&demo_config(seed), &world, tmp.path()).unwrap();

    assert_eq!(summary.n_apps, world.apps.len());
    assert_eq!(summary.dedupe.eligible_apps + summary.dedupe.skipped_no_label + summary.dedupe.skipped_no_policy_url
        + summary.dedupe.skipped_inaccessible, summary.n_apps);
    assert!(summary.corpus_size > 0 && summary.corpus_size <= summary.n_policy_urls);
    let a = &summary.adoption;
    assert!((a.pct_accessible_policy + a.pct_extraneous + a.pct_dead_links - 100.0).abs() < 1e-9);
    assert!(summary.evaluation.mean_macro_f1 > 0.8, "macro F1 {}", summary.evaluation.mean_macro_f1);
    assert!(summary.policies_finished_at > summary.listings_finished_at);

    let apps = load_catalog(&tmp.path().join("catalog.jsonl")).unwrap();
    assert_eq!(apps.len(), summary.n_apps);
    let report = tmp.path().join("report");
    let outcomes = read_outcomes_csv(fs::File::open(report.join("outcomes.csv")).unwrap()).unwrap();
    assert_eq!(outcomes.len(), summary.n_outcomes);
    assert_eq!(outcomes.len() % DataType::COUNT, 0);

    let summary_json: serde_json::Value = serde_json::from_slice(&fs::read(report.join("summary.json")).unwrap()).unwrap();
    let schema: serde_json::Value = serde_json::from_str(SUMMARY_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&summary_json).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "summary.json violates its schema: {errors:?}");
    assert_eq!(summary_json["n_outcomes"], outcomes.len());
    let counts = &summary_json["verdict_counts"];
    let total: u64 = ["IncompletePolicy", "IncompleteLabel", "Consistent", "Inconclusive"].iter().map(|k| counts[k].as_u64().unwrap()).sum();
    assert_eq!(total as usize, outcomes.len());
}
