use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use atlas_core::corpus::write_catalog;
use atlas_core::labelers::write_predictions;
use atlas_core::{AppRecord, DataType, PredictedPolicyProfile, PrivacyLabel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn atlas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atlas")).args(args).env_remove("ATLAS_SEED").output().expect("binary runs")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).expect("stderr is one JSON object")
}

#[test]
fn help_exits_zero() {
    let out = atlas(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["crawl", "detect", "dedupe", "adoption", "sample", "train", "predict", "judge", "report", "pipeline-demo"] {
        assert!(text.contains(sub), "help lists {sub}");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(atlas(&["judge", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(atlas(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = atlas(&["sample", "--corpus", "absent.jsonl", "--out", dir.path().join("s").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");
}

#[test]
fn env_seed_is_accepted_and_bad_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_atlas"))
        .args(["sample", "--corpus", dir.path().join("absent.jsonl").to_str().unwrap(), "--out", "x"])
        .env("ATLAS_SEED", "3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert!(err["message"].as_str().is_some_and(|m| !m.is_empty()));
}

#[test]
fn moved_threshold_in_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, "seed = 1\n[thresholds]\nalpha = 0.1\n").unwrap();
    let out = atlas(&["--config", config.to_str().unwrap(), "sample", "--corpus", "c", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
}

/// Independent statement of the decision rule.
fn reference_verdict(declared: bool, p: f64) -> &'static str {
    let band = if p < 0.25 {
        -1
    } else if p > 0.75 {
        1
    } else {
        0
    };
    match (declared, band) {
        (_, 0) => "Inconclusive",
        (true, -1) => "IncompletePolicy",
        (false, 1) => "IncompleteLabel",
        _ => "Consistent",
    }
}

fn write_inputs(dir: &Path, seed: u64) -> (Vec<AppRecord>, Vec<PredictedPolicyProfile>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles: Vec<PredictedPolicyProfile> = (0..8)
        .map(|j| {
            let probs = (0..DataType::COUNT)
                .map(|_| match rng.gen_range(0..5) {
                    0 => 0.25,
                    1 => 0.75,
                    _ => rng.gen::<f64>(),
                })
                .collect();
            PredictedPolicyProfile::new(format!("https://p{j}.test/privacy"), probs).unwrap()
        })
        .collect();
    let apps: Vec<AppRecord> = (0..40)
        .map(|i| AppRecord {
            app_id: format!("app{i:02}"),
            name: format!("App {i}"),
            category: "Tools".into(),
            is_popular: i % 3 == 0,
            rating: None,
            policy_url: Some(format!("https://p{}.test/privacy", rng.gen_range(0..10))),
            label: (i % 7 != 0).then(|| PrivacyLabel::from_bits(rng.gen::<u32>())),
        })
        .collect();
    write_catalog(&dir.join("catalog.jsonl"), &apps).unwrap();
    write_predictions(fs::File::create(dir.join("pred.csv")).unwrap(), &profiles).unwrap();
    (apps, profiles)
}

#[test]
fn judge_matches_reference() {
    let dir = tempfile::tempdir().unwrap();
    let (apps, profiles) = write_inputs(dir.path(), 11);
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let out = atlas(&["judge", "--labels", &d("catalog.jsonl"), "--profiles", &d("pred.csv"), "--out", &d("out.csv")]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let by_url: BTreeMap<&str, &PredictedPolicyProfile> = profiles.iter().map(|p| (p.policy_url.as_str(), p)).collect();
    let mut expected = Vec::new();
    for app in &apps {
        let (Some(label), Some(profile)) = (app.label, app.policy_url.as_deref().and_then(|u| by_url.get(u))) else { continue };
        for d in DataType::ALL {
            expected.push((app.app_id.clone(), d.name().to_string(), reference_verdict(label.contains(d), profile.p(d)).to_string()));
        }
    }
    let mut reader = csv::Reader::from_path(dir.path().join("out.csv")).unwrap();
    let got: Vec<(String, String, String)> =
        reader.records().map(|r| r.unwrap()).map(|r| (r[0].to_string(), r[1].to_string(), r[2].to_string())).collect();
    assert!(!expected.is_empty());
    assert_eq!(got, expected);
}

#[test]
fn report_from_outcomes_and_from_profiles_agree() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path(), 5);
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    assert_eq!(atlas(&["judge", "--labels", &d("catalog.jsonl"), "--profiles", &d("pred.csv"), "--out", &d("out.csv")]).status.code(), Some(0));
    let a = atlas(&["--seed", "1", "report", "--labels", &d("catalog.jsonl"), "--outcomes", &d("out.csv"), "--out", &d("ra")]);
    let b = atlas(&["--seed", "1", "report", "--labels", &d("catalog.jsonl"), "--profiles", &d("pred.csv"), "--out", &d("rb")]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(b.status.code(), Some(0));
    let mut names: Vec<_> = fs::read_dir(dir.path().join("ra")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        assert_eq!(fs::read(dir.path().join("ra").join(&n)).unwrap(), fs::read(dir.path().join("rb").join(&n)).unwrap(), "{n:?}");
    }
}
