//! Property tests for the stated invariants of each module.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use atlas_core::corpus::{adoption_report, dedupe_policies, DedupeOptions, FetchStatus, PageClass, PolicyDocument, PolicyStore};
use atlas_core::discrepancy::{judge, summarize, verdict};
use atlas_core::labelers::{
    compute_metrics, external_model, not_collected, select_ensemble, ArchitectureId, ArchitectureRoster, Candidate,
    ClassMetrics, Confusion, LOGISTIC, MLP,
};
use atlas_core::pipeline::{make_tasks, run_phase, Clock, FixturePage, FixtureServer, IdentityPool, Phase, PipelineConfig, ResultStore, TokenBucket, SECOND};
use atlas_core::policy_detector::{classify_page, train_detector, DetectorConfig, DetectorModel};
use atlas_core::sampler::{dbscan, importance_sample, two_proportion_z, ClusterLabel};
use atlas_core::stats::{cdf, pearson, welch_t};
use atlas_core::textfeat::fit_lsa;
use atlas_core::{AppRecord, DataType, PredictedPolicyProfile, PrivacyLabel, SparseVector, Verdict};
use proptest::prelude::*;

fn app(i: usize, url: Option<String>, label: Option<u32>, popular: bool) -> AppRecord {
    AppRecord {
        app_id: format!("app{i}"),
        name: String::new(),
        category: String::new(),
        is_popular: popular,
        rating: None,
        policy_url: url,
        label: label.map(PrivacyLabel::from_bits),
    }
}

fn catalog_strategy() -> impl Strategy<Value = (Vec<AppRecord>, Vec<u8>)> {
    let apps = prop::collection::vec((prop::option::weighted(0.9, 0usize..12), prop::option::weighted(0.85, any::<u32>()), any::<bool>()), 1..60);
    let classes = prop::collection::vec(0u8..3, 12);
    (apps, classes).prop_map(|(apps, classes)| {
        let apps = apps
            .into_iter()
            .enumerate()
            .map(|(i, (u, l, pop))| app(i, u.map(|u| format!("https://u{u}.test/p")), l, pop))
            .collect();
        (apps, classes)
    })
}

fn store_for(classes: &[u8]) -> PolicyStore {
    let mut store = PolicyStore::new();
    for (u, c) in classes.iter().enumerate() {
        let url = format!("https://u{u}.test/p");
        let doc = match c {
            0 => PolicyDocument::fetched(&url, &url, b"<p>privacy</p>".to_vec(), PageClass::AccessiblePolicy, 0),
            1 => PolicyDocument::fetched(&url, &url, b"<p>login</p>".to_vec(), PageClass::Extraneous, 0),
            _ => PolicyDocument::failed(&url, FetchStatus::Dead, 0),
        };
        store.insert(doc);
    }
    store
}

fn dense_rows(rows: &[Vec<f64>]) -> Vec<SparseVector> {
    rows.iter().map(|r| SparseVector::from_dense(r)).collect()
}

fn detector() -> &'static DetectorModel {
    static MODEL: OnceLock<DetectorModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let mut pages = Vec::new();
        for i in 0..20 {
            pages.push((format!("<html><body><p>this privacy policy explains how we collect and share your personal data {i}</p></body></html>"), true));
            pages.push((format!("<html><body><p>sign in to your account or create a new one to continue shopping {i}</p></body></html>"), false));
        }
        train_detector(&pages, &DetectorConfig::default()).unwrap().0
    })
}

fn metrics_with(f: f64) -> ClassMetrics {
    ClassMetrics::from_confusion(Confusion { tp: 1, fp: 0, fn_: 0, tn: 1 }).map(|mut m| {
        m.macro_f1 = f;
        m
    }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn dedupe_conserves_apps_and_merges_supersets((apps, classes) in catalog_strategy()) {
        let store = store_for(&classes);
        let (corpus, summary) = dedupe_policies(&apps, &store, DedupeOptions::default());
        let urls: Vec<&str> = corpus.entries.iter().map(|e| e.policy_url.as_str()).collect();
        prop_assert_eq!(urls.iter().collect::<BTreeSet<_>>().len(), urls.len());
        prop_assert_eq!(corpus.entries.iter().map(|e| e.app_ids.len()).sum::<usize>(), summary.eligible_apps);
        let mut seen = BTreeSet::new();
        for e in &corpus.entries {
            let mut union = PrivacyLabel::from_bits(0);
            for id in &e.app_ids {
                prop_assert!(seen.insert(id.clone()), "{} in two entries", id);
                let a = apps.iter().find(|a| &a.app_id == id).unwrap();
                let l = a.label.unwrap();
                prop_assert!(e.merged_label.is_superset(l));
                union = union.union(l);
            }
            prop_assert_eq!(union, e.merged_label);
        }
        let stats = adoption_report(&apps, &store).unwrap();
        if stats.n_with_policy_url > 0 {
            prop_assert!((stats.pct_accessible_policy + stats.pct_extraneous + stats.pct_dead_links - 100.0).abs() < 1e-9);
        }
        for p in [stats.pct_accessible_policy, stats.pct_extraneous, stats.pct_dead_links, stats.pct_label, stats.pct_both] {
            prop_assert!((0.0..=100.0).contains(&p));
        }
    }

    #[test]
    fn judge_counts_and_verdict_implications(bits in any::<u32>(), probs in prop::collection::vec(0.0f64..=1.0, 32)) {
        let a = app(0, Some("https://x.test/p".into()), Some(bits), false);
        let profile = PredictedPolicyProfile::new("https://x.test/p", probs.clone()).unwrap();
        let outcomes = judge(&a, &profile).unwrap();
        prop_assert_eq!(outcomes.len(), 32);
        for o in &outcomes {
            match o.verdict {
                Verdict::IncompletePolicy => prop_assert!(o.declared && o.p < 0.25),
                Verdict::IncompleteLabel => prop_assert!(!o.declared && o.p > 0.75),
                Verdict::Inconclusive => prop_assert!((0.25..=0.75).contains(&o.p)),
                Verdict::Consistent => {
                    let agrees = if o.declared { o.p > 0.75 } else { o.p < 0.25 };
                    prop_assert!(agrees)
                }
            }
            prop_assert_eq!(profile.p_not(o.data_type), not_collected(o.p));
            prop_assert_eq!(profile.p_not(o.data_type), 1.0 - profile.p(o.data_type));
        }
        let s = &summarize(&[a], &outcomes)[0];
        prop_assert_eq!(s.n_total, s.n_incomplete_policy + s.n_incomplete_label);
        prop_assert!(s.n_total <= 32);
        prop_assert!(cdf(&[s.clone()]).unwrap().rows.windows(2).all(|w| w[1].both <= w[0].both));
    }

    #[test]
    fn undeclared_verdict_only_moves_toward_incomplete_label(mut ps in prop::collection::vec(0.0f64..=1.0, 2..20)) {
        ps.sort_by(f64::total_cmp);
        let rank = |v: Verdict| match v { Verdict::Consistent => 0, Verdict::Inconclusive => 1, Verdict::IncompleteLabel => 2, Verdict::IncompletePolicy => 3 };
        let ranks: Vec<_> = ps.iter().map(|&p| rank(verdict(false, p).unwrap())).collect();
        prop_assert!(ranks.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(ranks.iter().all(|&r| r != 3));
    }

    #[test]
    fn z_test_symmetry_and_monotonicity(n in 2usize..200) {
        let mut last = f64::INFINITY;
        for pos in (n / 2 + n % 2)..=n {
            let a = two_proportion_z(pos, n - pos).unwrap();
            let b = two_proportion_z(n - pos, pos).unwrap();
            prop_assert_eq!(a.z, -b.z);
            prop_assert_eq!(a.p_value, b.p_value);
            prop_assert!((0.0..=1.0).contains(&a.p_value));
            prop_assert!(a.p_value <= last);
            last = a.p_value;
        }
    }

    #[test]
    fn pearson_symmetric_and_affine_invariant(
        xy in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
        scale in 0.1f64..10.0, shift in -50.0f64..50.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let (Ok(a), Ok(b)) = (pearson(&x, &y), pearson(&y, &x)) else { return Ok(()) };
        prop_assert_eq!(a.r, b.r);
        prop_assert!(a.r.abs() <= 1.0 && (0.0..=1.0).contains(&a.p_value));
        let xs: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
        let c = pearson(&xs, &y).unwrap();
        prop_assert!((c.r - a.r).abs() < 1e-9);
    }

    #[test]
    fn welch_swap(a in prop::collection::vec(-10.0f64..10.0, 2..30), b in prop::collection::vec(-10.0f64..10.0, 2..30)) {
        let (ab, ba) = (welch_t(&a, &b).unwrap(), welch_t(&b, &a).unwrap());
        prop_assert_eq!(ab.t, -ba.t);
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn metrics_swap_and_threshold_monotonicity(rows in prop::collection::vec((0.0f64..1.0, any::<bool>()), 4..80)) {
        let (probs, truth): (Vec<f64>, Vec<bool>) = rows.into_iter().unzip();
        prop_assume!(truth.iter().any(|&t| t) && truth.iter().any(|&t| !t));
        let m = compute_metrics(&probs, &truth, 0.5).unwrap();
        prop_assert_eq!(m.macro_f1, (m.f1_pos + m.f1_neg) / 2.0);
        for v in [m.precision_pos, m.recall_pos, m.f1_pos, m.precision_neg, m.recall_neg, m.f1_neg, m.accuracy] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let hard: Vec<bool> = probs.iter().map(|&p| p > 0.5).collect();
        let swapped = ClassMetrics::from_confusion(Confusion::from_predictions(
            &hard.iter().map(|p| !p).collect::<Vec<_>>(),
            &truth.iter().map(|t| !t).collect::<Vec<_>>(),
        )).unwrap();
        prop_assert!((swapped.macro_f1 - m.macro_f1).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for k in 0..=10 {
            let r = compute_metrics(&probs, &truth, k as f64 / 10.0).unwrap().recall_pos;
            prop_assert!(r <= last);
            last = r;
        }
    }

    #[test]
    fn selection_ignores_enumeration_order(scores in prop::collection::vec((0u8..4, 0u8..4), 32), seed in any::<u64>()) {
        let mut cands = Vec::new();
        for (d, (lr, mlp)) in DataType::ALL.into_iter().zip(&scores) {
            for (arch, f) in [(LOGISTIC, *lr), (MLP, *mlp)] {
                cands.push(Candidate {
                    model: external_model(ArchitectureId::new(arch), d, BTreeMap::new(), &[]),
                    validation: metrics_with(f as f64 / 4.0),
                });
            }
        }
        let roster = ArchitectureRoster::default();
        let a = select_ensemble(cands.clone(), &roster).unwrap();
        let mut shuffled = cands;
        let n = shuffled.len();
        for i in 0..n {
            let j = (seed.rotate_left(i as u32) as usize ^ i) % n;
            shuffled.swap(i, j);
        }
        prop_assert_eq!(select_ensemble(shuffled, &roster).unwrap(), a);
    }

    #[test]
    fn lsa_components_orthonormal_and_projection_linear(
        rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 12), 12..30),
        x in prop::collection::vec(-1.0f64..1.0, 12), y in prop::collection::vec(-1.0f64..1.0, 12),
        a in -3.0f64..3.0, b in -3.0f64..3.0,
    ) {
        let p = fit_lsa(&dense_rows(&rows), 5, 1).unwrap();
        let c = p.components();
        for i in 0..c.len() {
            for j in 0..c.len() {
                let g: f64 = c[i].iter().zip(&c[j]).map(|(u, v)| u * v).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((g - want).abs() < 1e-8);
            }
        }
        let s = p.singular_values();
        prop_assert!(s.windows(2).all(|w| w[1] <= w[0]) && s.iter().all(|&v| v >= 0.0));
        let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (px, py) = (p.project(&SparseVector::from_dense(&x)).unwrap(), p.project(&SparseVector::from_dense(&y)).unwrap());
        let pc = p.project(&SparseVector::from_dense(&combo)).unwrap();
        for k in 0..pc.len() {
            prop_assert!((pc[k] - (a * px[k] + b * py[k])).abs() < 1e-8);
        }
    }

    #[test]
    fn dbscan_labels_dense_and_total(points in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..80), eps in 0.2f64..2.0, min in 1usize..6) {
        let a = dbscan(&points, eps, min);
        prop_assert_eq!(a.labels.len(), points.len());
        let ids: BTreeSet<usize> = a.labels.iter().filter_map(|l| l.cluster()).collect();
        prop_assert_eq!(ids, (0..a.n_clusters).collect::<BTreeSet<_>>());
        prop_assert_eq!(a.noise_count(), a.labels.iter().filter(|l| **l == ClusterLabel::Noise).count());
    }

    #[test]
    fn importance_sample_reproducible_and_in_pool(
        points in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 10..60),
        cents in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 0..4),
        seed in any::<u64>(),
    ) {
        let pool: Vec<usize> = (0..points.len()).filter(|i| i % 3 != 0).collect();
        let n = pool.len();
        let a = importance_sample(&points, &pool, &cents, n, seed).unwrap();
        prop_assert_eq!(&a, &importance_sample(&points, &pool, &cents, n, seed).unwrap());
        prop_assert!(a.iter().all(|i| pool.contains(i)));
        prop_assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), a.len());
    }

    #[test]
    fn token_bucket_never_exceeds_window_bound(gaps in prop::collection::vec(0u64..3 * SECOND, 1..200), limit in 0.5f64..20.0, burst in 1u32..6) {
        let mut bucket = TokenBucket::new(limit, burst);
        let mut now = 0;
        let mut admitted = Vec::new();
        for g in gaps {
            now += g;
            if bucket.try_admit(now) {
                admitted.push(now);
            }
            admitted.push(bucket.reserve(now));
        }
        admitted.sort_unstable();
        for i in 0..admitted.len() {
            for j in i..admitted.len() {
                let w = (admitted[j] - admitted[i]) as f64 / SECOND as f64;
                prop_assert!(j - i + 1 <= (limit * w).ceil() as usize + burst as usize);
            }
        }
    }

    #[test]
    fn detector_ignores_duplicate_whitespace(words in prop::collection::vec("[a-z]{1,8}", 1..30), pads in prop::collection::vec(1usize..4, 30)) {
        let plain = format!("<html><body><p>{}</p></body></html>", words.join(" "));
        let padded_words: Vec<String> = words.iter().zip(&pads).map(|(w, &k)| format!("{w}{}", " \n\t".repeat(k))).collect();
        let padded = format!("<html>\n  <body>  <p>  {}</p>\n</body></html>", padded_words.join(" "));
        let (a, b) = (classify_page(detector(), plain.as_bytes()), classify_page(detector(), padded.as_bytes()));
        prop_assert_eq!(a.probability, b.probability);
        prop_assert!((0.0..=1.0).contains(&a.probability));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn fixture_crawl_is_deterministic_and_conserves_ok(n in 1usize..120, rate in 0.0f64..0.5, seed in any::<u64>(), workers in 1usize..6) {
        let urls: Vec<String> = (0..n).map(|i| format!("https://s{i}.test/")).collect();
        let pages = urls.iter().map(|u| (u.clone(), FixturePage::Ok { body: b"ok".to_vec() })).collect();
        let server = FixtureServer::new(pages).with_failures(rate, seed);
        let config = PipelineConfig { workers, max_passes: 3, ..Default::default() };
        let run = || {
            let mut pool = IdentityPool::new(3, 2.0, None).unwrap();
            let mut store = ResultStore::new();
            run_phase(make_tasks(&urls, Phase::Policies), &config, &mut pool, &server, &mut store, Clock::Simulated(0)).unwrap()
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.terminal.len(), n);
        prop_assert_eq!(a.hourly_throughput().iter().sum::<u64>() as usize, a.ok_count());
        prop_assert!(a.attempts.iter().all(|r| r.attempt <= 3));
    }
}
