use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::{
    cdf, issue_distribution, per_type_rates, popular_vs_other, rating_regression, CdfTable, GroupComparison,
    RegressionFit, StatsError, TypeRateRow, ALPHA,
};
use crate::corpus::AppRecord;
use crate::discrepancy::{
    summarize, write_outcomes_csv, write_summary_csv, AppDiscrepancySummary, DiscrepancyOutcome, Verdict,
    IN_POLICY_ABOVE, NOT_IN_POLICY_BELOW,
};

/// JSON Schema of `summary.json`.
pub const SUMMARY_SCHEMA: &str = include_str!("../../schemas/report_summary.schema.json");

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub outcomes: Vec<DiscrepancyOutcome>,
    pub summaries: Vec<AppDiscrepancySummary>,
    pub type_rates: Vec<TypeRateRow>,
    pub distribution: BTreeMap<usize, [usize; 3]>,
    pub cdf: Option<CdfTable>,
    pub regression: Option<Vec<RegressionFit>>,
    pub popular_vs_other: Option<Vec<GroupComparison>>,
    /// Analyses that could not be computed and why.
    pub notes: Vec<String>,
    pub run_config: Value,
}

/// Runs every analysis; ones whose preconditions fail are recorded in
/// `notes` instead of failing the report.
pub fn build_report(apps: &[AppRecord], outcomes: Vec<DiscrepancyOutcome>, run_config: Value) -> Report {
    let summaries = summarize(apps, &outcomes);
    let mut notes = Vec::new();
    let mut keep = |what: &str, e: StatsError| {
        notes.push(format!("{what}: {e}"));
    };
    let cdf = cdf(&summaries).map_err(|e| keep("cdf", e)).ok();
    let regression = rating_regression(&summaries).map_err(|e| keep("rating_regression", e)).ok();
    let popular_vs_other = popular_vs_other(&summaries).map_err(|e| keep("popular_vs_other", e)).ok();
    Report {
        type_rates: per_type_rates(&outcomes),
        distribution: issue_distribution(&summaries),
        outcomes,
        summaries,
        cdf,
        regression,
        popular_vs_other,
        notes,
        run_config,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".to_string())
}

fn csv_file(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn mean_of(summaries: &[AppDiscrepancySummary], f: impl Fn(&AppDiscrepancySummary) -> usize) -> Value {
    if summaries.is_empty() {
        Value::Null
    } else {
        json!(summaries.iter().map(&f).sum::<usize>() as f64 / summaries.len() as f64)
    }
}

fn summary_json(report: &Report) -> Value {
    let mut verdicts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in [Verdict::IncompletePolicy, Verdict::IncompleteLabel, Verdict::Consistent, Verdict::Inconclusive] {
        verdicts.insert(v.name(), 0);
    }
    for o in &report.outcomes {
        *verdicts.entry(o.verdict.name()).or_default() += 1;
    }
    let s = &report.summaries;
    let at_least_one = report.cdf.as_ref().and_then(|c| c.rows.first()).map(|r| {
        json!({"incomplete_policy": r.incomplete_policy, "incomplete_label": r.incomplete_label, "both": r.both})
    });
    let regression = report.regression.as_ref().map(|fits| {
        fits.iter()
            .map(|f| {
                json!({
                    "category": f.category.name(),
                    "n": f.correlation.n,
                    "r": f.correlation.r,
                    "p_value": f.correlation.p_value,
                    "slope": f.slope,
                    "intercept": f.intercept,
                })
            })
            .collect::<Vec<_>>()
    });
    let groups = report.popular_vs_other.as_ref().map(|rows| {
        rows.iter()
            .map(|g| {
                json!({
                    "category": g.category.name(),
                    "mean_popular": g.mean_popular,
                    "mean_other": g.mean_other,
                    "n_popular": g.n_popular,
                    "n_other": g.n_other,
                    "t": g.t,
                    "df": g.df,
                    "p_value": g.p_value,
                    "significant": g.significant,
                })
            })
            .collect::<Vec<_>>()
    });
    json!({
        "schema_version": 1,
        "n_apps": s.len(),
        "n_outcomes": report.outcomes.len(),
        "verdict_counts": verdicts,
        "mean_incomplete_policy": mean_of(s, |x| x.n_incomplete_policy),
        "mean_incomplete_label": mean_of(s, |x| x.n_incomplete_label),
        "mean_total": mean_of(s, |x| x.n_total),
        "pct_apps_with_at_least_one": at_least_one,
        "methods": {
            "two_sample_test": "welch",
            "correlation": "pearson",
            "alpha": ALPHA,
            "not_in_policy_below": NOT_IN_POLICY_BELOW,
            "in_policy_above": IN_POLICY_ABOVE,
        },
        "rating_regression": regression,
        "popular_vs_other": groups,
        "notes": report.notes,
    })
}

fn write_json(path: &Path, value: &Value) -> Result<(), StatsError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes the report bundle into `out_dir` and returns the files written.
/// Output depends only on the report contents.
pub fn emit_report(report: &Report, out_dir: &Path) -> Result<Vec<PathBuf>, StatsError> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut path = |name: &str| {
        let p = out_dir.join(name);
        written.push(p.clone());
        p
    };

    csv_file(
        &path("type_rates.csv"),
        &[
            "data_type",
            "n_declared",
            "n_not_declared",
            "incomplete_policy",
            "policy_inconclusive",
            "incomplete_label",
            "label_inconclusive",
            "incomplete_policy_rate",
            "policy_inconclusive_rate",
            "incomplete_label_rate",
            "label_inconclusive_rate",
        ],
        report.type_rates.iter().map(|r| {
            vec![
                r.data_type.name().to_string(),
                r.n_declared.to_string(),
                r.n_not_declared.to_string(),
                r.incomplete_policy.to_string(),
                r.policy_inconclusive.to_string(),
                r.incomplete_label.to_string(),
                r.label_inconclusive.to_string(),
                opt(r.incomplete_policy_rate),
                opt(r.policy_inconclusive_rate),
                opt(r.incomplete_label_rate),
                opt(r.label_inconclusive_rate),
            ]
        }),
    )?;
    csv_file(
        &path("issue_distribution.csv"),
        &["count", "apps_incomplete_policy", "apps_incomplete_label", "apps_both"],
        report.distribution.iter().map(|(k, c)| vec![k.to_string(), c[0].to_string(), c[1].to_string(), c[2].to_string()]),
    )?;
    csv_file(
        &path("issue_cdf.csv"),
        &["threshold", "incomplete_policy_pct", "incomplete_label_pct", "both_pct"],
        report.cdf.iter().flat_map(|c| &c.rows).map(|r| {
            vec![r.threshold.to_string(), r.incomplete_policy.to_string(), r.incomplete_label.to_string(), r.both.to_string()]
        }),
    )?;
    csv_file(
        &path("rating_regression.csv"),
        &["category", "n", "r", "p_value", "slope", "intercept"],
        report.regression.iter().flatten().map(|f| {
            vec![
                f.category.name().to_string(),
                f.correlation.n.to_string(),
                f.correlation.r.to_string(),
                f.correlation.p_value.to_string(),
                f.slope.to_string(),
                f.intercept.to_string(),
            ]
        }),
    )?;
    csv_file(
        &path("rating_points.csv"),
        &["app_id", "rating", "n_incomplete_policy", "n_incomplete_label"],
        report.summaries.iter().filter_map(|s| {
            s.rating.map(|r| {
                vec![s.app_id.clone(), format!("{:.1}", r.value()), s.n_incomplete_policy.to_string(), s.n_incomplete_label.to_string()]
            })
        }),
    )?;
    csv_file(
        &path("popular_vs_other.csv"),
        &["category", "mean_popular", "mean_other", "n_popular", "n_other", "t", "df", "p_value", "significant"],
        report.popular_vs_other.iter().flatten().map(|g| {
            vec![
                g.category.name().to_string(),
                g.mean_popular.to_string(),
                g.mean_other.to_string(),
                g.n_popular.to_string(),
                g.n_other.to_string(),
                g.t.to_string(),
                g.df.to_string(),
                g.p_value.to_string(),
                g.significant.to_string(),
            ]
        }),
    )?;
    write_outcomes_csv(fs::File::create(path("outcomes.csv"))?, &report.outcomes)?;
    write_summary_csv(fs::File::create(path("app_summaries.csv"))?, &report.summaries)?;
    write_json(&path("summary.json"), &summary_json(report))?;
    write_json(&path("run_config.json"), &report.run_config)?;
    Ok(written)
}
