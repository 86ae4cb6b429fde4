//! Aggregate discrepancy analytics.

mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::DataType;
use crate::discrepancy::{AppDiscrepancySummary, DiscrepancyOutcome, Verdict};
use crate::special::student_t_two_tailed;

pub use report::{build_report, emit_report, Report, SUMMARY_SCHEMA};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("no input")]
    EmptyInput,
    #[error("zero variance")]
    DegenerateVariance,
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("no {0} apps")]
    MissingGroup(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Discrepancy(#[from] crate::discrepancy::DiscrepancyError),
}

/// Per data type counts and rates. Rates are percentages of their
/// denominator; `None` when the denominator is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeRateRow {
    pub data_type: DataType,
    pub n_declared: usize,
    pub n_not_declared: usize,
    pub incomplete_policy: usize,
    pub policy_inconclusive: usize,
    pub incomplete_label: usize,
    pub label_inconclusive: usize,
    pub incomplete_policy_rate: Option<f64>,
    pub policy_inconclusive_rate: Option<f64>,
    pub incomplete_label_rate: Option<f64>,
    pub label_inconclusive_rate: Option<f64>,
}

fn rate(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

pub fn per_type_rates(outcomes: &[DiscrepancyOutcome]) -> Vec<TypeRateRow> {
    // [declared, not declared, IP, policy inconclusive, IL, label inconclusive]
    let mut counts = [[0usize; 6]; DataType::COUNT];
    for o in outcomes {
        let c = &mut counts[o.data_type.index()];
        if o.declared {
            c[0] += 1;
            match o.verdict {
                Verdict::IncompletePolicy => c[2] += 1,
                Verdict::Inconclusive => c[3] += 1,
                _ => {}
            }
        } else {
            c[1] += 1;
            match o.verdict {
                Verdict::IncompleteLabel => c[4] += 1,
                Verdict::Inconclusive => c[5] += 1,
                _ => {}
            }
        }
    }
    DataType::ALL
        .into_iter()
        .map(|d| {
            let c = counts[d.index()];
            TypeRateRow {
                data_type: d,
                n_declared: c[0],
                n_not_declared: c[1],
                incomplete_policy: c[2],
                policy_inconclusive: c[3],
                incomplete_label: c[4],
                label_inconclusive: c[5],
                incomplete_policy_rate: rate(c[2], c[0]),
                policy_inconclusive_rate: rate(c[3], c[0]),
                incomplete_label_rate: rate(c[4], c[1]),
                label_inconclusive_rate: rate(c[5], c[1]),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub threshold: usize,
    pub incomplete_policy: f64,
    pub incomplete_label: f64,
    pub both: f64,
}

/// Percentage of apps with at least `threshold` issues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfTable {
    pub n_apps: usize,
    pub rows: Vec<CdfRow>,
}

pub fn cdf(summaries: &[AppDiscrepancySummary]) -> Result<CdfTable, StatsError> {
    if summaries.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let n = summaries.len();
    let max = summaries.iter().map(|s| s.n_total).max().unwrap_or(0).max(1);
    let pct = |k: usize, f: &dyn Fn(&AppDiscrepancySummary) -> usize| {
        100.0 * summaries.iter().filter(|s| f(s) >= k).count() as f64 / n as f64
    };
    let rows = (1..=max)
        .map(|k| CdfRow {
            threshold: k,
            incomplete_policy: pct(k, &|s| s.n_incomplete_policy),
            incomplete_label: pct(k, &|s| s.n_incomplete_label),
            both: pct(k, &|s| s.n_total),
        })
        .collect();
    Ok(CdfTable { n_apps: n, rows })
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Pearson product-moment correlation with a two-tailed Student-t p-value
/// on `n - 2` degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFewSamples { needed: 3, found: n });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        student_t_two_tailed(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok(CorrelationResult { r, p_value, n })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

/// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of
/// freedom.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult, StatsError> {
    for g in [a, b] {
        if g.len() < 2 {
            return Err(StatsError::TooFewSamples { needed: 2, found: g.len() });
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (na - 1.0);
    let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (nb - 1.0);
    let (qa, qb) = (va / na, vb / nb);
    let se2 = qa + qb;
    let diff = ma - mb;
    if se2 == 0.0 {
        let (t, p_value) = if diff == 0.0 { (0.0, 1.0) } else { (diff.signum() * f64::INFINITY, 0.0) };
        return Ok(WelchResult { t, df: na + nb - 2.0, p_value, mean_a: ma, mean_b: mb });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    Ok(WelchResult { t, df, p_value: student_t_two_tailed(t, df), mean_a: ma, mean_b: mb })
}

/// Least-squares line `y = slope * x + intercept`.
pub fn ols(x: &[f64], y: &[f64]) -> Result<(f64, f64), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, found: x.len() });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IssueCategory {
    IncompletePolicy,
    IncompleteLabel,
    Both,
}

impl IssueCategory {
    pub const ALL: [IssueCategory; 3] = [IssueCategory::IncompletePolicy, IssueCategory::IncompleteLabel, IssueCategory::Both];

    pub fn name(self) -> &'static str {
        match self {
            IssueCategory::IncompletePolicy => "IncompletePolicy",
            IssueCategory::IncompleteLabel => "IncompleteLabel",
            IssueCategory::Both => "Both",
        }
    }

    pub fn count(self, s: &AppDiscrepancySummary) -> usize {
        match self {
            IssueCategory::IncompletePolicy => s.n_incomplete_policy,
            IssueCategory::IncompleteLabel => s.n_incomplete_label,
            IssueCategory::Both => s.n_total,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub category: IssueCategory,
    pub mean_popular: f64,
    pub mean_other: f64,
    pub n_popular: usize,
    pub n_other: usize,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Welch test of popular against other apps, one row per category.
pub fn popular_vs_other(summaries: &[AppDiscrepancySummary]) -> Result<Vec<GroupComparison>, StatsError> {
    let (popular, other): (Vec<_>, Vec<_>) = summaries.iter().partition(|s| s.is_popular);
    if popular.is_empty() {
        return Err(StatsError::MissingGroup("popular"));
    }
    if other.is_empty() {
        return Err(StatsError::MissingGroup("other"));
    }
    IssueCategory::ALL
        .into_iter()
        .map(|category| {
            let a: Vec<f64> = popular.iter().map(|s| category.count(s) as f64).collect();
            let b: Vec<f64> = other.iter().map(|s| category.count(s) as f64).collect();
            let w = welch_t(&a, &b)?;
            Ok(GroupComparison {
                category,
                mean_popular: w.mean_a,
                mean_other: w.mean_b,
                n_popular: a.len(),
                n_other: b.len(),
                t: w.t,
                df: w.df,
                p_value: w.p_value,
                significant: w.p_value < ALPHA,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub category: IssueCategory,
    pub correlation: CorrelationResult,
    /// Rating change per additional issue.
    pub slope: f64,
    pub intercept: f64,
}

/// Rating against issue count for incomplete policies and incomplete
/// labels, over apps with a rating.
pub fn rating_regression(summaries: &[AppDiscrepancySummary]) -> Result<Vec<RegressionFit>, StatsError> {
    let rated: Vec<_> = summaries.iter().filter_map(|s| s.rating.map(|r| (s, r.value()))).collect();
    let y: Vec<f64> = rated.iter().map(|(_, r)| *r).collect();
    [IssueCategory::IncompletePolicy, IssueCategory::IncompleteLabel]
        .into_iter()
        .map(|category| {
            let x: Vec<f64> = rated.iter().map(|(s, _)| category.count(s) as f64).collect();
            let correlation = pearson(&x, &y)?;
            let (slope, intercept) = ols(&x, &y)?;
            Ok(RegressionFit { category, correlation, slope, intercept })
        })
        .collect()
}

/// Number of apps per issue count, for each category.
pub fn issue_distribution(summaries: &[AppDiscrepancySummary]) -> BTreeMap<usize, [usize; 3]> {
    let mut out: BTreeMap<usize, [usize; 3]> = BTreeMap::new();
    let max = summaries.iter().map(|s| s.n_total).max().unwrap_or(0);
    for k in 0..=max {
        out.insert(k, [0; 3]);
    }
    for s in summaries {
        for (i, c) in IssueCategory::ALL.into_iter().enumerate() {
            out.get_mut(&c.count(s)).expect("count within range")[i] += 1;
        }
    }
    if summaries.is_empty() {
        out.clear();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Rating;

    fn summary(id: usize, ip: usize, il: usize, popular: bool, rating: Option<u8>) -> AppDiscrepancySummary {
        AppDiscrepancySummary {
            app_id: format!("a{id}"),
            n_incomplete_policy: ip,
            n_incomplete_label: il,
            n_total: ip + il,
            n_inconclusive: 0,
            rating: rating.and_then(Rating::from_tenths),
            is_popular: popular,
        }
    }

    #[test]
    fn cdf_direct_count() {
        let s: Vec<_> = (0..4).map(|i| summary(i, i, 0, false, None)).collect();
        let t = cdf(&s).unwrap();
        let both: Vec<f64> = t.rows.iter().map(|r| r.both).collect();
        assert_eq!(both, vec![75.0, 50.0, 25.0]);
        let zeros: Vec<_> = (0..3).map(|i| summary(i, 0, 0, false, None)).collect();
        assert!(cdf(&zeros).unwrap().rows.iter().all(|r| r.both == 0.0));
        assert!(matches!(cdf(&[]), Err(StatsError::EmptyInput)));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(pearson(&x, &x).unwrap().r, 1.0);
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 7.0).collect();
        assert_eq!(pearson(&x, &y).unwrap().r, -1.0);
        assert!(matches!(pearson(&x, &[1.0; 5]), Err(StatsError::DegenerateVariance)));
    }

    #[test]
    fn welch_examples() {
        let a = [1.0, 2.0, 3.0];
        let w = welch_t(&a, &a).unwrap();
        assert_eq!((w.t, w.p_value), (0.0, 1.0));
        let w = welch_t(&a, &[101.0, 102.0, 103.0]).unwrap();
        assert!(w.p_value < 1e-3);
        assert!(matches!(welch_t(&[1.0], &a), Err(StatsError::TooFewSamples { .. })));
    }

    #[test]
    fn rates_and_undefined_denominators() {
        let mut outcomes = Vec::new();
        for i in 0..10 {
            outcomes.push(DiscrepancyOutcome {
                app_id: format!("a{i}"),
                data_type: DataType::Name,
                verdict: if i < 3 { Verdict::IncompletePolicy } else { Verdict::Consistent },
                p: 0.1,
                declared: true,
            });
        }
        let rows = per_type_rates(&outcomes);
        assert_eq!(rows[DataType::Name.index()].incomplete_policy_rate, Some(30.0));
        assert_eq!(rows[DataType::Name.index()].incomplete_label_rate, None);
        assert_eq!(rows[DataType::CreditInfo.index()].incomplete_policy_rate, None);
    }

    #[test]
    fn groups_and_regression() {
        let s = vec![summary(0, 1, 2, true, Some(40))];
        assert!(matches!(popular_vs_other(&s), Err(StatsError::MissingGroup("other"))));
        let s = vec![summary(0, 1, 2, true, Some(40)), summary(1, 1, 2, false, Some(40))];
        assert!(matches!(popular_vs_other(&s), Err(StatsError::TooFewSamples { .. })));
        let s: Vec<_> = (0..5).map(|i| summary(i, i, i, false, Some(30 + i as u8))).collect();
        let fits = rating_regression(&s).unwrap();
        assert_eq!(fits[0].correlation.r, 1.0);
        assert!((fits[0].slope - 0.1).abs() < 1e-12);
        assert!((fits[0].intercept - 3.0).abs() < 1e-12);
        let flat: Vec<_> = (0..5).map(|i| summary(i, i, i, false, Some(30))).collect();
        assert!(matches!(rating_regression(&flat), Err(StatsError::DegenerateVariance)));
    }
}
