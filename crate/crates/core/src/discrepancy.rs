//! Predicted policy profiles versus declared privacy labels.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{AppRecord, DataType, Rating};
use crate::labelers::PredictedPolicyProfile;

pub const NOT_IN_POLICY_BELOW: f64 = 0.25;
pub const IN_POLICY_ABOVE: f64 = 0.75;

#[derive(Debug, thiserror::Error)]
pub enum DiscrepancyError {
    #[error("probability {0} is outside [0,1]")]
    OutOfRange(f64),
    #[error("app {0} has no declared privacy label")]
    MissingLabel(String),
    #[error("outcomes row {row}: {reason}")]
    MalformedOutcome { row: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredictionBand {
    NotInPolicy,
    Inconclusive,
    InPolicy,
}

/// Strict comparisons: exactly 0.25 and 0.75 are inconclusive.
pub fn band(p: f64) -> Result<PredictionBand, DiscrepancyError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(DiscrepancyError::OutOfRange(p));
    }
    Ok(if p < NOT_IN_POLICY_BELOW {
        PredictionBand::NotInPolicy
    } else if p > IN_POLICY_ABOVE {
        PredictionBand::InPolicy
    } else {
        PredictionBand::Inconclusive
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    IncompletePolicy,
    IncompleteLabel,
    Consistent,
    Inconclusive,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::IncompletePolicy => "IncompletePolicy",
            Verdict::IncompleteLabel => "IncompleteLabel",
            Verdict::Consistent => "Consistent",
            Verdict::Inconclusive => "Inconclusive",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "IncompletePolicy" => Ok(Verdict::IncompletePolicy),
            "IncompleteLabel" => Ok(Verdict::IncompleteLabel),
            "Consistent" => Ok(Verdict::Consistent),
            "Inconclusive" => Ok(Verdict::Inconclusive),
            other => Err(format!("unknown verdict {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyOutcome {
    pub app_id: String,
    pub data_type: DataType,
    pub verdict: Verdict,
    pub p: f64,
    pub declared: bool,
}

/// Verdict for one data type.
pub fn verdict(declared: bool, p: f64) -> Result<Verdict, DiscrepancyError> {
    Ok(match (declared, band(p)?) {
        (_, PredictionBand::Inconclusive) => Verdict::Inconclusive,
        (true, PredictionBand::NotInPolicy) => Verdict::IncompletePolicy,
        (false, PredictionBand::InPolicy) => Verdict::IncompleteLabel,
        _ => Verdict::Consistent,
    })
}

/// One outcome per data type, in canonical order.
pub fn judge(app: &AppRecord, profile: &PredictedPolicyProfile) -> Result<Vec<DiscrepancyOutcome>, DiscrepancyError> {
    let label = app.label.ok_or_else(|| DiscrepancyError::MissingLabel(app.app_id.clone()))?;
    DataType::ALL
        .into_iter()
        .map(|d| {
            let p = profile.p(d);
            let declared = label.contains(d);
            Ok(DiscrepancyOutcome { app_id: app.app_id.clone(), data_type: d, verdict: verdict(declared, p)?, p, declared })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppDiscrepancySummary {
    pub app_id: String,
    pub n_incomplete_policy: usize,
    pub n_incomplete_label: usize,
    pub n_total: usize,
    pub n_inconclusive: usize,
    pub rating: Option<Rating>,
    pub is_popular: bool,
}

/// Per-app counts. `apps` supplies rating and popularity; apps without
/// outcomes are skipped.
pub fn summarize(apps: &[AppRecord], outcomes: &[DiscrepancyOutcome]) -> Vec<AppDiscrepancySummary> {
    let mut by_app: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for o in outcomes {
        let c = by_app.entry(&o.app_id).or_default();
        match o.verdict {
            Verdict::IncompletePolicy => c[0] += 1,
            Verdict::IncompleteLabel => c[1] += 1,
            Verdict::Inconclusive => c[2] += 1,
            Verdict::Consistent => {}
        }
    }
    let mut out = Vec::with_capacity(by_app.len());
    for app in apps {
        if let Some(c) = by_app.remove(app.app_id.as_str()) {
            out.push(AppDiscrepancySummary {
                app_id: app.app_id.clone(),
                n_incomplete_policy: c[0],
                n_incomplete_label: c[1],
                n_total: c[0] + c[1],
                n_inconclusive: c[2],
                rating: app.rating,
                is_popular: app.is_popular,
            });
        }
    }
    out
}

pub fn write_outcomes_csv(out: impl Write, outcomes: &[DiscrepancyOutcome]) -> Result<(), DiscrepancyError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["app_id", "data_type", "verdict", "p", "declared"])?;
    for o in outcomes {
        w.write_record([
            o.app_id.as_str(),
            o.data_type.name(),
            o.verdict.name(),
            &o.p.to_string(),
            if o.declared { "true" } else { "false" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_outcomes_csv(input: impl Read) -> Result<Vec<DiscrepancyOutcome>, DiscrepancyError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |reason: String| DiscrepancyError::MalformedOutcome { row, reason };
        let field = |k: usize| rec.get(k).ok_or_else(|| bad(format!("missing column {k}")));
        let data_type: DataType = field(1)?.parse().map_err(|e: crate::corpus::UnknownDataType| bad(e.to_string()))?;
        let verdict: Verdict = field(2)?.parse().map_err(bad)?;
        let p: f64 = field(3)?.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
        let declared = match field(4)? {
            "true" => true,
            "false" => false,
            other => return Err(bad(format!("declared must be true or false, got {other:?}"))),
        };
        out.push(DiscrepancyOutcome { app_id: field(0)?.to_string(), data_type, verdict, p, declared });
    }
    Ok(out)
}

pub fn write_summary_csv(out: impl Write, summaries: &[AppDiscrepancySummary]) -> Result<(), DiscrepancyError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["app_id", "n_incomplete_policy", "n_incomplete_label", "n_total", "n_inconclusive", "rating", "popular"])?;
    for s in summaries {
        w.write_record([
            s.app_id.clone(),
            s.n_incomplete_policy.to_string(),
            s.n_incomplete_label.to_string(),
            s.n_total.to_string(),
            s.n_inconclusive.to_string(),
            s.rating.map(|r| format!("{:.1}", r.value())).unwrap_or_default(),
            s.is_popular.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PrivacyLabel;

    #[test]
    fn band_examples() {
        assert_eq!(band(0.1).unwrap(), PredictionBand::NotInPolicy);
        assert_eq!(band(0.25).unwrap(), PredictionBand::Inconclusive);
        assert_eq!(band(0.75).unwrap(), PredictionBand::Inconclusive);
        assert_eq!(band(0.9).unwrap(), PredictionBand::InPolicy);
        assert!(matches!(band(1.5), Err(DiscrepancyError::OutOfRange(_))));
        assert!(band(f64::NAN).is_err());
    }

    #[test]
    fn verdict_examples() {
        assert_eq!(verdict(true, 0.1).unwrap(), Verdict::IncompletePolicy);
        assert_eq!(verdict(false, 0.9).unwrap(), Verdict::IncompleteLabel);
        assert_eq!(verdict(true, 0.9).unwrap(), Verdict::Consistent);
        assert_eq!(verdict(true, 0.5).unwrap(), Verdict::Inconclusive);
        assert_eq!(verdict(false, 0.1).unwrap(), Verdict::Consistent);
    }

    fn app(label: Option<PrivacyLabel>) -> AppRecord {
        AppRecord {
            app_id: "app".into(),
            name: String::new(),
            category: String::new(),
            is_popular: true,
            rating: Rating::from_tenths(45),
            policy_url: Some("u".into()),
            label,
        }
    }

    #[test]
    fn saturated_and_missing_labels() {
        let a = app(Some(PrivacyLabel::all()));
        let profile = PredictedPolicyProfile::new("u", vec![0.0; 32]).unwrap();
        let outcomes = judge(&a, &profile).unwrap();
        let s = summarize(std::slice::from_ref(&a), &outcomes);
        assert_eq!(s[0].n_incomplete_policy, 32);
        assert_eq!(s[0].n_total, 32);
        assert!(matches!(judge(&app(None), &profile), Err(DiscrepancyError::MissingLabel(_))));
    }

    #[test]
    fn outcomes_round_trip() {
        let a = app(Some(PrivacyLabel::all()));
        let profile = PredictedPolicyProfile::new("u", (0..32).map(|i| i as f64 / 31.0).collect()).unwrap();
        let outcomes = judge(&a, &profile).unwrap();
        let mut buf = Vec::new();
        write_outcomes_csv(&mut buf, &outcomes).unwrap();
        assert_eq!(read_outcomes_csv(&buf[..]).unwrap(), outcomes);
    }

    #[test]
    fn consistent_app_has_zero_counts() {
        let a = app(Some(PrivacyLabel::empty()));
        let profile = PredictedPolicyProfile::new("u", vec![0.1; 32]).unwrap();
        let s = summarize(std::slice::from_ref(&a), &judge(&a, &profile).unwrap());
        assert_eq!((s[0].n_total, s[0].n_inconclusive), (0, 0));
    }
}
