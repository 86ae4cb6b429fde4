use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BinaryModel, EnsembleModel, LabelerError, PredictedPolicyProfile};
use crate::codec;
use crate::corpus::DataType;

const MODEL_MAGIC: [u8; 4] = *b"ATBM";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub data_type: DataType,
    pub arch: String,
    pub file: String,
    pub val_macro_f1: Option<f64>,
    pub seed: u64,
    pub l2: Option<f64>,
    pub split_checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: u32,
    pub models: Vec<ManifestEntry>,
}

/// Writes one model file per data type plus `manifest.json`.
pub fn save_bundle(dir: &Path, ensemble: &EnsembleModel) -> Result<BundleManifest, LabelerError> {
    fs::create_dir_all(dir)?;
    let mut models = Vec::with_capacity(ensemble.models.len());
    for (d, m) in &ensemble.models {
        let file = format!("{}.model", d.slug());
        codec::write_file(&dir.join(&file), MODEL_MAGIC, 1, m)?;
        models.push(ManifestEntry {
            data_type: *d,
            arch: m.arch.0.clone(),
            file,
            val_macro_f1: ensemble.val_macro_f1.get(d).copied(),
            seed: m.meta.seed,
            l2: m.meta.l2,
            split_checksum: m.meta.split_checksum.clone(),
        });
    }
    let manifest = BundleManifest { version: 1, models };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

pub fn load_bundle(dir: &Path) -> Result<EnsembleModel, LabelerError> {
    let manifest: BundleManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let mut models = BTreeMap::new();
    let mut val_macro_f1 = BTreeMap::new();
    for entry in manifest.models {
        let model: BinaryModel = codec::read_file(&dir.join(&entry.file), MODEL_MAGIC, 1)?;
        if model.data_type != entry.data_type || model.arch.0 != entry.arch {
            return Err(LabelerError::MalformedBundle(format!("{} does not match its manifest entry", entry.file)));
        }
        if let Some(f) = entry.val_macro_f1 {
            val_macro_f1.insert(entry.data_type, f);
        }
        models.insert(entry.data_type, model);
    }
    if let Some(missing) = DataType::ALL.into_iter().find(|d| !models.contains_key(d)) {
        return Err(LabelerError::MissingDataType(missing));
    }
    Ok(EnsembleModel { models, val_macro_f1 })
}

/// `policy_url` followed by one probability column per data type.
pub fn write_predictions(out: impl Write, profiles: &[PredictedPolicyProfile]) -> Result<(), LabelerError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["policy_url".to_string()];
    header.extend(DataType::ALL.iter().map(|d| d.name().to_string()));
    w.write_record(&header)?;
    for p in profiles {
        let mut row = vec![p.policy_url.clone()];
        row.extend(p.probs().iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(input: impl Read) -> Result<Vec<PredictedPolicyProfile>, LabelerError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let mut columns = Vec::with_capacity(DataType::COUNT);
    for d in DataType::ALL {
        let col = header
            .iter()
            .position(|h| h == d.name())
            .ok_or_else(|| LabelerError::MalformedPredictions(format!("missing column {:?}", d.name())))?;
        columns.push(col);
    }
    let url_col = header
        .iter()
        .position(|h| h == "policy_url")
        .ok_or_else(|| LabelerError::MalformedPredictions("missing column \"policy_url\"".into()))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let probs = columns
            .iter()
            .map(|&c| {
                rec.get(c)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| LabelerError::MalformedPredictions(format!("row {}: bad probability", i + 2)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(PredictedPolicyProfile::new(rec.get(url_col).unwrap_or_default(), probs)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_round_trip() {
        let probs: Vec<f64> = (0..32).map(|i| i as f64 / 31.0).collect();
        let p = PredictedPolicyProfile::new("https://x.test/p", probs).unwrap();
        let mut buf = Vec::new();
        write_predictions(&mut buf, std::slice::from_ref(&p)).unwrap();
        let back = read_predictions(&buf[..]).unwrap();
        assert_eq!(back, vec![p]);
    }

    #[test]
    fn missing_column_is_reported() {
        let err = read_predictions("policy_url,Name\nu,0.5\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LabelerError::MalformedPredictions(_)));
    }
}
