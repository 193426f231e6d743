//! Row types of the tabular report files and generic CSV helpers, so every
//! file the command line writes can be read back.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agreement::PairedMean;
use crate::cohort::Modality;
use crate::error::{Error, Result};
use crate::roc::{DeLongComparison, RankedFeature, RocCurve};

pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// One line of the per-feature ROC summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSummaryRow {
    pub feature: String,
    pub auc: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub cutoff: f64,
    pub j: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl From<&RankedFeature> for RocSummaryRow {
    fn from(r: &RankedFeature) -> Self {
        let s = &r.summary;
        Self {
            feature: r.feature.as_str().to_string(),
            auc: s.auc,
            se: s.se,
            ci_lo: s.ci_lo,
            ci_hi: s.ci_hi,
            level: s.level,
            n_pos: s.n_pos,
            n_neg: s.n_neg,
            cutoff: r.rule.cutoff,
            j: r.rule.j_at_cutoff,
            sensitivity: r.rule.sensitivity,
            specificity: r.rule.specificity,
        }
    }
}

/// One operating point of a ROC curve (plot data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurveRow {
    pub feature: String,
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

pub fn curve_rows(feature: &str, curve: &RocCurve<f64>) -> Vec<RocCurveRow> {
    curve
        .points
        .iter()
        .map(|p| RocCurveRow { feature: feature.to_string(), threshold: p.threshold, fpr: p.fpr, tpr: p.tpr })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeLongRow {
    pub feature_a: String,
    pub feature_b: String,
    pub auc_a: f64,
    pub auc_b: f64,
    pub delta_auc: f64,
    pub z: f64,
    pub p: f64,
}

impl DeLongRow {
    pub fn new(a: &str, b: &str, c: &DeLongComparison) -> Self {
        Self {
            feature_a: a.to_string(),
            feature_b: b.to_string(),
            auc_a: c.auc_a,
            auc_b: c.auc_b,
            delta_auc: c.delta_auc,
            z: c.z,
            p: c.p_two_sided,
        }
    }
}

/// Bland-Altman plot point for one map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanPointRow {
    pub map_id: String,
    pub subject_id: String,
    pub modality: Modality,
    pub mean_a: f64,
    pub mean_b: f64,
    pub average: f64,
    pub difference: f64,
}

impl From<&PairedMean> for BlandAltmanPointRow {
    fn from(p: &PairedMean) -> Self {
        Self {
            map_id: p.map_id.clone(),
            subject_id: p.subject_id.clone(),
            modality: p.modality,
            mean_a: p.mean_a,
            mean_b: p.mean_b,
            average: (p.mean_a + p.mean_b) / 2.0,
            difference: p.mean_a - p.mean_b,
        }
    }
}

/// Provenance record written next to every command's outputs. Holds no
/// timestamps so identical runs produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub toolkit_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
}
