//! Confusion-derived metrics and the Wilcoxon signed-rank comparison of
//! classification approaches.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cohort::{read_json, write_json};
use crate::error::{Error, Result};

/// Above this many nonzero differences the normal approximation is used.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Counts with diseased as the positive class.
pub fn confusion(pred: &[bool], truth: &[bool]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No positive predictions: precision reported as 0.
    pub precision_undefined: bool,
    /// No actual positives: recall reported as 0.
    pub recall_undefined: bool,
}

pub fn precision_recall_f1(c: &ConfusionCounts) -> PrecisionRecall {
    let ratio = |num: usize, den: usize| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
    let (precision, pu) = ratio(c.tp, c.tp + c.fp);
    let (recall, ru) = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    PrecisionRecall { precision, recall, f1, precision_undefined: pu, recall_undefined: ru }
}

/// F1 from counts alone, `2tp / (2tp + fp + fn)`.
pub fn f1_score(pred: &[bool], truth: &[bool]) -> Result<f64> {
    Ok(precision_recall_f1(&confusion(pred, truth)?).f1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectOutcome {
    pub subject_id: String,
    pub predicted: bool,
    pub truth: bool,
}

impl SubjectOutcome {
    pub fn correct(&self) -> bool {
        self.predicted == self.truth
    }
}

/// One row of a classification results table, with per-subject outcomes so
/// approaches can be compared pairwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub approach: String,
    pub features: Vec<String>,
    pub cutoff: Option<f64>,
    pub subset: String,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: ConfusionCounts,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub subjects: Vec<SubjectOutcome>,
}

impl ClassificationReport {
    pub fn from_outcomes(
        approach: impl Into<String>,
        features: Vec<String>,
        cutoff: Option<f64>,
        subset: impl Into<String>,
        subjects: Vec<SubjectOutcome>,
    ) -> Result<Self> {
        let pred: Vec<bool> = subjects.iter().map(|s| s.predicted).collect();
        let truth: Vec<bool> = subjects.iter().map(|s| s.truth).collect();
        let confusion = confusion(&pred, &truth)?;
        let m = precision_recall_f1(&confusion);
        Ok(Self {
            approach: approach.into(),
            features,
            cutoff,
            subset: subset.into(),
            f1: m.f1,
            precision: m.precision,
            recall: m.recall,
            confusion,
            precision_undefined: m.precision_undefined,
            recall_undefined: m.recall_undefined,
            subjects,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self, true)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WilcoxonMethod {
    WilcoxonExact,
    WilcoxonNormal,
}

impl WilcoxonMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            WilcoxonMethod::WilcoxonExact => "wilcoxon-exact",
            WilcoxonMethod::WilcoxonNormal => "wilcoxon-normal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    /// W+, the rank sum of positive differences.
    pub statistic: f64,
    pub p_two_sided: f64,
    pub n_effective: usize,
    pub method: WilcoxonMethod,
    /// Every difference was zero.
    pub degenerate: bool,
}

/// Two-sided Wilcoxon signed-rank test on `a − b`.
///
/// Zero differences are dropped. Up to [`EXACT_MAX_N`] nonzero differences
/// the null distribution of W+ is enumerated exactly for the observed
/// midranks; beyond that a tie-corrected normal approximation with
/// continuity correction is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<StatTestResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(StatTestResult {
            statistic: 0.0,
            p_two_sided: 1.0,
            n_effective: 0,
            method: WilcoxonMethod::WilcoxonExact,
            degenerate: true,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = crate::roc::midranks(&abs);
    let w_plus: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    if n <= EXACT_MAX_N {
        Ok(StatTestResult {
            statistic: w_plus,
            p_two_sided: exact_p(&ranks, w_plus),
            n_effective: n,
            method: WilcoxonMethod::WilcoxonExact,
            degenerate: false,
        })
    } else {
        Ok(StatTestResult {
            statistic: w_plus,
            p_two_sided: normal_approx_p(&ranks, w_plus),
            n_effective: n,
            method: WilcoxonMethod::WilcoxonNormal,
            degenerate: false,
        })
    }
}

/// Exact two-sided p by counting sign assignments. Midranks are multiples
/// of ½, so doubled ranks are integers and the count is a subset-sum
/// convolution over all 2ⁿ patterns.
pub fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w = (w_plus * 2.0).round() as usize;
    let all = 2f64.powi(ranks.len() as i32);
    let lower: f64 = counts[..=w].iter().sum();
    let upper: f64 = counts[w..].iter().sum();
    (2.0 * lower.min(upper) / all).min(1.0)
}

/// Normal approximation of the two-sided p for W+, with tie-corrected
/// variance and a 0.5 continuity correction.
pub fn normal_approx_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let dev = ((w_plus - mean).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * normal.sf(z)).min(1.0)
}

/// Wilcoxon test on paired per-subject correctness (1 correct, 0 wrong).
pub fn compare_methods(a: &ClassificationReport, b: &ClassificationReport) -> Result<StatTestResult> {
    let bmap: BTreeMap<&str, &SubjectOutcome> =
        b.subjects.iter().map(|s| (s.subject_id.as_str(), s)).collect();
    if a.subjects.len() != b.subjects.len() || bmap.len() != b.subjects.len() {
        return Err(Error::SubjectMismatch(format!(
            "{} vs {} subjects",
            a.subjects.len(),
            b.subjects.len()
        )));
    }
    let mut xa = Vec::with_capacity(a.subjects.len());
    let mut xb = Vec::with_capacity(a.subjects.len());
    for s in &a.subjects {
        let o = bmap
            .get(s.subject_id.as_str())
            .ok_or_else(|| Error::SubjectMismatch(format!("`{}` only in first report", s.subject_id)))?;
        xa.push(f64::from(u8::from(s.correct())));
        xb.push(f64::from(u8::from(o.correct())));
    }
    wilcoxon_signed_rank(&xa, &xb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method_a: String,
    pub method_b: String,
    pub statistic: f64,
    pub n_effective: usize,
    pub p: f64,
    pub method: String,
}

impl ComparisonRow {
    pub fn new(a: &ClassificationReport, b: &ClassificationReport, r: &StatTestResult) -> Self {
        let name = |x: &ClassificationReport| {
            if x.features.is_empty() {
                x.approach.clone()
            } else {
                format!("{}[{}]", x.approach, x.features.join("+"))
            }
        };
        Self {
            method_a: name(a),
            method_b: name(b),
            statistic: r.statistic,
            n_effective: r.n_effective,
            p: r.p_two_sided,
            method: r.method.as_str().to_string(),
        }
    }
}
