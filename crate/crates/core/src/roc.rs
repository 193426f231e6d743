//! ROC curves, AUC with DeLong standard errors, Youden-optimal cutoffs and
//! DeLong comparison of correlated AUCs.
//!
//! Scores are oriented so that larger values indicate disease; a subject is
//! called positive when its score is strictly greater than the threshold.

use std::cmp::Ordering;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cohort::SubsetFilter;
use crate::error::{Error, Result};
use crate::features::{FeatureName, FeatureTable};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint<T = f64> {
    pub threshold: T,
    pub fp: usize,
    pub tp: usize,
    pub fpr: f64,
    pub tpr: f64,
}

/// Staircase ROC curve in decreasing-threshold order, starting at the
/// `+∞` sentinel (0, 0) and ending at the `−∞` sentinel (1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve<T = f64> {
    pub points: Vec<RocPoint<T>>,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn check_inputs<T: Real>(scores: &[T], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Schema("non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((n_pos, n_neg))
}

/// Midpoint that stays strictly below `hi` so `hi > mid` always holds.
fn midpoint<T: Real>(lo: T, hi: T) -> T {
    let m = lo + (hi - lo) / T::of(2.0);
    if m >= hi {
        lo
    } else {
        m
    }
}

pub fn roc_curve<T: Real>(scores: &[T], labels: &[bool]) -> Result<RocCurve<T>> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp_real(&scores[a]));

    let point = |threshold: T, tp: usize, fp: usize| RocPoint {
        threshold,
        fp,
        tp,
        fpr: fp as f64 / n_neg as f64,
        tpr: tp as f64 / n_pos as f64,
    };
    let mut points = vec![point(T::infinity(), 0, 0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let threshold = if i < order.len() {
            midpoint(scores[order[i]], s)
        } else {
            T::neg_infinity()
        };
        points.push(point(threshold, tp, fp));
    }
    Ok(RocCurve { points, n_pos, n_neg })
}

impl<T: Real> RocCurve<T> {
    /// Trapezoidal area, accumulated exactly in integer counts.
    pub fn area(&self) -> f64 {
        let mut twice: u128 = 0;
        for w in self.points.windows(2) {
            let dfp = (w[1].fp - w[0].fp) as u128;
            twice += dfp * (w[1].tp + w[0].tp) as u128;
        }
        twice as f64 / (2.0 * self.n_pos as f64 * self.n_neg as f64)
    }
}

/// Trapezoidal area under the ROC curve.
pub fn auc<T: Real>(scores: &[T], labels: &[bool]) -> Result<f64> {
    Ok(roc_curve(scores, labels)?.area())
}

/// Midranks (1-based, ties averaged) of `values`.
pub fn midranks<T: Real>(values: &[T]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp_real(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// AUC as the normalized Mann–Whitney U statistic from midranks.
pub fn mann_whitney_auc<T: Real>(scores: &[T], labels: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let ranks = midranks(scores);
    let r_pos: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = r_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

// ---------------------------------------------------------------------------
// Youden cutoff

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffRule {
    pub feature: String,
    /// Diseased iff value > cutoff.
    #[serde(serialize_with = "ser_cutoff", deserialize_with = "de_cutoff")]
    pub cutoff: f64,
    #[serde(rename = "j", default)]
    pub j_at_cutoff: f64,
    #[serde(default)]
    pub sensitivity: f64,
    #[serde(default)]
    pub specificity: f64,
}

fn ser_cutoff<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15 {
        s.serialize_i64(*v as i64)
    } else if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn de_cutoff<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Text(t) => match t.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            _ => Err(serde::de::Error::custom(format!("bad cutoff `{t}`"))),
        },
    }
}

impl CutoffRule {
    pub fn predicts_diseased(&self, value: f64) -> bool {
        value > self.cutoff
    }
}

/// Threshold maximizing `J = sens + spec − 1` over the ROC candidates
/// (midpoints plus sentinels). Ties go to higher sensitivity, then to the
/// lower threshold.
pub fn youden_cutoff<T: Real>(scores: &[T], labels: &[bool]) -> Result<(T, RocPoint<T>, f64)> {
    let curve = roc_curve(scores, labels)?;
    let (np, nn) = (curve.n_pos as u128, curve.n_neg as u128);
    // J ∝ tp·n_neg + tn·n_pos; later points have lower thresholds and no
    // fewer true positives, so `>=` realises both tie-breaks.
    let mut best = 0;
    let mut best_key = 0u128;
    for (i, p) in curve.points.iter().enumerate() {
        let tn = curve.n_neg - p.fp;
        let key = p.tp as u128 * nn + tn as u128 * np;
        if key >= best_key {
            best_key = key;
            best = i;
        }
    }
    let p = curve.points[best];
    let j = p.tpr + (1.0 - p.fpr) - 1.0;
    Ok((p.threshold, p, j))
}

pub fn youden_rule(feature: &str, scores: &[f64], labels: &[bool]) -> Result<CutoffRule> {
    let (cutoff, p, j) = youden_cutoff(scores, labels)?;
    Ok(CutoffRule {
        feature: feature.to_string(),
        cutoff,
        j_at_cutoff: j,
        sensitivity: p.tpr,
        specificity: 1.0 - p.fpr,
    })
}

// ---------------------------------------------------------------------------
// DeLong

struct Placements {
    /// per positive: fraction of negatives it outscores (ties ½)
    v10: Vec<f64>,
    /// per negative: fraction of positives that outscore it (ties ½)
    v01: Vec<f64>,
}

fn placements<T: Real>(scores: &[T], labels: &[bool]) -> Placements {
    let pos: Vec<T> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<T> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let all: Vec<T> = pos.iter().chain(&neg).copied().collect();
    let r_all = midranks(&all);
    let r_pos = midranks(&pos);
    let r_neg = midranks(&neg);
    let v10 = (0..pos.len()).map(|i| (r_all[i] - r_pos[i]) / nn).collect();
    let v01 = (0..neg.len())
        .map(|j| 1.0 - (r_all[pos.len() + j] - r_neg[j]) / np)
        .collect();
    Placements { v10, v01 }
}

fn sample_cov(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0)
}

fn auc_cov(a: &Placements, b: &Placements) -> f64 {
    sample_cov(&a.v10, &b.v10) / a.v10.len() as f64 + sample_cov(&a.v01, &b.v01) / a.v01.len() as f64
}

fn check_delong<T: Real>(scores: &[T], labels: &[bool]) -> Result<()> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos < 2 || neg < 2 {
        return Err(Error::ClassTooSmall { need: 2, pos, neg });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeLong {
    pub auc: f64,
    pub var: f64,
    pub se: f64,
}

/// AUC and its DeLong variance from tie-aware placement values.
pub fn delong_variance<T: Real>(scores: &[T], labels: &[bool]) -> Result<DeLong> {
    check_delong(scores, labels)?;
    let p = placements(scores, labels);
    let auc = p.v10.iter().sum::<f64>() / p.v10.len() as f64;
    let var = auc_cov(&p, &p).max(0.0);
    Ok(DeLong { auc, var, se: var.sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    pub feature: String,
    pub auc: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

pub fn z_for_level(level: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::Config(format!("confidence level {level} outside [0, 1)")));
    }
    if level == 0.0 {
        return Ok(0.0);
    }
    Ok(standard_normal().inverse_cdf((1.0 + level) / 2.0))
}

/// Wald interval `auc ± z·se` clamped to [0, 1].
pub fn auc_ci<T: Real>(scores: &[T], labels: &[bool], level: f64) -> Result<RocSummary> {
    let d = delong_variance(scores, labels)?;
    let z = z_for_level(level)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    Ok(RocSummary {
        feature: String::new(),
        auc: d.auc,
        se: d.se,
        ci_lo: (d.auc - z * d.se).clamp(0.0, 1.0),
        ci_hi: (d.auc + z * d.se).clamp(0.0, 1.0),
        level,
        n_pos,
        n_neg: labels.len() - n_pos,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeLongComparison {
    pub auc_a: f64,
    pub auc_b: f64,
    pub delta_auc: f64,
    pub z: f64,
    pub p_two_sided: f64,
}

/// Paired DeLong test of `AUC(a) = AUC(b)` on the same subjects.
pub fn delong_test<T: Real>(scores_a: &[T], scores_b: &[T], labels: &[bool]) -> Result<DeLongComparison> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::LengthMismatch(scores_a.len(), scores_b.len()));
    }
    check_delong(scores_a, labels)?;
    check_delong(scores_b, labels)?;
    let pa = placements(scores_a, labels);
    let pb = placements(scores_b, labels);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (auc_a, auc_b) = (mean(&pa.v10), mean(&pb.v10));
    let delta = auc_a - auc_b;
    let var = auc_cov(&pa, &pa) + auc_cov(&pb, &pb) - 2.0 * auc_cov(&pa, &pb);
    let (z, p) = if delta == 0.0 {
        (0.0, 1.0)
    } else if var <= 0.0 {
        (delta.signum() * f64::INFINITY, 0.0)
    } else {
        let z = delta / var.sqrt();
        (z, (2.0 * standard_normal().sf(z.abs())).min(1.0))
    };
    Ok(DeLongComparison { auc_a, auc_b, delta_auc: delta, z, p_two_sided: p })
}

// ---------------------------------------------------------------------------
// Feature ranking

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: FeatureName,
    pub summary: RocSummary,
    pub rule: CutoffRule,
}

/// Per-feature ROC summary and Youden rule on the selected subjects, sorted
/// by descending AUC with ties broken by feature name.
pub fn rank_features_by_auc(
    table: &FeatureTable,
    subset: SubsetFilter,
    features: &[FeatureName],
    level: f64,
) -> Result<Vec<RankedFeature>> {
    let mut out = Vec::with_capacity(features.len());
    for &f in features {
        let (x, y) = table.column(f, subset)?;
        if x.is_empty() {
            continue;
        }
        let mut summary = auc_ci(&x, &y, level)?;
        summary.feature = f.as_str().to_string();
        out.push(RankedFeature { feature: f, summary, rule: youden_rule(f.as_str(), &x, &y)? });
    }
    out.sort_by(|a, b| {
        b.summary
            .auc
            .total_cmp(&a.summary.auc)
            .then_with(|| a.feature.as_str().cmp(b.feature.as_str()))
    });
    Ok(out)
}

/// How features are chosen for a classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureSelector {
    Explicit(Vec<FeatureName>),
    TopPerModality(usize),
    TopOverall(usize),
    All,
}

impl FeatureSelector {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Self::All);
        }
        if let Some(rest) = s.strip_prefix("top") {
            let (k, mode) = rest
                .split_once('-')
                .ok_or_else(|| Error::Config(format!("bad selector `{s}`")))?;
            let k: usize = k.parse().map_err(|_| Error::Config(format!("bad selector `{s}`")))?;
            return match mode {
                "per-modality" => Ok(Self::TopPerModality(k)),
                "overall" => Ok(Self::TopOverall(k)),
                _ => Err(Error::Config(format!("bad selector `{s}`"))),
            };
        }
        Ok(Self::Explicit(crate::features::parse_feature_list(s)?))
    }

    pub fn needs_ranking(&self) -> bool {
        matches!(self, Self::TopPerModality(_) | Self::TopOverall(_))
    }

    /// Resolves to a feature list in canonical feature order.
    pub fn resolve(&self, ranking: &[RankedFeature]) -> Vec<FeatureName> {
        let mut v: Vec<FeatureName> = match self {
            Self::Explicit(v) => v.clone(),
            Self::All => FeatureName::ALL.to_vec(),
            Self::TopOverall(k) => ranking.iter().take(*k).map(|r| r.feature).collect(),
            Self::TopPerModality(k) => {
                let mut v = Vec::new();
                for m in [crate::cohort::Modality::T1Native, crate::cohort::Modality::T2] {
                    v.extend(ranking.iter().filter(|r| r.feature.modality() == m).take(*k).map(|r| r.feature));
                }
                v
            }
        };
        v.sort();
        v.dedup();
        v
    }
}

/// Pairwise DeLong comparisons between features on subjects having both.
pub fn delong_feature_pairs(
    table: &FeatureTable,
    subset: SubsetFilter,
    pairs: &[(FeatureName, FeatureName)],
) -> Result<Vec<(FeatureName, FeatureName, DeLongComparison)>> {
    let rows = table.select(subset)?;
    let mut out = Vec::new();
    for &(fa, fb) in pairs {
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut y = Vec::new();
        for r in &rows {
            if let (Some(va), Some(vb)) = (r.features.get(fa), r.features.get(fb)) {
                a.push(va);
                b.push(vb);
                y.push(r.features.diseased);
            }
        }
        out.push((fa, fb, delong_test(&a, &b, &y)?));
    }
    Ok(out)
}

impl<T: Real> RocCurve<T> {
    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| {
            w[0].fp <= w[1].fp
                && w[0].tp <= w[1].tp
                && w[0].threshold.total_cmp_real(&w[1].threshold) != Ordering::Less
        })
    }
}
