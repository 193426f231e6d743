//! Overlap and method-agreement statistics: DICE, IoU/Jaccard loss, MAPE,
//! Pearson correlation and Bland-Altman limits of agreement.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cohort::{Cohort, LabelMask, Modality, SubsetFilter, LABEL_BLOOD, LABEL_MYOCARDIUM};
use crate::error::{Error, Result};
use crate::features::{myocardial_pixels, percentile_sorted};
use crate::scalar::{mean, sorted, Real};

/// Multiplier for the 95% limits of agreement.
pub const LOA_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Overlap {
    a: usize,
    b: usize,
    both: usize,
}

fn overlap(a: &LabelMask, b: &LabelMask, class_label: u8) -> Result<Overlap> {
    if !a.same_geometry_as(b) {
        return Err(Error::ShapeMismatch(format!(
            "masks {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut o = Overlap { a: 0, b: 0, both: 0 };
    for (&la, &lb) in a.labels.iter().zip(&b.labels) {
        let (ia, ib) = (la == class_label, lb == class_label);
        o.a += usize::from(ia);
        o.b += usize::from(ib);
        o.both += usize::from(ia && ib);
    }
    Ok(o)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapScore {
    pub value: f64,
    /// Neither mask contains the class; the score is set to 1.
    pub both_empty: bool,
}

/// `2|A∩B| / (|A|+|B|)` for the pixels carrying `class_label`.
pub fn dice(a: &LabelMask, b: &LabelMask, class_label: u8) -> Result<OverlapScore> {
    let o = overlap(a, b, class_label)?;
    if o.a + o.b == 0 {
        return Ok(OverlapScore { value: 1.0, both_empty: true });
    }
    Ok(OverlapScore { value: 2.0 * o.both as f64 / (o.a + o.b) as f64, both_empty: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JaccardScore {
    pub iou: f64,
    /// `1 − iou`
    pub loss: f64,
    pub both_empty: bool,
}

pub fn iou_and_jaccard_loss(a: &LabelMask, b: &LabelMask, class_label: u8) -> Result<JaccardScore> {
    let o = overlap(a, b, class_label)?;
    let union = o.a + o.b - o.both;
    if union == 0 {
        return Ok(JaccardScore { iou: 1.0, loss: 0.0, both_empty: true });
    }
    let iou = o.both as f64 / union as f64;
    Ok(JaccardScore { iou, loss: 1.0 - iou, both_empty: false })
}

/// Percentage error `(G − M)/G · 100`, returned as (signed, absolute).
pub fn mape<T: Real>(reference_mean: T, test_mean: T) -> Result<(T, T)> {
    if reference_mean == T::zero() {
        return Err(Error::ZeroReference);
    }
    let signed = (reference_mean - test_mean) / reference_mean * T::of(100.0);
    Ok((signed, signed.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation<T = f64> {
    pub r: T,
    pub p_two_sided: f64,
    pub n: usize,
}

/// Sample Pearson correlation with a two-sided Student-t p-value.
pub fn pearson<T: Real>(x: &[T], y: &[T]) -> Result<Correlation<T>> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::TooFew { need: 3, got: n });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(Error::ConstantInput);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).max(-T::one()).min(T::one());
    let rf = r.f64();
    let p = if rf.abs() >= 1.0 - 1e-12 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = rf * (df / (1.0 - rf * rf)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Correlation { r, p_two_sided: p, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman<T = f64> {
    pub bias: T,
    pub sd_diff: T,
    pub loa_low: T,
    pub loa_high: T,
    /// (mean of pair, difference) per observation.
    pub points: Vec<(T, T)>,
}

/// Bland-Altman analysis of `x − y` with `bias ± 1.96·sd` limits.
pub fn bland_altman<T: Real>(x: &[T], y: &[T]) -> Result<BlandAltman<T>> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::TooFew { need: 2, got: n });
    }
    let two = T::of(2.0);
    let d: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a - b).collect();
    let bias = mean(&d);
    let ss = d.iter().fold(T::zero(), |acc, &v| acc + (v - bias) * (v - bias));
    let sd_diff = (ss / T::of_usize(n - 1)).sqrt();
    let half = T::of(LOA_Z) * sd_diff;
    Ok(BlandAltman {
        bias,
        sd_diff,
        loa_low: bias - half,
        loa_high: bias + half,
        points: x.iter().zip(y).zip(&d).map(|((&a, &b), &di)| ((a + b) / two, di)).collect(),
    })
}

// ---------------------------------------------------------------------------
// Cohort-level report

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub minimum: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        let s = sorted(values);
        Summary {
            mean: mean(values),
            median: percentile_sorted(&s, 50.0).expect("non-empty"),
            minimum: s[0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModalityGroup {
    All,
    T2,
    #[serde(rename = "T1 Pre")]
    T1Pre,
    #[serde(rename = "T1 Post")]
    T1Post,
}

impl ModalityGroup {
    pub const ROWS: [ModalityGroup; 4] =
        [ModalityGroup::All, ModalityGroup::T2, ModalityGroup::T1Pre, ModalityGroup::T1Post];

    pub fn label(self) -> &'static str {
        match self {
            ModalityGroup::All => "All",
            ModalityGroup::T2 => "T2",
            ModalityGroup::T1Pre => "T1 Pre",
            ModalityGroup::T1Post => "T1 Post",
        }
    }

    fn includes(self, m: Modality) -> bool {
        match self {
            ModalityGroup::All => true,
            ModalityGroup::T2 => m == Modality::T2,
            ModalityGroup::T1Pre => m == Modality::T1Native,
            ModalityGroup::T1Post => m == Modality::T1Post,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub modality_group: ModalityGroup,
    pub n_images: usize,
    pub lv_dice: Summary,
    pub myo_dice: Summary,
    pub lv_iou: Summary,
    pub myo_iou: Summary,
    pub myo_mape_mean: f64,
    pub myo_mape_signed_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmptyFlag {
    pub map_id: String,
    pub class_label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub pair: (String, String),
    pub subset: String,
    /// One row per modality group that has at least one image.
    pub rows: Vec<AgreementRow>,
    pub both_empty: Vec<EmptyFlag>,
}

struct ImageMetrics {
    modality: Modality,
    lv_dice: f64,
    myo_dice: f64,
    lv_iou: f64,
    myo_iou: f64,
    mape_signed: f64,
    mape_abs: f64,
}

/// Table-shaped agreement between two mask sources over a subset of the
/// cohort. MAPE compares the myocardial mean under `source_a` (reference)
/// with the one under `source_b`.
pub fn agreement_report(
    cohort: &Cohort,
    source_a: &str,
    source_b: &str,
    subset: SubsetFilter,
) -> Result<AgreementReport> {
    let mut images = Vec::new();
    let mut both_empty = Vec::new();
    for s in cohort.select(subset)? {
        for e in &s.maps {
            let a = e.mask(source_a)?;
            let b = e.mask(source_b)?;
            let lv = dice(a, b, LABEL_BLOOD)?;
            let myo = dice(a, b, LABEL_MYOCARDIUM)?;
            for (score, label) in [(lv, LABEL_BLOOD), (myo, LABEL_MYOCARDIUM)] {
                if score.both_empty {
                    both_empty.push(EmptyFlag { map_id: e.map.map_id.clone(), class_label: label });
                }
            }
            let ctx = |err| match err {
                Error::EmptyMyocardium(_) => Error::EmptyMyocardium(Some(e.map.map_id.clone())),
                other => other,
            };
            let g = mean(&myocardial_pixels(&e.map.grid, a).map_err(ctx)?);
            let m = mean(&myocardial_pixels(&e.map.grid, b).map_err(ctx)?);
            let (mape_signed, mape_abs) = mape(g, m)?;
            images.push(ImageMetrics {
                modality: e.map.modality,
                lv_dice: lv.value,
                myo_dice: myo.value,
                lv_iou: iou_and_jaccard_loss(a, b, LABEL_BLOOD)?.iou,
                myo_iou: iou_and_jaccard_loss(a, b, LABEL_MYOCARDIUM)?.iou,
                mape_signed,
                mape_abs,
            });
        }
    }
    if images.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rows = ModalityGroup::ROWS
        .iter()
        .filter_map(|&g| {
            let sel: Vec<&ImageMetrics> = images.iter().filter(|m| g.includes(m.modality)).collect();
            if sel.is_empty() {
                return None;
            }
            let col = |f: fn(&ImageMetrics) -> f64| sel.iter().map(|m| f(m)).collect::<Vec<_>>();
            Some(AgreementRow {
                modality_group: g,
                n_images: sel.len(),
                lv_dice: Summary::of(&col(|m| m.lv_dice)),
                myo_dice: Summary::of(&col(|m| m.myo_dice)),
                lv_iou: Summary::of(&col(|m| m.lv_iou)),
                myo_iou: Summary::of(&col(|m| m.myo_iou)),
                myo_mape_mean: mean(&col(|m| m.mape_abs)),
                myo_mape_signed_mean: mean(&col(|m| m.mape_signed)),
            })
        })
        .collect();
    Ok(AgreementReport {
        pair: (source_a.to_string(), source_b.to_string()),
        subset: subset.to_string(),
        rows,
        both_empty,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementCsvRow {
    pub pair: String,
    pub modality_group: String,
    pub n_images: usize,
    pub lv_dice_mean: f64,
    pub lv_dice_median: f64,
    pub lv_dice_min: f64,
    pub myo_dice_mean: f64,
    pub myo_dice_median: f64,
    pub myo_dice_min: f64,
    pub myo_mape_mean: f64,
}

impl AgreementReport {
    pub fn csv_rows(&self) -> Vec<AgreementCsvRow> {
        let pair = format!("{}:{}", self.pair.0, self.pair.1);
        self.rows
            .iter()
            .map(|r| AgreementCsvRow {
                pair: pair.clone(),
                modality_group: r.modality_group.label().to_string(),
                n_images: r.n_images,
                lv_dice_mean: r.lv_dice.mean,
                lv_dice_median: r.lv_dice.median,
                lv_dice_min: r.lv_dice.minimum,
                myo_dice_mean: r.myo_dice.mean,
                myo_dice_median: r.myo_dice.median,
                myo_dice_min: r.myo_dice.minimum,
                myo_mape_mean: r.myo_mape_mean,
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Bland-Altman data for myocardial means

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedMean {
    pub map_id: String,
    pub subject_id: String,
    pub modality: Modality,
    pub mean_a: f64,
    pub mean_b: f64,
}

/// Myocardial mean of every selected map under two mask sources.
pub fn paired_myocardial_means(
    cohort: &Cohort,
    source_a: &str,
    source_b: &str,
    subset: SubsetFilter,
) -> Result<Vec<PairedMean>> {
    let mut out = Vec::new();
    for s in cohort.select(subset)? {
        for e in &s.maps {
            let ctx = |err| match err {
                Error::EmptyMyocardium(_) => Error::EmptyMyocardium(Some(e.map.map_id.clone())),
                other => other,
            };
            let a = mean(&myocardial_pixels(&e.map.grid, e.mask(source_a)?).map_err(ctx)?);
            let b = mean(&myocardial_pixels(&e.map.grid, e.mask(source_b)?).map_err(ctx)?);
            out.push(PairedMean {
                map_id: e.map.map_id.clone(),
                subject_id: s.subject_id.clone(),
                modality: e.map.modality,
                mean_a: a,
                mean_b: b,
            });
        }
    }
    Ok(out)
}

/// Limits of agreement and correlation for one modality group. The mixed
/// `All` group is never produced since T1 and T2 are on different scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanGroup {
    pub modality_group: ModalityGroup,
    pub n: usize,
    pub bias: f64,
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    pub pearson_r: Option<f64>,
    pub pearson_p: Option<f64>,
}

pub fn bland_altman_by_group(points: &[PairedMean]) -> Result<Vec<BlandAltmanGroup>> {
    let mut out = Vec::new();
    for g in [ModalityGroup::T2, ModalityGroup::T1Pre, ModalityGroup::T1Post] {
        let sel: Vec<&PairedMean> = points.iter().filter(|p| g.includes(p.modality)).collect();
        if sel.len() < 2 {
            continue;
        }
        let a: Vec<f64> = sel.iter().map(|p| p.mean_a).collect();
        let b: Vec<f64> = sel.iter().map(|p| p.mean_b).collect();
        let ba = bland_altman(&a, &b)?;
        let corr = match pearson(&a, &b) {
            Ok(c) => Some(c),
            Err(Error::ConstantInput | Error::TooFew { .. }) => None,
            Err(e) => return Err(e),
        };
        out.push(BlandAltmanGroup {
            modality_group: g,
            n: sel.len(),
            bias: ba.bias,
            sd_diff: ba.sd_diff,
            loa_low: ba.loa_low,
            loa_high: ba.loa_high,
            pearson_r: corr.map(|c| c.r),
            pearson_p: corr.map(|c| c.p_two_sided),
        });
    }
    Ok(out)
}
