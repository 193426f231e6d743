//! Myocardial pixel statistics (A, LQ, M, UQ) per map and per patient.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::{
    Cohort, LabelMask, Modality, PixelGrid, Subject, Subset, SubsetFilter, LABEL_MYOCARDIUM,
};
use crate::error::{Error, Result};
use crate::scalar::{mean, sorted, Real};

/// Values of `grid` under myocardium labels, in row-major order.
pub fn myocardial_pixels<T: Real>(grid: &PixelGrid<T>, mask: &LabelMask) -> Result<Vec<T>> {
    if !mask.same_geometry(grid) {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs map {}x{}",
            mask.rows, mask.cols, grid.rows, grid.cols
        )));
    }
    let v: Vec<T> = grid
        .values
        .iter()
        .zip(&mask.labels)
        .filter(|(_, &l)| l == LABEL_MYOCARDIUM)
        .map(|(&v, _)| v)
        .collect();
    if v.is_empty() {
        return Err(Error::EmptyMyocardium(Some(mask.source.clone())));
    }
    Ok(v)
}

/// Percentile on already sorted data, linear interpolation between closest
/// ranks: `h = (n−1)·q/100`, `v[⌊h⌋] + (h−⌊h⌋)·(v[⌊h⌋+1] − v[⌊h⌋])`.
pub fn percentile_sorted<T: Real>(sorted: &[T], q: f64) -> Result<T> {
    if sorted.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::Config(format!("percentile {q} outside [0, 100]")));
    }
    let n = sorted.len();
    let h = (n - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return Ok(sorted[n - 1]);
    }
    let frac = h - lo as f64;
    if frac == 0.0 {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + T::of(frac) * (sorted[lo + 1] - sorted[lo]))
}

pub fn percentile<T: Real>(values: &[T], q: f64) -> Result<T> {
    percentile_sorted(&sorted(values), q)
}

/// Mean and quartiles of a pixel population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelStats<T = f64> {
    pub a: T,
    pub lq: T,
    pub m: T,
    pub uq: T,
    pub n_pixels: usize,
}

impl<T: Real> PixelStats<T> {
    pub fn as_array(&self) -> [T; 4] {
        [self.a, self.lq, self.m, self.uq]
    }
}

pub fn slice_features<T: Real>(values: &[T]) -> Result<PixelStats<T>> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let s = sorted(values);
    Ok(PixelStats {
        a: mean(values),
        lq: percentile_sorted(&s, 25.0)?,
        m: percentile_sorted(&s, 50.0)?,
        uq: percentile_sorted(&s, 75.0)?,
        n_pixels: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceFeatures {
    pub map_id: String,
    pub modality: Modality,
    #[serde(flatten)]
    pub stats: PixelStats<f64>,
}

/// One of the eight per-patient features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureName {
    T1A,
    T1Lq,
    T1M,
    T1Uq,
    T2A,
    T2Lq,
    T2M,
    T2Uq,
}

impl FeatureName {
    pub const ALL: [FeatureName; 8] = [
        FeatureName::T1A,
        FeatureName::T1Lq,
        FeatureName::T1M,
        FeatureName::T1Uq,
        FeatureName::T2A,
        FeatureName::T2Lq,
        FeatureName::T2M,
        FeatureName::T2Uq,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureName::T1A => "t1_a",
            FeatureName::T1Lq => "t1_lq",
            FeatureName::T1M => "t1_m",
            FeatureName::T1Uq => "t1_uq",
            FeatureName::T2A => "t2_a",
            FeatureName::T2Lq => "t2_lq",
            FeatureName::T2M => "t2_m",
            FeatureName::T2Uq => "t2_uq",
        }
    }

    pub fn modality(self) -> Modality {
        if (self as usize) < 4 {
            Modality::T1Native
        } else {
            Modality::T2
        }
    }

    /// Position within the modality block (A, LQ, M, UQ).
    pub fn stat_index(self) -> usize {
        self as usize % 4
    }
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureName::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature `{s}`")))
    }
}

pub fn parse_feature_list(s: &str) -> Result<Vec<FeatureName>> {
    s.split(',').map(|p| p.trim().parse()).collect()
}

/// Per-patient features for native T1 and T2. A block is absent when the
/// subject has no usable map of that modality.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub subject_id: String,
    pub diseased: bool,
    pub t1: Option<[f64; 4]>,
    pub t2: Option<[f64; 4]>,
}

impl FeatureVector {
    pub fn get(&self, f: FeatureName) -> Option<f64> {
        let block = match f.modality() {
            Modality::T1Native => self.t1,
            _ => self.t2,
        };
        block.map(|b| b[f.stat_index()])
    }
}

/// Averages slice features over each native modality's maps (unweighted).
/// Post-contrast maps and maps without `mask_source` are skipped.
pub fn patient_features(subject: &Subject, mask_source: &str) -> Result<FeatureVector> {
    let mut blocks: BTreeMap<Modality, Vec<[f64; 4]>> = BTreeMap::new();
    for e in &subject.maps {
        if !e.map.modality.is_native() {
            continue;
        }
        let Some(mask) = e.masks.get(mask_source) else { continue };
        let px = myocardial_pixels(&e.map.grid, mask).map_err(|err| match err {
            Error::EmptyMyocardium(_) => {
                Error::EmptyMyocardium(Some(format!("{} / {mask_source}", e.map.map_id)))
            }
            other => other,
        })?;
        blocks.entry(e.map.modality).or_default().push(slice_features(&px)?.as_array());
    }
    if blocks.is_empty() {
        return Err(Error::NoUsableMaps(subject.subject_id.clone()));
    }
    let avg = |m: Modality| {
        blocks.get(&m).map(|slices| {
            let n = slices.len() as f64;
            let mut out = [0.0; 4];
            for s in slices {
                for k in 0..4 {
                    out[k] += s[k];
                }
            }
            out.map(|v| v / n)
        })
    };
    Ok(FeatureVector {
        subject_id: subject.subject_id.clone(),
        diseased: subject.diseased(),
        t1: avg(Modality::T1Native),
        t2: avg(Modality::T2),
    })
}

/// Row of the features table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub split: Option<Subset>,
    pub features: FeatureVector,
}

/// Per-patient feature table, ordered as the cohort.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    subject_id: String,
    split: String,
    diseased: u8,
    t1_a: Option<f64>,
    t1_lq: Option<f64>,
    t1_m: Option<f64>,
    t1_uq: Option<f64>,
    t2_a: Option<f64>,
    t2_lq: Option<f64>,
    t2_m: Option<f64>,
    t2_uq: Option<f64>,
}

fn block(vals: [Option<f64>; 4], subject_id: &str) -> Result<Option<[f64; 4]>> {
    match vals {
        [Some(a), Some(b), Some(c), Some(d)] => Ok(Some([a, b, c, d])),
        [None, None, None, None] => Ok(None),
        _ => Err(Error::Schema(format!("partial feature block for subject `{subject_id}`"))),
    }
}

impl FeatureTable {
    pub fn from_cohort(cohort: &Cohort, mask_source: &str) -> Result<Self> {
        let rows = cohort
            .subjects
            .iter()
            .map(|s| {
                Ok(FeatureRow {
                    split: cohort.subset_of(&s.subject_id),
                    features: patient_features(s, mask_source)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn select(&self, filter: SubsetFilter) -> Result<Vec<&FeatureRow>> {
        if filter.is_all() {
            return Ok(self.rows.iter().collect());
        }
        if self.rows.iter().any(|r| r.split.is_none()) {
            return Err(Error::Unsplit);
        }
        Ok(self.rows.iter().filter(|r| r.split.is_some_and(|s| filter.contains(s))).collect())
    }

    /// Values and labels of one feature over the selected subjects that have it.
    pub fn column(&self, f: FeatureName, filter: SubsetFilter) -> Result<(Vec<f64>, Vec<bool>)> {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for r in self.select(filter)? {
            if let Some(v) = r.features.get(f) {
                x.push(v);
                y.push(r.features.diseased);
            }
        }
        Ok((x, y))
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            let f = &r.features;
            let t1 = f.t1.map_or([None; 4], |b| b.map(Some));
            let t2 = f.t2.map_or([None; 4], |b| b.map(Some));
            wr.serialize(CsvRow {
                subject_id: f.subject_id.clone(),
                split: r.split.map(|s| s.as_str().to_string()).unwrap_or_default(),
                diseased: u8::from(f.diseased),
                t1_a: t1[0],
                t1_lq: t1[1],
                t1_m: t1[2],
                t1_uq: t1[3],
                t2_a: t2[0],
                t2_lq: t2[1],
                t2_m: t2[2],
                t2_uq: t2[3],
            })?;
        }
        wr.flush().map_err(|e| Error::io("<features csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut rows = Vec::new();
        for rec in rd.deserialize() {
            let c: CsvRow = rec?;
            let split = if c.split.is_empty() {
                None
            } else {
                Some(Subset::parse(&c.split).ok_or_else(|| {
                    Error::Schema(format!("unknown split `{}`", c.split))
                })?)
            };
            let diseased = match c.diseased {
                0 => false,
                1 => true,
                v => return Err(Error::Schema(format!("diseased flag {v}"))),
            };
            rows.push(FeatureRow {
                split,
                features: FeatureVector {
                    t1: block([c.t1_a, c.t1_lq, c.t1_m, c.t1_uq], &c.subject_id)?,
                    t2: block([c.t2_a, c.t2_lq, c.t2_m, c.t2_uq], &c.subject_id)?,
                    subject_id: c.subject_id,
                    diseased,
                },
            });
        }
        Ok(Self { rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}
