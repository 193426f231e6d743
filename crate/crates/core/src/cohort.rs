//! Cohort data model, manifest IO, validation and train/validation/test
//! splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

/// A 2-D raster in row-major order with physical pixel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid<T = f64> {
    pub rows: usize,
    pub cols: usize,
    /// (row spacing, column spacing) in mm.
    pub spacing_mm: [f64; 2],
    pub values: Vec<T>,
}

impl<T: Real> PixelGrid<T> {
    pub fn new(rows: usize, cols: usize, spacing_mm: [f64; 2], values: Vec<T>) -> Result<Self> {
        check_shape(rows, cols, spacing_mm, values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Schema(format!("non-finite value at index {i}")));
        }
        Ok(Self { rows, cols, spacing_mm, values })
    }

    pub fn filled(rows: usize, cols: usize, spacing_mm: [f64; 2], value: T) -> Self {
        Self { rows, cols, spacing_mm, values: vec![value; rows * cols] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.values[r * self.cols + c] = v;
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn cast<U: Real>(&self) -> PixelGrid<U> {
        PixelGrid {
            rows: self.rows,
            cols: self.cols,
            spacing_mm: self.spacing_mm,
            values: self.values.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

fn check_shape(rows: usize, cols: usize, spacing: [f64; 2], len: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::Schema(format!("empty grid {rows}x{cols}")));
    }
    if !(spacing[0] > 0.0 && spacing[1] > 0.0) || !spacing.iter().all(|s| s.is_finite()) {
        return Err(Error::BadSpacing(format!("{spacing:?}")));
    }
    if len != rows * cols {
        return Err(Error::Schema(format!(
            "{len} values for a {rows}x{cols} grid"
        )));
    }
    Ok(())
}

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_BLOOD: u8 = 1;
pub const LABEL_MYOCARDIUM: u8 = 2;

/// Three-class segmentation raster co-registered with a parametric map.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    pub source: String,
    pub rows: usize,
    pub cols: usize,
    pub spacing_mm: [f64; 2],
    pub labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(
        source: impl Into<String>,
        rows: usize,
        cols: usize,
        spacing_mm: [f64; 2],
        labels: Vec<u8>,
    ) -> Result<Self> {
        check_shape(rows, cols, spacing_mm, labels.len())?;
        if let Some(i) = labels.iter().position(|&l| l > LABEL_MYOCARDIUM) {
            return Err(Error::Label(format!("label {} at index {i}", labels[i])));
        }
        Ok(Self { source: source.into(), rows, cols, spacing_mm, labels })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.labels[r * self.cols + c]
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn same_geometry<T>(&self, grid: &PixelGrid<T>) -> bool {
        self.rows == grid.rows && self.cols == grid.cols && self.spacing_mm == grid.spacing_mm
    }

    pub fn same_geometry_as(&self, other: &LabelMask) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.spacing_mm == other.spacing_mm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    T1Native,
    T1Post,
    T2,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::T1Native, Modality::T1Post, Modality::T2];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::T1Native => "t1_native",
            Modality::T1Post => "t1_post",
            Modality::T2 => "t2",
        }
    }

    pub fn is_native(self) -> bool {
        matches!(self, Modality::T1Native | Modality::T2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceLocation {
    Basal,
    Mid,
    Apical,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnosis {
    Normal,
    Myocarditis,
    Sarcoidosis,
    Systemic,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 4] = [
        Diagnosis::Normal,
        Diagnosis::Myocarditis,
        Diagnosis::Sarcoidosis,
        Diagnosis::Systemic,
    ];

    pub fn is_diseased(self) -> bool {
        self != Diagnosis::Normal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Train,
    Validation,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Validation, Subset::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Validation => "validation",
            Subset::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Subset::Train),
            "validation" => Some(Subset::Validation),
            "test" => Some(Subset::Test),
            _ => None,
        }
    }
}

/// A set of subsets to operate on, e.g. `train+validation`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsetFilter {
    train: bool,
    validation: bool,
    test: bool,
}

impl SubsetFilter {
    pub const ALL: SubsetFilter = SubsetFilter { train: true, validation: true, test: true };
    pub const TRAIN: SubsetFilter = SubsetFilter { train: true, validation: false, test: false };
    pub const VALIDATION: SubsetFilter =
        SubsetFilter { train: false, validation: true, test: false };
    pub const TEST: SubsetFilter = SubsetFilter { train: false, validation: false, test: true };
    pub const TRAIN_VALIDATION: SubsetFilter =
        SubsetFilter { train: true, validation: true, test: false };

    pub fn contains(&self, s: Subset) -> bool {
        match s {
            Subset::Train => self.train,
            Subset::Validation => self.validation,
            Subset::Test => self.test,
        }
    }

    pub fn is_all(&self) -> bool {
        *self == Self::ALL
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Self::ALL);
        }
        let mut f = SubsetFilter { train: false, validation: false, test: false };
        for part in s.split('+') {
            match Subset::parse(part.trim()) {
                Some(Subset::Train) => f.train = true,
                Some(Subset::Validation) => f.validation = true,
                Some(Subset::Test) => f.test = true,
                None => return Err(Error::Config(format!("unknown subset `{part}`"))),
            }
        }
        Ok(f)
    }
}

impl std::fmt::Display for SubsetFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_all() {
            return f.write_str("all");
        }
        let parts: Vec<&str> = Subset::ALL
            .iter()
            .filter(|s| self.contains(**s))
            .map(|s| s.as_str())
            .collect();
        f.write_str(&parts.join("+"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricMap {
    pub map_id: String,
    pub subject_id: String,
    pub modality: Modality,
    pub slice_location: SliceLocation,
    pub grid: PixelGrid<f64>,
}

/// A map together with every available segmentation of it, keyed by source.
#[derive(Debug, Clone, PartialEq)]
pub struct MapEntry {
    pub map: ParametricMap,
    pub masks: BTreeMap<String, LabelMask>,
}

impl MapEntry {
    pub fn mask(&self, source: &str) -> Result<&LabelMask> {
        self.masks.get(source).ok_or_else(|| Error::MissingSource {
            source_name: source.to_string(),
            map_id: self.map.map_id.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub subject_id: String,
    pub diagnosis: Diagnosis,
    pub maps: Vec<MapEntry>,
}

impl Subject {
    /// Binary disease label, always derived from the diagnosis.
    pub fn diseased(&self) -> bool {
        self.diagnosis.is_diseased()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cohort {
    pub subjects: Vec<Subject>,
    /// Empty for an unsplit cohort.
    pub split: BTreeMap<String, Subset>,
}

impl Cohort {
    pub fn n_maps(&self) -> usize {
        self.subjects.iter().map(|s| s.maps.len()).sum()
    }

    pub fn is_split(&self) -> bool {
        !self.split.is_empty()
    }

    pub fn subset_of(&self, subject_id: &str) -> Option<Subset> {
        self.split.get(subject_id).copied()
    }

    /// Subjects whose split assignment is selected by `filter`. An unsplit
    /// cohort only answers the `all` filter.
    pub fn select(&self, filter: SubsetFilter) -> Result<Vec<&Subject>> {
        if filter.is_all() {
            return Ok(self.subjects.iter().collect());
        }
        if !self.is_split() {
            return Err(Error::Unsplit);
        }
        Ok(self
            .subjects
            .iter()
            .filter(|s| self.subset_of(&s.subject_id).is_some_and(|x| filter.contains(x)))
            .collect())
    }
}

// ---------------------------------------------------------------------------
// File formats

#[derive(Debug, Serialize, Deserialize)]
struct MapFile {
    rows: usize,
    cols: usize,
    spacing_mm: [f64; 2],
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskFile {
    rows: usize,
    cols: usize,
    spacing_mm: [f64; 2],
    labels: Vec<i64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub subjects: Vec<ManifestSubject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<BTreeMap<String, Subset>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSubject {
    pub subject_id: String,
    pub diagnosis: Diagnosis,
    pub maps: Vec<ManifestMap>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMap {
    pub map_id: String,
    pub modality: Modality,
    pub slice_location: SliceLocation,
    pub map_file: String,
    #[serde(default)]
    pub masks: BTreeMap<String, String>,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = if pretty {
        serde_json::to_vec_pretty(value)
    } else {
        serde_json::to_vec(value)
    }
    .map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_map_file(path: &Path) -> Result<PixelGrid<f64>> {
    let f: MapFile = read_json(path)?;
    let grid = PixelGrid::new(f.rows, f.cols, f.spacing_mm, f.values)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    if let Some(i) = grid.values.iter().position(|&v| v < 0.0) {
        return Err(Error::Schema(format!("{}: negative value at index {i}", path.display())));
    }
    Ok(grid)
}

pub fn load_mask_file(path: &Path, source: &str) -> Result<LabelMask> {
    let f: MaskFile = read_json(path)?;
    check_shape(f.rows, f.cols, f.spacing_mm, f.labels.len())
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let mut labels = Vec::with_capacity(f.labels.len());
    for (i, &l) in f.labels.iter().enumerate() {
        if !(0..=2).contains(&l) {
            return Err(Error::Label(format!("{}: label {l} at index {i}", path.display())));
        }
        labels.push(l as u8);
    }
    Ok(LabelMask {
        source: source.to_string(),
        rows: f.rows,
        cols: f.cols,
        spacing_mm: f.spacing_mm,
        labels,
    })
}

pub fn save_map_file<T: Real>(path: &Path, grid: &PixelGrid<T>) -> Result<()> {
    let f = MapFile {
        rows: grid.rows,
        cols: grid.cols,
        spacing_mm: grid.spacing_mm,
        values: grid.values.iter().map(|v| v.f64()).collect(),
    };
    write_json(path, &f, false)
}

pub fn save_mask_file(path: &Path, mask: &LabelMask) -> Result<()> {
    let f = MaskFile {
        rows: mask.rows,
        cols: mask.cols,
        spacing_mm: mask.spacing_mm,
        labels: mask.labels.iter().map(|&l| i64::from(l)).collect(),
    };
    write_json(path, &f, false)
}

/// Loads a manifest and every map and mask file it references. Relative
/// paths resolve against the manifest's directory.
pub fn load_cohort(manifest_path: &Path) -> Result<Cohort> {
    let manifest: Manifest = match read_json(manifest_path) {
        Err(Error::Json { path, source }) => {
            return Err(Error::Schema(format!("{}: {source}", path.display())))
        }
        other => other?,
    };
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for ms in manifest.subjects {
        let mut maps = Vec::with_capacity(ms.maps.len());
        for mm in ms.maps {
            let grid = load_map_file(&base.join(&mm.map_file))?;
            let mut masks = BTreeMap::new();
            for (source, rel) in &mm.masks {
                let mask = load_mask_file(&base.join(rel), source)?;
                if !mask.same_geometry(&grid) {
                    return Err(Error::ShapeMismatch(format!(
                        "mask `{source}` of map `{}` is {}x{} @ {:?}, map is {}x{} @ {:?}",
                        mm.map_id,
                        mask.rows,
                        mask.cols,
                        mask.spacing_mm,
                        grid.rows,
                        grid.cols,
                        grid.spacing_mm
                    )));
                }
                masks.insert(source.clone(), mask);
            }
            maps.push(MapEntry {
                map: ParametricMap {
                    map_id: mm.map_id,
                    subject_id: ms.subject_id.clone(),
                    modality: mm.modality,
                    slice_location: mm.slice_location,
                    grid,
                },
                masks,
            });
        }
        subjects.push(Subject { subject_id: ms.subject_id, diagnosis: ms.diagnosis, maps });
    }
    Ok(Cohort { subjects, split: manifest.split.unwrap_or_default() })
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `cohort` under `dir` as `manifest.json` plus `maps/` and `masks/`.
/// Returns the manifest path.
pub fn save_cohort(cohort: &Cohort, dir: &Path) -> Result<PathBuf> {
    let mut subjects = Vec::with_capacity(cohort.subjects.len());
    for s in &cohort.subjects {
        let mut maps = Vec::with_capacity(s.maps.len());
        for e in &s.maps {
            let stem = file_stem(&e.map.map_id);
            let map_file = format!("maps/{stem}.json");
            save_map_file(&dir.join(&map_file), &e.map.grid)?;
            let mut masks = BTreeMap::new();
            for (source, mask) in &e.masks {
                let rel = format!("masks/{stem}.{}.json", file_stem(source));
                save_mask_file(&dir.join(&rel), mask)?;
                masks.insert(source.clone(), rel);
            }
            maps.push(ManifestMap {
                map_id: e.map.map_id.clone(),
                modality: e.map.modality,
                slice_location: e.map.slice_location,
                map_file,
                masks,
            });
        }
        subjects.push(ManifestSubject {
            subject_id: s.subject_id.clone(),
            diagnosis: s.diagnosis,
            maps,
        });
    }
    let manifest = Manifest {
        subjects,
        split: cohort.is_split().then(|| cohort.split.clone()),
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest, true)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub subject_id: String,
    pub map_id: Option<String>,
    pub rule: String,
}

impl Issue {
    fn new(subject_id: &str, map_id: Option<&str>, rule: impl Into<String>) -> Self {
        Self {
            subject_id: subject_id.to_string(),
            map_id: map_id.map(str::to_string),
            rule: rule.into(),
        }
    }
}

/// Checks every cohort invariant. Returns an empty list for a valid cohort.
pub fn validate_cohort(cohort: &Cohort) -> Vec<Issue> {
    let mut issues = Vec::new();
    let mut seen_subjects = BTreeSet::new();
    let mut seen_maps: BTreeMap<&str, &str> = BTreeMap::new();

    for s in &cohort.subjects {
        let sid = s.subject_id.as_str();
        if sid.is_empty() {
            issues.push(Issue::new(sid, None, "empty subject_id"));
        }
        if !seen_subjects.insert(sid) {
            issues.push(Issue::new(sid, None, "duplicate subject_id"));
        }
        if !s.maps.iter().any(|e| e.map.modality.is_native()) {
            issues.push(Issue::new(sid, None, "no native modality"));
        }
        for e in &s.maps {
            let mid = e.map.map_id.as_str();
            if mid.is_empty() {
                issues.push(Issue::new(sid, Some(mid), "empty map_id"));
            }
            if seen_maps.insert(mid, sid).is_some() {
                issues.push(Issue::new(sid, Some(mid), "duplicate map_id"));
            }
            if e.map.subject_id != s.subject_id {
                issues.push(Issue::new(sid, Some(mid), "map subject_id differs from subject"));
            }
            let g = &e.map.grid;
            if let Err(err) = check_shape(g.rows, g.cols, g.spacing_mm, g.values.len()) {
                issues.push(Issue::new(sid, Some(mid), format!("invalid grid: {err}")));
            }
            if g.values.iter().any(|v| !v.is_finite()) {
                issues.push(Issue::new(sid, Some(mid), "non-finite value"));
            } else if g.values.iter().any(|&v| v < 0.0) {
                issues.push(Issue::new(sid, Some(mid), "negative relaxation value"));
            }
            for (source, mask) in &e.masks {
                if mask.source != *source {
                    issues.push(Issue::new(sid, Some(mid), format!("mask key `{source}` differs from mask source")));
                }
                if !mask.same_geometry(g) {
                    issues.push(Issue::new(sid, Some(mid), format!("mask `{source}` shape mismatch")));
                }
                if mask.labels.iter().any(|&l| l > LABEL_MYOCARDIUM) {
                    issues.push(Issue::new(sid, Some(mid), format!("mask `{source}` label out of range")));
                }
            }
        }
    }

    if cohort.is_split() {
        for s in &cohort.subjects {
            if !cohort.split.contains_key(&s.subject_id) {
                issues.push(Issue::new(&s.subject_id, None, "subject missing from split"));
            }
        }
        for id in cohort.split.keys() {
            if !seen_subjects.contains(id.as_str()) {
                issues.push(Issue::new(id, None, "split names unknown subject"));
            }
        }
    }
    issues
}

// ---------------------------------------------------------------------------
// Splitting

/// Rounds `total · fractions[i]` to integers summing to `total`; leftover
/// units go to the largest fractional parts, ties to the lower index.
pub fn largest_remainder(total: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per-class subset counts. Each row is rounded by largest remainder while
/// the column totals are held at the largest-remainder rounding of the whole
/// cohort, so class counts and subset sizes agree simultaneously. Falls back
/// to independent per-class rounding if the greedy allocation cannot satisfy
/// both margins.
pub fn stratified_counts(class_sizes: &[usize], fractions: &[f64; 3]) -> Vec<[usize; 3]> {
    let total: usize = class_sizes.iter().sum();
    let col_target = largest_remainder(total, fractions);
    let quotas: Vec<[f64; 3]> = class_sizes
        .iter()
        .map(|&n| [0, 1, 2].map(|j| fractions[j] * n as f64))
        .collect();
    let mut counts: Vec<[usize; 3]> =
        quotas.iter().map(|q| q.map(|x| x.floor() as usize)).collect();

    let mut row_left: Vec<usize> = class_sizes
        .iter()
        .zip(&counts)
        .map(|(&n, c)| n - c.iter().sum::<usize>())
        .collect();
    let mut col_left: Vec<isize> = (0..3)
        .map(|j| col_target[j] as isize - counts.iter().map(|c| c[j] as isize).sum::<isize>())
        .collect();

    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    for (i, q) in quotas.iter().enumerate() {
        for j in 0..3 {
            let rem = q[j] - q[j].floor();
            if rem > 0.0 {
                cells.push((i, j, rem));
            }
        }
    }
    cells.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    for &(i, j, _) in &cells {
        if row_left[i] > 0 && col_left[j] > 0 {
            counts[i][j] += 1;
            row_left[i] -= 1;
            col_left[j] -= 1;
        }
    }
    if row_left.iter().any(|&r| r > 0) {
        return class_sizes
            .iter()
            .map(|&n| {
                let c = largest_remainder(n, fractions);
                [c[0], c[1], c[2]]
            })
            .collect();
    }
    counts
}

fn check_fractions(fractions: &[f64; 3]) -> Result<()> {
    if fractions.iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(Error::BadFractions(format!("{fractions:?} must all be positive")));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadFractions(format!("{fractions:?} sum to {sum}")));
    }
    Ok(())
}

/// Assigns every subject to train/validation/test.
///
/// Subjects are ordered by id, shuffled with a stream derived from `seed`,
/// and dealt into subsets by count. With `stratify`, counting and shuffling
/// happen per diagnosis class.
pub fn split_cohort(
    cohort: &Cohort,
    fractions: [f64; 3],
    seed: u64,
    stratify: bool,
) -> Result<Cohort> {
    check_fractions(&fractions)?;
    let mut split = BTreeMap::new();
    let by_id = |ids: &mut Vec<&str>| ids.sort_unstable();

    if stratify {
        let mut groups: Vec<Vec<&str>> = Vec::new();
        for d in Diagnosis::ALL {
            let ids: Vec<&str> = cohort
                .subjects
                .iter()
                .filter(|s| s.diagnosis == d)
                .map(|s| s.subject_id.as_str())
                .collect();
            if ids.is_empty() {
                return Err(Error::EmptyClass(format!("{d:?}")));
            }
            groups.push(ids);
        }
        let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
        let counts = stratified_counts(&sizes, &fractions);
        for ((d, mut ids), c) in Diagnosis::ALL.iter().zip(groups).zip(counts) {
            by_id(&mut ids);
            let mut r = rng::item_stream(seed, &format!("split/{d:?}"));
            ids.shuffle(&mut r);
            deal(&ids, &c, &mut split);
        }
    } else {
        let mut ids: Vec<&str> = cohort.subjects.iter().map(|s| s.subject_id.as_str()).collect();
        by_id(&mut ids);
        let c = largest_remainder(ids.len(), &fractions);
        let mut r = rng::item_stream(seed, "split/all");
        ids.shuffle(&mut r);
        deal(&ids, &[c[0], c[1], c[2]], &mut split);
    }
    Ok(Cohort { subjects: cohort.subjects.clone(), split })
}

fn deal(ids: &[&str], counts: &[usize; 3], out: &mut BTreeMap<String, Subset>) {
    let mut it = ids.iter();
    for (subset, &n) in Subset::ALL.iter().zip(counts) {
        for id in it.by_ref().take(n) {
            out.insert((*id).to_string(), *subset);
        }
    }
}
