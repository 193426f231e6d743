//! Synthetic annulus phantoms: a blood disc inside a myocardial ring, with
//! focal lesion wedges for diseased subjects and contour-jittered observer
//! masks.
//!
//! Everything is a pure function of the spec and seed. Subject-level draws
//! come from a stream keyed by the subject index, pixel draws from a stream
//! keyed by (subject, modality, slice), and observer jitter from a stream
//! keyed by (source, map id).

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{
    save_cohort, split_cohort, write_json, Cohort, Diagnosis, LabelMask, MapEntry, Modality, ParametricMap,
    PixelGrid, SliceLocation, Subject, LABEL_BACKGROUND, LABEL_BLOOD, LABEL_MYOCARDIUM,
};
use crate::error::{Error, Result};
use crate::rng::{item_seed, item_stream, stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tissue {
    pub mean: f64,
    pub sd: f64,
}

const fn tissue(mean: f64, sd: f64) -> Tissue {
    Tissue { mean, sd }
}

/// Intensity model of one modality, in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntensityModel {
    pub background: Tissue,
    pub blood: Tissue,
    /// `sd` is the within-slice pixel noise.
    pub myocardium: Tissue,
    /// Per-subject offset of the myocardial mean, shared by all slices.
    pub subject_sd: f64,
    /// Mean lesion shift and its between-subject sd.
    pub lesion_delta: f64,
    pub lesion_delta_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityModels {
    pub t1_native: IntensityModel,
    pub t1_post: IntensityModel,
    pub t2: IntensityModel,
}

impl ModalityModels {
    pub fn get(&self, m: Modality) -> &IntensityModel {
        match m {
            Modality::T1Native => &self.t1_native,
            Modality::T1Post => &self.t1_post,
            Modality::T2 => &self.t2,
        }
    }

    pub fn get_mut(&mut self, m: Modality) -> &mut IntensityModel {
        match m {
            Modality::T1Native => &mut self.t1_native,
            Modality::T1Post => &mut self.t1_post,
            Modality::T2 => &mut self.t2,
        }
    }
}

/// Which parametric contrast a diseased subject's lesion shows in.
/// Probabilities of T1-only, T2-only and both; the remainder shows in none.
/// Post-contrast T1 follows native T1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Involvement {
    pub t1_only: f64,
    pub t2_only: f64,
    pub both: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiseaseModel {
    pub myocarditis: Involvement,
    pub sarcoidosis: Involvement,
    pub systemic: Involvement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LesionModel {
    /// Angular extent of the wedge as a fraction of the full circle.
    pub fraction: f64,
    pub involvement: DiseaseModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMix {
    pub normal: usize,
    pub myocarditis: usize,
    pub sarcoidosis: usize,
    pub systemic: usize,
}

impl ClassMix {
    pub fn total(&self) -> usize {
        self.normal + self.myocarditis + self.sarcoidosis + self.systemic
    }

    /// Diagnosis of the subject at `index` (subjects are numbered class by class).
    pub fn diagnosis(&self, index: usize) -> Option<Diagnosis> {
        let mut i = index;
        for (d, n) in Diagnosis::ALL.iter().zip([self.normal, self.myocarditis, self.sarcoidosis, self.systemic]) {
            if i < n {
                return Some(*d);
            }
            i -= n;
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlicesPerModality {
    pub t1_native: usize,
    pub t1_post: usize,
    pub t2: usize,
}

impl SlicesPerModality {
    pub fn get(&self, m: Modality) -> usize {
        match m {
            Modality::T1Native => self.t1_native,
            Modality::T1Post => self.t1_post,
            Modality::T2 => self.t2,
        }
    }
}

/// Radial contour noise of a simulated reader.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverJitter {
    /// Pointwise sd of the boundary displacement.
    pub sd_mm: f64,
    /// Angular correlation length in radians; sets the number of Fourier
    /// harmonics in the noise field (`⌈π / length⌉`).
    pub correlation_rad: f64,
    /// Positive values thicken the myocardium on both contours.
    pub bias_mm: f64,
}

impl Default for ObserverJitter {
    fn default() -> Self {
        Self { sd_mm: 1.0, correlation_rad: 0.8, bias_mm: 0.0 }
    }
}

impl ObserverJitter {
    pub const NONE: ObserverJitter = ObserverJitter { sd_mm: 0.0, correlation_rad: 1.0, bias_mm: 0.0 };

    fn validate(&self) -> Result<()> {
        if !(self.sd_mm >= 0.0) || !(self.correlation_rad > 0.0) || !self.bias_mm.is_finite() {
            return Err(Error::BadSpec(format!("bad jitter {self:?}")));
        }
        Ok(())
    }

    fn harmonics(&self) -> usize {
        ((PI / self.correlation_rad).ceil() as usize).clamp(1, 64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceJitter {
    pub obs1: ObserverJitter,
    pub obs2: ObserverJitter,
    pub model: ObserverJitter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub grid_px: usize,
    pub spacing_mm: f64,
    pub blood_radius_mm: f64,
    pub myo_inner_radius_mm: f64,
    pub myo_outer_radius_mm: f64,
    pub intensity: ModalityModels,
    pub lesion: LesionModel,
    pub class_mix: ClassMix,
    pub slices: SlicesPerModality,
    pub split_fractions: [f64; 3],
    pub jitter: SourceJitter,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let t1_native = IntensityModel {
            background: tissue(300.0, 40.0),
            blood: tissue(1600.0, 50.0),
            myocardium: tissue(950.0, 25.0),
            subject_sd: 15.0,
            lesion_delta: 150.0,
            lesion_delta_sd: 25.0,
        };
        let t1_post = IntensityModel {
            background: tissue(250.0, 30.0),
            blood: tissue(300.0, 20.0),
            myocardium: tissue(450.0, 20.0),
            subject_sd: 20.0,
            lesion_delta: -80.0,
            lesion_delta_sd: 15.0,
        };
        let t2 = IntensityModel {
            background: tissue(30.0, 4.0),
            blood: tissue(150.0, 8.0),
            myocardium: tissue(48.0, 2.5),
            subject_sd: 1.0,
            lesion_delta: 12.0,
            lesion_delta_sd: 2.0,
        };
        Self {
            grid_px: 64,
            spacing_mm: 2.0,
            blood_radius_mm: 20.0,
            myo_inner_radius_mm: 20.0,
            myo_outer_radius_mm: 30.0,
            intensity: ModalityModels { t1_native, t1_post, t2 },
            lesion: LesionModel {
                fraction: 0.3,
                involvement: DiseaseModel {
                    myocarditis: Involvement { t1_only: 0.4, t2_only: 0.5, both: 0.1 },
                    sarcoidosis: Involvement { t1_only: 0.55, t2_only: 0.35, both: 0.1 },
                    systemic: Involvement { t1_only: 0.45, t2_only: 0.45, both: 0.1 },
                },
            },
            class_mix: ClassMix { normal: 52, myocarditis: 49, sarcoidosis: 20, systemic: 23 },
            slices: SlicesPerModality { t1_native: 2, t1_post: 1, t2: 2 },
            split_fractions: [100.0 / 144.0, 15.0 / 144.0, 29.0 / 144.0],
            jitter: SourceJitter {
                obs1: ObserverJitter { sd_mm: 0.8, correlation_rad: 0.8, bias_mm: 0.0 },
                obs2: ObserverJitter { sd_mm: 0.8, correlation_rad: 0.8, bias_mm: 0.4 },
                model: ObserverJitter { sd_mm: 1.0, correlation_rad: 0.6, bias_mm: -0.3 },
            },
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadSpec(m));
        if self.grid_px == 0 || !(self.spacing_mm > 0.0 && self.spacing_mm.is_finite()) {
            return bad("grid size and spacing must be positive".into());
        }
        if !(self.blood_radius_mm > 0.0
            && self.blood_radius_mm <= self.myo_inner_radius_mm
            && self.myo_inner_radius_mm < self.myo_outer_radius_mm)
        {
            return bad("need 0 < blood radius ≤ inner radius < outer radius".into());
        }
        if 2.0 * self.myo_outer_radius_mm > self.grid_px as f64 * self.spacing_mm {
            return bad("annulus does not fit in the grid".into());
        }
        for m in Modality::ALL {
            let im = self.intensity.get(m);
            for (name, t) in [("background", im.background), ("blood", im.blood), ("myocardium", im.myocardium)] {
                if !(t.sd >= 0.0) || !t.mean.is_finite() {
                    return bad(format!("{}: {name} needs finite mean and sd ≥ 0", m.as_str()));
                }
            }
            if !(im.subject_sd >= 0.0 && im.lesion_delta_sd >= 0.0) || !im.lesion_delta.is_finite() {
                return bad(format!("{}: sds must be ≥ 0", m.as_str()));
            }
        }
        if !(0.0..=1.0).contains(&self.lesion.fraction) {
            return bad("lesion fraction must lie in [0, 1]".into());
        }
        let inv = self.lesion.involvement;
        for v in [inv.myocarditis, inv.sarcoidosis, inv.systemic] {
            let ps = [v.t1_only, v.t2_only, v.both];
            if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || ps.iter().sum::<f64>() > 1.0 + 1e-12 {
                return bad(format!("involvement probabilities {v:?} out of range"));
            }
        }
        let s = self.split_fractions;
        if s.iter().any(|f| !(0.0..=1.0).contains(f)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split fractions must be in [0, 1] and sum to 1".into());
        }
        for j in [self.jitter.obs1, self.jitter.obs2, self.jitter.model] {
            j.validate()?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: Self = crate::cohort::read_json(path)?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self, true)
    }

    fn involvement(&self, d: Diagnosis) -> Option<Involvement> {
        let inv = self.lesion.involvement;
        match d {
            Diagnosis::Normal => None,
            Diagnosis::Myocarditis => Some(inv.myocarditis),
            Diagnosis::Sarcoidosis => Some(inv.sarcoidosis),
            Diagnosis::Systemic => Some(inv.systemic),
        }
    }
}

pub fn subject_id(index: usize) -> String {
    format!("P{:03}", index + 1)
}

pub fn map_id(subject_index: usize, modality: Modality, slice: usize) -> String {
    format!("{}_{}_s{slice}", subject_id(subject_index), modality.as_str())
}

fn slice_location(slice: usize, n: usize) -> SliceLocation {
    match (n, slice) {
        (1, 0) => SliceLocation::Mid,
        (_, 0) => SliceLocation::Basal,
        (_, 1) => SliceLocation::Mid,
        (_, 2) => SliceLocation::Apical,
        _ => SliceLocation::Unknown,
    }
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("sd validated ≥ 0")
}

/// Subject-level random state.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDraws {
    pub diagnosis: Diagnosis,
    /// Lesion present in native T1 (and post-contrast T1) maps.
    pub t1_lesion: bool,
    pub t2_lesion: bool,
    /// Myocardial offset and lesion shift per modality, in `Modality::ALL` order.
    pub offset: [f64; 3],
    pub delta: [f64; 3],
}

impl SubjectDraws {
    pub fn lesion_in(&self, m: Modality) -> bool {
        match m {
            Modality::T1Native | Modality::T1Post => self.t1_lesion,
            Modality::T2 => self.t2_lesion,
        }
    }
}

pub fn subject_draws(spec: &PhantomSpec, subject_index: usize, seed: u64) -> Result<SubjectDraws> {
    let diagnosis = spec
        .class_mix
        .diagnosis(subject_index)
        .ok_or_else(|| Error::BadSpec(format!("subject index {subject_index} beyond class mix")))?;
    let mut rng = item_stream(seed, &format!("subject/{subject_index}"));
    let u: f64 = rng.random();
    let (t1_lesion, t2_lesion) = match spec.involvement(diagnosis) {
        None => (false, false),
        Some(v) if u < v.t1_only => (true, false),
        Some(v) if u < v.t1_only + v.t2_only => (false, true),
        Some(v) if u < v.t1_only + v.t2_only + v.both => (true, true),
        Some(_) => (false, false),
    };
    let mut offset = [0.0; 3];
    let mut delta = [0.0; 3];
    for (i, m) in Modality::ALL.iter().enumerate() {
        let im = spec.intensity.get(*m);
        offset[i] = normal(0.0, im.subject_sd).sample(&mut rng);
        delta[i] = normal(im.lesion_delta, im.lesion_delta_sd).sample(&mut rng);
    }
    Ok(SubjectDraws { diagnosis, t1_lesion, t2_lesion, offset, delta })
}

/// Ground-truth labels of the annulus phantom and, for myocardial pixels,
/// whether they fall in a lesion wedge starting at angle `wedge_start`.
fn rasterize(spec: &PhantomSpec, wedge_start: f64, fraction: f64) -> (Vec<u8>, Vec<bool>) {
    let n = spec.grid_px;
    let half = n as f64 / 2.0;
    let mut labels = vec![LABEL_BACKGROUND; n * n];
    let mut lesion = vec![false; n * n];
    for r in 0..n {
        for c in 0..n {
            let y = (r as f64 + 0.5 - half) * spec.spacing_mm;
            let x = (c as f64 + 0.5 - half) * spec.spacing_mm;
            let rho = x.hypot(y);
            let i = r * n + c;
            if rho < spec.blood_radius_mm {
                labels[i] = LABEL_BLOOD;
            } else if rho >= spec.myo_inner_radius_mm && rho < spec.myo_outer_radius_mm {
                labels[i] = LABEL_MYOCARDIUM;
                let theta = y.atan2(x).rem_euclid(TAU);
                lesion[i] = (theta - wedge_start).rem_euclid(TAU) < TAU * fraction;
            }
        }
    }
    (labels, lesion)
}

/// One phantom slice and its ground-truth mask (source `gt`).
pub fn generate_phantom(
    spec: &PhantomSpec,
    subject_index: usize,
    slice_index: usize,
    modality: Modality,
    seed: u64,
) -> Result<(ParametricMap, LabelMask)> {
    spec.validate()?;
    let draws = subject_draws(spec, subject_index, seed)?;
    Ok(phantom_slice(spec, subject_index, slice_index, modality, seed, &draws))
}

fn phantom_slice(
    spec: &PhantomSpec,
    subject_index: usize,
    slice_index: usize,
    modality: Modality,
    seed: u64,
    draws: &SubjectDraws,
) -> (ParametricMap, LabelMask) {
    let mut rng = item_stream(seed, &format!("map/{subject_index}/{}/{slice_index}", modality.as_str()));
    let wedge_start = rng.random::<f64>() * TAU;
    let mi = Modality::ALL.iter().position(|m| *m == modality).expect("known modality");
    let lesioned = draws.lesion_in(modality);
    let (labels, lesion) = rasterize(spec, wedge_start, if lesioned { spec.lesion.fraction } else { 0.0 });
    let im = spec.intensity.get(modality);
    let bg = normal(im.background.mean, im.background.sd);
    let blood = normal(im.blood.mean, im.blood.sd);
    let myo = normal(im.myocardium.mean + draws.offset[mi], im.myocardium.sd);
    let values: Vec<f64> = labels
        .iter()
        .zip(&lesion)
        .map(|(&l, &les)| {
            let v = match l {
                LABEL_BLOOD => blood.sample(&mut rng),
                LABEL_MYOCARDIUM => myo.sample(&mut rng) + if les { draws.delta[mi] } else { 0.0 },
                _ => bg.sample(&mut rng),
            };
            v.max(0.0)
        })
        .collect();
    let n = spec.grid_px;
    let sp = [spec.spacing_mm; 2];
    let map = ParametricMap {
        map_id: map_id(subject_index, modality, slice_index),
        subject_id: subject_id(subject_index),
        modality,
        slice_location: slice_location(slice_index, spec.slices.get(modality)),
        grid: PixelGrid { rows: n, cols: n, spacing_mm: sp, values },
    };
    let mask = LabelMask { source: "gt".into(), rows: n, cols: n, spacing_mm: sp, labels };
    (map, mask)
}

struct Field {
    coef: Vec<(f64, f64)>,
}

impl Field {
    fn draw(j: &ObserverJitter, rng: &mut Stream) -> Self {
        let k = j.harmonics();
        let sd = j.sd_mm / (k as f64).sqrt();
        let nd = normal(0.0, sd);
        Self { coef: (0..k).map(|_| (nd.sample(rng), nd.sample(rng))).collect() }
    }

    fn at(&self, theta: f64) -> f64 {
        self.coef
            .iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let kt = (k + 1) as f64 * theta;
                a * kt.cos() + b * kt.sin()
            })
            .sum()
    }
}

/// Re-rasterizes `mask` with both myocardial contours displaced radially by
/// smooth random fields plus `bias_mm`.
///
/// Contours are modelled as circles around the centroid of the heart
/// (labels 1 ∪ 2) with radii from the region areas; the displaced contours
/// are rasterized at pixel centres. Any gap between blood pool and
/// myocardium in the input is not preserved.
pub fn perturb_mask(mask: &LabelMask, jitter: &ObserverJitter, seed: u64) -> Result<LabelMask> {
    jitter.validate()?;
    let n_myo = mask.count(LABEL_MYOCARDIUM);
    if n_myo == 0 {
        return Err(Error::EmptyMyocardium(Some(mask.source.clone())));
    }
    if jitter.sd_mm == 0.0 && jitter.bias_mm == 0.0 {
        return Ok(mask.clone());
    }
    let (rows, cols) = (mask.rows, mask.cols);
    let [sy, sx] = mask.spacing_mm;
    let (mut cy, mut cx, mut n_heart) = (0.0, 0.0, 0usize);
    for r in 0..rows {
        for c in 0..cols {
            if mask.get(r, c) != LABEL_BACKGROUND {
                cy += (r as f64 + 0.5) * sy;
                cx += (c as f64 + 0.5) * sx;
                n_heart += 1;
            }
        }
    }
    cy /= n_heart as f64;
    cx /= n_heart as f64;
    let px_area = sy * sx;
    let r_out = (n_heart as f64 * px_area / PI).sqrt();
    let r_in = ((n_heart - n_myo) as f64 * px_area / PI).sqrt();
    let min_px = sy.min(sx);

    let mut rng = stream(seed);
    let endo = Field::draw(jitter, &mut rng);
    let epi = Field::draw(jitter, &mut rng);
    let mut labels = vec![LABEL_BACKGROUND; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let y = (r as f64 + 0.5) * sy - cy;
            let x = (c as f64 + 0.5) * sx - cx;
            let rho = x.hypot(y);
            let theta = y.atan2(x);
            let ri = (r_in + endo.at(theta) - jitter.bias_mm).max(if r_in > 0.0 { 0.5 * min_px } else { 0.0 });
            let ro = (r_out + epi.at(theta) + jitter.bias_mm).max(ri + min_px);
            labels[r * cols + c] = if rho < ri {
                LABEL_BLOOD
            } else if rho < ro {
                LABEL_MYOCARDIUM
            } else {
                LABEL_BACKGROUND
            };
        }
    }
    Ok(LabelMask { source: mask.source.clone(), rows, cols, spacing_mm: mask.spacing_mm, labels })
}

pub const SOURCES: [&str; 4] = ["gt", "obs1", "obs2", "model"];

fn jitter_for<'a>(spec: &'a PhantomSpec, source: &str) -> &'a ObserverJitter {
    match source {
        "obs1" => &spec.jitter.obs1,
        "obs2" => &spec.jitter.obs2,
        _ => &spec.jitter.model,
    }
}

fn generate_subject(spec: &PhantomSpec, index: usize) -> Result<Subject> {
    let draws = subject_draws(spec, index, spec.seed)?;
    let mut maps = Vec::new();
    for m in Modality::ALL {
        for slice in 0..spec.slices.get(m) {
            let (map, gt) = phantom_slice(spec, index, slice, m, spec.seed, &draws);
            let mut masks = BTreeMap::new();
            for source in &SOURCES[1..] {
                let s = item_seed(spec.seed, &format!("jitter/{source}/{}", map.map_id));
                let mut pm = perturb_mask(&gt, jitter_for(spec, source), s)?;
                pm.source = (*source).to_string();
                masks.insert((*source).to_string(), pm);
            }
            masks.insert("gt".into(), gt);
            maps.push(MapEntry { map, masks });
        }
    }
    Ok(Subject { subject_id: subject_id(index), diagnosis: draws.diagnosis, maps })
}

/// Builds the whole cohort with a stratified split; subjects are generated
/// in parallel but the result does not depend on scheduling.
pub fn generate_cohort(spec: &PhantomSpec) -> Result<Cohort> {
    spec.validate()?;
    let n = spec.class_mix.total();
    if n == 0 {
        return Err(Error::BadSpec("class mix is empty".into()));
    }
    let subjects = (0..n).into_par_iter().map(|i| generate_subject(spec, i)).collect::<Result<Vec<_>>>()?;
    let cohort = Cohort { subjects, split: BTreeMap::new() };
    let stratify = [spec.class_mix.normal, spec.class_mix.myocarditis, spec.class_mix.sarcoidosis, spec.class_mix.systemic]
        .iter()
        .all(|&c| c > 0);
    split_cohort(&cohort, spec.split_fractions, spec.seed, stratify)
}

/// Generates the cohort and writes it plus a copy of the spec under `dir`.
/// Returns the cohort and its manifest path.
pub fn write_phantom_cohort(spec: &PhantomSpec, dir: &Path) -> Result<(Cohort, PathBuf)> {
    let cohort = generate_cohort(spec)?;
    let manifest = save_cohort(&cohort, dir)?;
    spec.save(&dir.join("phantom_spec.json"))?;
    Ok((cohort, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agreement::dice;
    use crate::features::{myocardial_pixels, slice_features};

    fn quiet() -> PhantomSpec {
        let mut s = PhantomSpec::default();
        for m in Modality::ALL {
            let im = s.intensity.get_mut(m);
            im.background.sd = 0.0;
            im.blood.sd = 0.0;
            im.myocardium.sd = 0.0;
            im.subject_sd = 0.0;
            im.lesion_delta_sd = 0.0;
        }
        s
    }

    #[test]
    fn zero_noise_healthy_slice_is_flat() {
        let s = quiet();
        let (map, mask) = generate_phantom(&s, 0, 0, Modality::T1Native, 7).unwrap();
        let f = slice_features(&myocardial_pixels(&map.grid, &mask).unwrap()).unwrap();
        assert_eq!([f.a, f.lq, f.m, f.uq], [950.0; 4]);
    }

    #[test]
    fn annulus_area_within_perimeter_bound() {
        let s = PhantomSpec::default();
        let (_, mask) = generate_phantom(&s, 0, 0, Modality::T2, 1).unwrap();
        let px = s.spacing_mm * s.spacing_mm;
        let area = PI * (s.myo_outer_radius_mm.powi(2) - s.myo_inner_radius_mm.powi(2)) / px;
        let perimeter = TAU * (s.myo_outer_radius_mm + s.myo_inner_radius_mm) / s.spacing_mm;
        assert!((mask.count(LABEL_MYOCARDIUM) as f64 - area).abs() <= perimeter);
        let blood = PI * s.blood_radius_mm.powi(2) / px;
        assert!((mask.count(LABEL_BLOOD) as f64 - blood).abs() <= TAU * s.blood_radius_mm / s.spacing_mm);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let s = PhantomSpec::default();
        let a = generate_phantom(&s, 60, 1, Modality::T1Native, 3).unwrap();
        let b = generate_phantom(&s, 60, 1, Modality::T1Native, 3).unwrap();
        let c = generate_phantom(&s, 60, 1, Modality::T1Native, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0.grid.values, c.0.grid.values);
    }

    #[test]
    fn perturb_identity_and_dilation() {
        let s = PhantomSpec::default();
        let (_, gt) = generate_phantom(&s, 0, 0, Modality::T1Native, 0).unwrap();
        assert_eq!(perturb_mask(&gt, &ObserverJitter::NONE, 5).unwrap(), gt);
        let dil = ObserverJitter { sd_mm: 0.0, correlation_rad: 1.0, bias_mm: 1.0 };
        let out = perturb_mask(&gt, &dil, 5).unwrap();
        assert!(out.count(LABEL_MYOCARDIUM) > gt.count(LABEL_MYOCARDIUM));
        assert!(out.labels.iter().all(|&l| l <= LABEL_MYOCARDIUM));
        let empty = LabelMask { labels: vec![0; gt.labels.len()], ..gt };
        assert!(matches!(perturb_mask(&empty, &dil, 0), Err(Error::EmptyMyocardium(_))));
    }

    #[test]
    fn default_jitter_dice_range() {
        let s = PhantomSpec::default();
        let (_, gt) = generate_phantom(&s, 0, 0, Modality::T1Native, 0).unwrap();
        for seed in 0..100 {
            let p = perturb_mask(&gt, &ObserverJitter::default(), seed).unwrap();
            let d = dice(&gt, &p, LABEL_MYOCARDIUM).unwrap().value;
            assert!((0.7..=0.97).contains(&d), "seed {seed}: dice {d}");
        }
    }

    #[test]
    fn class_mix_indexing() {
        let m = PhantomSpec::default().class_mix;
        assert_eq!(m.total(), 144);
        assert_eq!(m.diagnosis(51), Some(Diagnosis::Normal));
        assert_eq!(m.diagnosis(52), Some(Diagnosis::Myocarditis));
        assert_eq!(m.diagnosis(143), Some(Diagnosis::Systemic));
        assert_eq!(m.diagnosis(144), None);
    }

    #[test]
    fn spec_validation() {
        let mut s = PhantomSpec::default();
        s.myo_inner_radius_mm = 31.0;
        assert!(matches!(s.validate(), Err(Error::BadSpec(_))));
        let mut s = PhantomSpec::default();
        s.lesion.fraction = 1.5;
        assert!(s.validate().is_err());
        let json = serde_json::to_string(&PhantomSpec::default()).unwrap();
        assert_eq!(serde_json::from_str::<PhantomSpec>(&json).unwrap(), PhantomSpec::default());
    }
}
