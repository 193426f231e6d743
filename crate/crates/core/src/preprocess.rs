//! Resampling, percentile normalization, center cropping and seeded
//! augmentation of maps and their masks.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cohort::{LabelMask, PixelGrid};
use crate::error::{Error, Result};
use crate::features::percentile;
use crate::rng;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub target_spacing_mm: f64,
    pub crop_size_mm: f64,
    pub norm_percentiles: (f64, f64),
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { target_spacing_mm: 1.0, crop_size_mm: 288.0, norm_percentiles: (1.0, 99.0) }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_spacing_mm > 0.0) {
            return Err(Error::BadSpacing(format!("target spacing {}", self.target_spacing_mm)));
        }
        if !(self.crop_size_mm > 0.0) {
            return Err(Error::BadSize(format!("crop size {}", self.crop_size_mm)));
        }
        let (lo, hi) = self.norm_percentiles;
        if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
            return Err(Error::Config(format!("percentiles ({lo}, {hi})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub rotation_deg_range: (f64, f64),
    pub translation_mm_range: (f64, f64),
    pub flip_horizontal: f64,
    pub flip_vertical: f64,
    pub contrast_stretch_range: (f64, f64),
    pub gaussian_noise_sd: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_deg_range: (-15.0, 15.0),
            translation_mm_range: (-10.0, 10.0),
            flip_horizontal: 0.5,
            flip_vertical: 0.5,
            contrast_stretch_range: (0.8, 1.2),
            gaussian_noise_sd: 0.02,
        }
    }
}

impl AugmentConfig {
    /// A configuration under which `augment` is the identity.
    pub fn identity() -> Self {
        Self {
            rotation_deg_range: (0.0, 0.0),
            translation_mm_range: (0.0, 0.0),
            flip_horizontal: 0.0,
            flip_vertical: 0.0,
            contrast_stretch_range: (1.0, 1.0),
            gaussian_noise_sd: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if !ordered(self.rotation_deg_range)
            || !ordered(self.translation_mm_range)
            || !ordered(self.contrast_stretch_range)
        {
            return Err(Error::Config("augmentation ranges must be ordered".into()));
        }
        for p in [self.flip_horizontal, self.flip_vertical] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("flip probability {p}")));
            }
        }
        if !(self.gaussian_noise_sd >= 0.0) {
            return Err(Error::Config(format!("noise sd {}", self.gaussian_noise_sd)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

/// Output size and source coordinate for each output index along one axis.
/// Pixel centers are aligned (`src = (i + 0.5)·dst/src_spacing − 0.5`) and
/// clamped to the source border.
fn axis_map(n: usize, spacing: f64, target: f64) -> Vec<f64> {
    let extent = n as f64 * spacing;
    let m = ((extent / target).round() as usize).max(1);
    let max = (n - 1) as f64;
    (0..m)
        .map(|i| (((i as f64 + 0.5) * target / spacing) - 0.5).clamp(0.0, max))
        .collect()
}

#[inline]
fn lerp<T: Real>(a: T, b: T, t: T) -> T {
    // clamped so interpolation never leaves [min(a,b), max(a,b)]
    let v = a + t * (b - a);
    v.max(a.min(b)).min(a.max(b))
}

fn bilinear<T: Real>(g: &PixelGrid<T>, y: f64, x: f64) -> T {
    let r0 = y.floor() as usize;
    let c0 = x.floor() as usize;
    let r1 = (r0 + 1).min(g.rows - 1);
    let c1 = (c0 + 1).min(g.cols - 1);
    let fy = T::of(y - r0 as f64);
    let fx = T::of(x - c0 as f64);
    let top = lerp(g.get(r0, c0), g.get(r0, c1), fx);
    let bottom = lerp(g.get(r1, c0), g.get(r1, c1), fx);
    lerp(top, bottom, fy)
}

#[inline]
fn nearest_index(x: f64, n: usize) -> usize {
    ((x + 0.5).floor() as usize).min(n - 1)
}

fn check_target(target: f64) -> Result<()> {
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::BadSpacing(format!("target spacing {target}")));
    }
    Ok(())
}

/// Resamples a map to isotropic `target` spacing.
pub fn resample<T: Real>(grid: &PixelGrid<T>, target: f64, kind: Interpolation) -> Result<PixelGrid<T>> {
    check_target(target)?;
    let ys = axis_map(grid.rows, grid.spacing_mm[0], target);
    let xs = axis_map(grid.cols, grid.spacing_mm[1], target);
    let mut values = Vec::with_capacity(ys.len() * xs.len());
    for &y in &ys {
        for &x in &xs {
            values.push(match kind {
                Interpolation::Bilinear => bilinear(grid, y, x),
                Interpolation::Nearest => {
                    grid.get(nearest_index(y, grid.rows), nearest_index(x, grid.cols))
                }
            });
        }
    }
    Ok(PixelGrid { rows: ys.len(), cols: xs.len(), spacing_mm: [target, target], values })
}

/// Nearest-neighbour resampling of a label mask.
pub fn resample_mask(mask: &LabelMask, target: f64) -> Result<LabelMask> {
    check_target(target)?;
    let ys = axis_map(mask.rows, mask.spacing_mm[0], target);
    let xs = axis_map(mask.cols, mask.spacing_mm[1], target);
    let mut labels = Vec::with_capacity(ys.len() * xs.len());
    for &y in &ys {
        for &x in &xs {
            labels.push(mask.get(nearest_index(y, mask.rows), nearest_index(x, mask.cols)));
        }
    }
    Ok(LabelMask {
        source: mask.source.clone(),
        rows: ys.len(),
        cols: xs.len(),
        spacing_mm: [target, target],
        labels,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized<T> {
    pub grid: PixelGrid<T>,
    pub low: T,
    pub high: T,
    /// Set when the percentile window is narrower than 1e-9; the output is
    /// then all zeros.
    pub degenerate: bool,
}

/// Maps values to `clamp((v − P_low)/(P_high − P_low), 0, 1)`.
pub fn normalize_percentile<T: Real>(grid: &PixelGrid<T>, p_low: f64, p_high: f64) -> Result<Normalized<T>> {
    let low = percentile(&grid.values, p_low)?;
    let high = percentile(&grid.values, p_high)?;
    let width = high - low;
    let mut out = grid.clone();
    let degenerate = width.f64() < 1e-9;
    if degenerate {
        out.values.iter_mut().for_each(|v| *v = T::zero());
    } else {
        out.values
            .iter_mut()
            .for_each(|v| *v = ((*v - low) / width).max(T::zero()).min(T::one()));
    }
    Ok(Normalized { grid: out, low, high, degenerate })
}

fn crop_window(n: usize, spacing: f64, crop_mm: f64) -> (usize, isize) {
    let m = ((crop_mm / spacing).round() as usize).max(1);
    let start = (n as isize - m as isize).div_euclid(2);
    (m, start)
}

fn crop_raw<E: Copy>(
    data: &[E],
    rows: usize,
    cols: usize,
    spacing: [f64; 2],
    crop_mm: f64,
    pad: E,
) -> Result<(usize, usize, Vec<E>)> {
    if !(crop_mm > 0.0) || !crop_mm.is_finite() {
        return Err(Error::BadSize(format!("crop size {crop_mm}")));
    }
    if (spacing[0] - spacing[1]).abs() > 1e-9 * spacing[0].max(spacing[1]) {
        return Err(Error::BadSpacing(format!("center crop needs isotropic spacing, got {spacing:?}")));
    }
    let (mr, r0) = crop_window(rows, spacing[0], crop_mm);
    let (mc, c0) = crop_window(cols, spacing[1], crop_mm);
    let mut out = Vec::with_capacity(mr * mc);
    for i in 0..mr as isize {
        let r = r0 + i;
        for j in 0..mc as isize {
            let c = c0 + j;
            if r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols {
                out.push(data[r as usize * cols + c as usize]);
            } else {
                out.push(pad);
            }
        }
    }
    Ok((mr, mc, out))
}

/// Crops (or pads) to a `crop_size_mm` square window around the image center.
pub fn center_crop<T: Real>(grid: &PixelGrid<T>, crop_size_mm: f64, pad_value: T) -> Result<PixelGrid<T>> {
    let (rows, cols, values) =
        crop_raw(&grid.values, grid.rows, grid.cols, grid.spacing_mm, crop_size_mm, pad_value)?;
    Ok(PixelGrid { rows, cols, spacing_mm: grid.spacing_mm, values })
}

/// Mask counterpart of [`center_crop`]; padding is background.
pub fn center_crop_mask(mask: &LabelMask, crop_size_mm: f64) -> Result<LabelMask> {
    let (rows, cols, labels) =
        crop_raw(&mask.labels, mask.rows, mask.cols, mask.spacing_mm, crop_size_mm, 0u8)?;
    Ok(LabelMask { source: mask.source.clone(), rows, cols, spacing_mm: mask.spacing_mm, labels })
}

/// Full chain used for network inputs: resample, normalize, crop.
pub fn preprocess_pair<T: Real>(
    grid: &PixelGrid<T>,
    masks: &[&LabelMask],
    cfg: &PreprocessConfig,
) -> Result<(Normalized<T>, Vec<LabelMask>)> {
    cfg.validate()?;
    let resampled = resample(grid, cfg.target_spacing_mm, Interpolation::Bilinear)?;
    let norm = normalize_percentile(&resampled, cfg.norm_percentiles.0, cfg.norm_percentiles.1)?;
    let cropped = center_crop(&norm.grid, cfg.crop_size_mm, T::zero())?;
    let masks = masks
        .iter()
        .map(|m| center_crop_mask(&resample_mask(m, cfg.target_spacing_mm)?, cfg.crop_size_mm))
        .collect::<Result<Vec<_>>>()?;
    Ok((Normalized { grid: cropped, ..norm }, masks))
}

/// The random draws of one augmentation, in consumption order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub rotation_deg: f64,
    pub translate_row_mm: f64,
    pub translate_col_mm: f64,
    pub flip_h: bool,
    pub flip_v: bool,
    pub contrast_gain: f64,
}

fn uniform(r: &mut rng::Stream, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = r.random();
    lo + u * (hi - lo)
}

fn draw(cfg: &AugmentConfig, r: &mut rng::Stream) -> AugmentDraw {
    let rotation_deg = uniform(r, cfg.rotation_deg_range);
    let translate_row_mm = uniform(r, cfg.translation_mm_range);
    let translate_col_mm = uniform(r, cfg.translation_mm_range);
    let flip_h = r.random::<f64>() < cfg.flip_horizontal;
    let flip_v = r.random::<f64>() < cfg.flip_vertical;
    let contrast_gain = uniform(r, cfg.contrast_stretch_range);
    AugmentDraw { rotation_deg, translate_row_mm, translate_col_mm, flip_h, flip_v, contrast_gain }
}

fn snap(v: f64) -> f64 {
    if v.abs() < 1e-12 {
        0.0
    } else if (v.abs() - 1.0).abs() < 1e-12 {
        v.signum()
    } else {
        v
    }
}

/// Inverse geometric transform: maps an output pixel to its source position.
/// Forward order is rotate about the center, translate, then flip.
struct Geometry {
    rows: usize,
    cols: usize,
    cos: f64,
    sin: f64,
    tr: f64,
    tc: f64,
    flip_h: bool,
    flip_v: bool,
}

impl Geometry {
    fn new(d: &AugmentDraw, rows: usize, cols: usize, spacing: [f64; 2]) -> Self {
        let theta = d.rotation_deg.to_radians();
        Self {
            rows,
            cols,
            cos: snap(theta.cos()),
            sin: snap(theta.sin()),
            tr: d.translate_row_mm / spacing[0],
            tc: d.translate_col_mm / spacing[1],
            flip_h: d.flip_h,
            flip_v: d.flip_v,
        }
    }

    /// Source (row, col), or `None` when it falls outside the image.
    fn source(&self, r: usize, c: usize) -> Option<(f64, f64)> {
        let (mut r, mut c) = (r as f64, c as f64);
        if self.flip_v {
            r = (self.rows - 1) as f64 - r;
        }
        if self.flip_h {
            c = (self.cols - 1) as f64 - c;
        }
        let cy = (self.rows - 1) as f64 / 2.0;
        let cx = (self.cols - 1) as f64 / 2.0;
        let y = r - self.tr - cy;
        let x = c - self.tc - cx;
        let sy = y * self.cos + x * self.sin + cy;
        let sx = -y * self.sin + x * self.cos + cx;
        let inside = |v: f64, n: usize| v >= -0.5 && v <= n as f64 - 0.5;
        (inside(sy, self.rows) && inside(sx, self.cols)).then(|| {
            (sy.clamp(0.0, (self.rows - 1) as f64), sx.clamp(0.0, (self.cols - 1) as f64))
        })
    }
}

/// Applies one seeded augmentation to a normalized map and its mask.
///
/// Draw order: rotation, row translation, column translation, horizontal
/// flip, vertical flip, contrast gain, then one noise value per pixel.
pub fn augment<T: Real>(
    map: &PixelGrid<T>,
    mask: &LabelMask,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<(PixelGrid<T>, LabelMask)> {
    cfg.validate()?;
    if !mask.same_geometry(map) {
        return Err(Error::ShapeMismatch("augment: mask and map differ".into()));
    }
    let mut r = rng::stream(seed);
    let d = draw(cfg, &mut r);
    let geo = Geometry::new(&d, map.rows, map.cols, map.spacing_mm);

    let mut out = map.clone();
    let mut out_mask = mask.clone();
    for row in 0..map.rows {
        for col in 0..map.cols {
            let idx = row * map.cols + col;
            match geo.source(row, col) {
                Some((y, x)) => {
                    out.values[idx] = bilinear(map, y, x);
                    out_mask.labels[idx] =
                        mask.get(nearest_index(y, mask.rows), nearest_index(x, mask.cols));
                }
                None => {
                    out.values[idx] = T::zero();
                    out_mask.labels[idx] = 0;
                }
            }
        }
    }

    if d.contrast_gain != 1.0 {
        let g = T::of(d.contrast_gain);
        let half = T::of(0.5);
        out.values
            .iter_mut()
            .for_each(|v| *v = (g * (*v - half) + half).max(T::zero()).min(T::one()));
    }
    if cfg.gaussian_noise_sd > 0.0 {
        let noise = Normal::new(0.0, cfg.gaussian_noise_sd)
            .map_err(|e| Error::Config(e.to_string()))?;
        out.values.iter_mut().for_each(|v| {
            let n: f64 = noise.sample(&mut r);
            *v = (*v + T::of(n)).max(T::zero()).min(T::one());
        });
    }
    Ok((out, out_mask))
}

/// The draws `augment` would make for `seed`, for logging.
pub fn augment_draws(cfg: &AugmentConfig, seed: u64) -> AugmentDraw {
    draw(cfg, &mut rng::stream(seed))
}

/// Per-item augmentation seed derived from the master seed and the map id.
pub fn augment_seed(master: u64, map_id: &str) -> u64 {
    rng::item_seed(master, map_id)
}
