//! CT to pseudo-X-ray projection: masked per-ray standardization through a
//! logistic map with optional unsharp sharpening, plus label max-projection
//! with 2D cleanup.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{LabelVolume, Mask3D, Shape3, Volume3D};
use crate::morph::{raw_close, raw_remove_small, Connectivity};

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("shape mismatch: volume {volume:?} vs mask {mask:?}")]
    ShapeMismatch { volume: Shape3, mask: Shape3 },
    #[error("body mask is empty")]
    EmptyBody,
    #[error("pixel value {0} outside [0, 255]")]
    RangeViolation(f64),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("malformed PGM: {0}")]
    MalformedPgm(String),
}

impl ProjectError {
    pub fn code(&self) -> &'static str {
        match self {
            ProjectError::ShapeMismatch { .. } => "project.ShapeMismatch",
            ProjectError::EmptyBody => "project.EmptyBody",
            ProjectError::RangeViolation(_) => "project.RangeViolation",
            ProjectError::IoFailure(_) => "project.IoFailure",
            ProjectError::MalformedPgm(_) => "project.MalformedPgm",
        }
    }
}

/// Reduction axis: frontal collapses y (posterior-anterior rays), lateral
/// collapses x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionAxis {
    Frontal,
    Lateral,
}

impl ProjectionAxis {
    /// Index of the reduced axis in [nz, ny, nx].
    fn reduced(self) -> usize {
        match self {
            ProjectionAxis::Frontal => 1,
            ProjectionAxis::Lateral => 2,
        }
    }

    /// Output shape [h, w] for a volume of the given shape.
    pub fn image_shape(self, shape: Shape3) -> [usize; 2] {
        match self {
            ProjectionAxis::Frontal => [shape[0], shape[2]],
            ProjectionAxis::Lateral => [shape[0], shape[1]],
        }
    }
}

/// Where standardization statistics come from: per projection ray over mask
/// voxels (default), or one mean/std over the full clipped volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StatsScope {
    #[default]
    PerRayMasked,
    GlobalVolume,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionParams {
    pub axis: ProjectionAxis,
    pub hu_clip: [f64; 2],
    pub std_epsilon: f64,
    pub sharpen_amount: f64,
    pub sharpen_sigma: f64,
    pub out_max: f64,
    pub stats_scope: StatsScope,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self {
            axis: ProjectionAxis::Frontal,
            hu_clip: [-1024.0, 3071.0],
            std_epsilon: 1e-6,
            sharpen_amount: 0.5,
            sharpen_sigma: 1.0,
            out_max: 255.0,
            stats_scope: StatsScope::PerRayMasked,
        }
    }
}

/// 2D cleanup applied to projected label masks.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Cleanup2D {
    pub close_radius: usize,
    pub min_component_pixels: usize,
}

/// Projected intensity image, row-major [h, w].
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    shape: [usize; 2],
    pixels: Vec<f64>,
}

impl Image2D {
    pub fn new(shape: [usize; 2], pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), shape[0] * shape[1]);
        Self { shape, pixels }
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.shape[1] + col]
    }
}

/// Projected binary mask, row-major [h, w].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask2D {
    shape: [usize; 2],
    bits: Vec<bool>,
}

impl Mask2D {
    pub fn empty(shape: [usize; 2]) -> Self {
        Self {
            shape,
            bits: vec![false; shape[0] * shape[1]],
        }
    }

    pub fn from_bits(shape: [usize; 2], bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), shape[0] * shape[1]);
        Self { shape, bits }
    }

    pub fn from_fn(shape: [usize; 2], mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(shape[0] * shape[1]);
        for r in 0..shape[0] {
            for c in 0..shape[1] {
                bits.push(f(r, c));
            }
        }
        Self { shape, bits }
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.shape[1] + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.shape[1] + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn union(&self, other: &Mask2D) -> Mask2D {
        debug_assert_eq!(self.shape, other.shape);
        Mask2D {
            shape: self.shape,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a | b)
                .collect(),
        }
    }

    pub fn intersect(&self, other: &Mask2D) -> Mask2D {
        debug_assert_eq!(self.shape, other.shape);
        Mask2D {
            shape: self.shape,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a & b)
                .collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Mask2D) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Set pixels as (row, col) in scan order.
    pub fn coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.shape[1];
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub fn close(&self, radius: usize) -> Mask2D {
        let shape3 = [1, self.shape[0], self.shape[1]];
        Mask2D {
            shape: self.shape,
            bits: raw_close(shape3, &self.bits, radius),
        }
    }

    pub fn remove_small(&self, min_pixels: usize) -> Mask2D {
        let shape3 = [1, self.shape[0], self.shape[1]];
        Mask2D {
            shape: self.shape,
            bits: raw_remove_small(shape3, &self.bits, min_pixels, Connectivity::Full),
        }
    }
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Iterate the start index and stride of every ray along `axis`.
fn rays(shape: Shape3, axis: usize) -> (usize, usize, Vec<usize>) {
    let [nz, ny, nx] = shape;
    let (len, stride) = match axis {
        1 => (ny, nx),
        2 => (nx, 1),
        _ => unreachable!("projection never reduces z"),
    };
    let mut bases = Vec::new();
    match axis {
        1 => {
            for z in 0..nz {
                for x in 0..nx {
                    bases.push(z * ny * nx + x);
                }
            }
        }
        _ => {
            for z in 0..nz {
                for y in 0..ny {
                    bases.push((z * ny + y) * nx);
                }
            }
        }
    }
    (len, stride, bases)
}

/// Steps 1-5 of the projection pipeline for one mask: clip, per-ray
/// standardization over mask voxels (std guarded by epsilon, empty rays use
/// mean 0 / std 1), logistic map, slicewise unsharp sharpening, multiply by
/// the mask.
pub fn sigmoid_field(v: &Volume3D, mask: &Mask3D, p: &ProjectionParams) -> Vec<f64> {
    let shape = v.shape();
    let axis = p.axis.reduced();
    let [lo, hi] = p.hu_clip;
    let clipped: Vec<f64> = v
        .voxels()
        .iter()
        .map(|&hu| f64::from(hu).clamp(lo, hi))
        .collect();
    let mut field = vec![0.0f64; clipped.len()];
    match p.stats_scope {
        StatsScope::PerRayMasked => {
            let (len, stride, bases) = rays(shape, axis);
            for base in bases {
                let mut n = 0usize;
                let mut sum = 0.0;
                for k in 0..len {
                    let i = base + k * stride;
                    if mask.bits()[i] {
                        n += 1;
                        sum += clipped[i];
                    }
                }
                let (mean, std) = if n == 0 {
                    (0.0, 1.0)
                } else {
                    let mean = sum / n as f64;
                    let mut var = 0.0;
                    for k in 0..len {
                        let i = base + k * stride;
                        if mask.bits()[i] {
                            let d = clipped[i] - mean;
                            var += d * d;
                        }
                    }
                    (mean, (var / n as f64).sqrt().max(p.std_epsilon))
                };
                for k in 0..len {
                    let i = base + k * stride;
                    field[i] = sigmoid((clipped[i] - mean) / std);
                }
            }
        }
        StatsScope::GlobalVolume => {
            let n = clipped.len() as f64;
            let mean = clipped.iter().sum::<f64>() / n;
            let var = clipped.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
            let std = var.sqrt().max(p.std_epsilon);
            for (f, &c) in field.iter_mut().zip(&clipped) {
                *f = sigmoid((c - mean) / std);
            }
        }
    }
    if p.sharpen_amount > 0.0 {
        sharpen_slices(shape, axis, &mut field, p.sharpen_amount, p.sharpen_sigma);
    }
    for (f, &m) in field.iter_mut().zip(mask.bits()) {
        if !m {
            *f = 0.0;
        }
    }
    field
}

/// Unsharp masking applied to each slice perpendicular to the reduction
/// axis: u + amount * (u - gaussian(u, sigma)). The truncated kernel is
/// renormalized at the borders.
fn sharpen_slices(shape: Shape3, axis: usize, field: &mut [f64], amount: f64, sigma: f64) {
    let [nz, ny, nx] = shape;
    let kernel = gaussian_kernel(sigma);
    // slice layout: perpendicular to y -> (z, x) planes; perpendicular to
    // x -> (z, y) planes
    let (n_slices, rows, cols) = match axis {
        1 => (ny, nz, nx),
        _ => (nx, nz, ny),
    };
    let fetch_index = |s: usize, r: usize, c: usize| -> usize {
        match axis {
            1 => (r * ny + s) * nx + c,
            _ => (r * ny + c) * nx + s,
        }
    };
    for s in 0..n_slices {
        let mut plane = vec![0.0f64; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                plane[r * cols + c] = field[fetch_index(s, r, c)];
            }
        }
        let blurred = gaussian_blur_2d(&plane, rows, cols, &kernel);
        for r in 0..rows {
            for c in 0..cols {
                let u = plane[r * cols + c];
                let sharpened = u + amount * (u - blurred[r * cols + c]);
                field[fetch_index(s, r, c)] = sharpened;
            }
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    (0..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Separable blur; the half-kernel holds weights for offsets 0..=radius.
fn gaussian_blur_2d(plane: &[f64], rows: usize, cols: usize, half_kernel: &[f64]) -> Vec<f64> {
    let radius = half_kernel.len() - 1;
    let weight = |k: isize| half_kernel[k.unsigned_abs()];
    let mut tmp = vec![0.0f64; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for k in -(radius as isize)..=(radius as isize) {
                let cc = c as isize + k;
                if cc < 0 || cc >= cols as isize {
                    continue;
                }
                let w = weight(k);
                acc += w * plane[r * cols + cc as usize];
                wsum += w;
            }
            tmp[r * cols + c] = acc / wsum;
        }
    }
    let mut out = vec![0.0f64; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for k in -(radius as isize)..=(radius as isize) {
                let rr = r as isize + k;
                if rr < 0 || rr >= rows as isize {
                    continue;
                }
                let w = weight(k);
                acc += w * tmp[rr as usize * cols + c];
                wsum += w;
            }
            out[r * cols + c] = acc / wsum;
        }
    }
    out
}

/// Full intensity projection: body and bone sigmoid fields are summed,
/// min-max scaled over the 3D grid (a constant sum maps to zeros), rescaled
/// to [0, out_max] and averaged along the reduction axis.
pub fn intensity_project(
    v: &Volume3D,
    body: &Mask3D,
    bone: &Mask3D,
    p: &ProjectionParams,
) -> Result<Image2D, ProjectError> {
    for mask in [body, bone] {
        if mask.shape() != v.shape() {
            return Err(ProjectError::ShapeMismatch {
                volume: v.shape(),
                mask: mask.shape(),
            });
        }
    }
    if body.is_empty() {
        return Err(ProjectError::EmptyBody);
    }
    let body_field = sigmoid_field(v, body, p);
    let bone_field = sigmoid_field(v, bone, p);
    let mut sum: Vec<f64> = body_field
        .iter()
        .zip(&bone_field)
        .map(|(&a, &b)| a + b)
        .collect();
    let min = sum.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = sum.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        sum.iter_mut().for_each(|s| *s = 0.0);
    } else {
        let span = max - min;
        sum.iter_mut()
            .for_each(|s| *s = (*s - min) / span * p.out_max);
    }
    let [nz, ny, nx] = v.shape();
    let [h, w] = p.axis.image_shape(v.shape());
    let mut pixels = vec![0.0f64; h * w];
    match p.axis {
        ProjectionAxis::Frontal => {
            for z in 0..nz {
                for x in 0..nx {
                    let mut acc = 0.0;
                    for y in 0..ny {
                        acc += sum[(z * ny + y) * nx + x];
                    }
                    pixels[z * w + x] = acc / ny as f64;
                }
            }
        }
        ProjectionAxis::Lateral => {
            for z in 0..nz {
                for y in 0..ny {
                    let mut acc = 0.0;
                    for x in 0..nx {
                        acc += sum[(z * ny + y) * nx + x];
                    }
                    pixels[z * w + y] = acc / nx as f64;
                }
            }
        }
    }
    Ok(Image2D::new([h, w], pixels))
}

/// Max-project one mask along the reduction axis.
pub fn project_mask(mask: &Mask3D, axis: ProjectionAxis) -> Mask2D {
    let mut out = Mask2D::empty(axis.image_shape(mask.shape()));
    for (z, y, x) in mask.coords() {
        match axis {
            ProjectionAxis::Frontal => out.set(z, x, true),
            ProjectionAxis::Lateral => out.set(z, y, true),
        }
    }
    out
}

/// Keep only the labels applicable to the given view.
pub fn filter_labels_for_view(
    lv: &LabelVolume,
    tax: &crate::data::LabelTaxonomy,
    view: ProjectionAxis,
) -> Result<LabelVolume, crate::data::DataError> {
    let mut out = LabelVolume::new(lv.shape(), lv.taxonomy_ref());
    for (id, mask) in lv.iter() {
        let node = tax
            .node(id)
            .ok_or_else(|| crate::data::DataError::UnknownLabelId(id.to_string()))?;
        let applicable = match view {
            ProjectionAxis::Frontal => node.view_applicability.includes_frontal(),
            ProjectionAxis::Lateral => node.view_applicability.includes_lateral(),
        };
        if applicable {
            out.insert(id, mask.clone())?;
        }
    }
    Ok(out)
}

/// Max-project every label, then apply 2D closing and small-component
/// removal per the cleanup config.
pub fn project_labels(
    lv: &LabelVolume,
    p: &ProjectionParams,
    cleanup: Cleanup2D,
) -> BTreeMap<String, Mask2D> {
    let entries: Vec<(&str, &Mask3D)> = lv.iter().collect();
    entries
        .par_iter()
        .map(|(id, mask)| {
            let projected = project_mask(mask, p.axis)
                .close(cleanup.close_radius)
                .remove_small(cleanup.min_component_pixels);
            (id.to_string(), projected)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Write a binary PGM (P5, maxval 255); pixels must be in [0, 255] and are
/// rounded half up.
pub fn write_image(img: &Image2D, path: impl AsRef<Path>) -> Result<(), ProjectError> {
    for &p in img.pixels() {
        if !(0.0..=255.0).contains(&p) {
            return Err(ProjectError::RangeViolation(p));
        }
    }
    let [h, w] = img.shape();
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(img.pixels().iter().map(|&p| (p + 0.5).floor() as u8));
    if let Some(dir) = path.as_ref().parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Read a binary PGM written by [`write_image`].
pub fn read_image(path: impl AsRef<Path>) -> Result<Image2D, ProjectError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let header_end = bytes
        .windows(1)
        .enumerate()
        .filter(|(_, b)| b[0] == b'\n')
        .map(|(i, _)| i)
        .nth(2)
        .ok_or_else(|| ProjectError::MalformedPgm("missing header lines".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| ProjectError::MalformedPgm("non-utf8 header".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some("P5") {
        return Err(ProjectError::MalformedPgm("not a P5 file".into()));
    }
    let dims = lines
        .next()
        .ok_or_else(|| ProjectError::MalformedPgm("missing dimensions".into()))?;
    let mut it = dims.split_whitespace();
    let w: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| ProjectError::MalformedPgm("bad width".into()))?;
    let h: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| ProjectError::MalformedPgm("bad height".into()))?;
    if lines.next() != Some("255") {
        return Err(ProjectError::MalformedPgm("maxval must be 255".into()));
    }
    let data = &bytes[header_end + 1..];
    if data.len() != w * h {
        return Err(ProjectError::MalformedPgm(format!(
            "expected {} payload bytes, got {}",
            w * h,
            data.len()
        )));
    }
    Ok(Image2D::new(
        [h, w],
        data.iter().map(|&b| f64::from(b)).collect(),
    ))
}
