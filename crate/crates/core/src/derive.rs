//! Rule-based 3D label derivation: body/bone extraction, vessel
//! thresholding and the geometric splits for mediastinum, diaphragm, ribs
//! and aorta. Model-derived organ masks (lobes, vertebrae, heart, ...) are
//! inputs, not computed here.
//!
//! Frame reminder: z points superior, y posterior, x toward patient-left.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::paxray::{self, RibSide};
use crate::data::{compose_hierarchy, DataError, LabelTaxonomy, LabelVolume, Mask3D, Volume3D};
use crate::morph::{
    binary_close, binary_erode, connected_components, largest_component, otsu_threshold,
    remove_small_components, Connectivity, Histogram, MorphError,
};

const HU_MIN: f64 = -1024.0;
const HU_MAX: f64 = 3071.0;
const BONE_HIST_BINS: usize = 256;

#[derive(Debug, Error)]
pub enum DeriveError {
    #[error("no voxel above the body threshold")]
    EmptyBody,
    #[error("reference mask {0:?} is empty")]
    MissingReferenceMask(&'static str),
    #[error("mask is not a single connected component")]
    NotConnected,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

impl DeriveError {
    pub fn code(&self) -> &'static str {
        match self {
            DeriveError::EmptyBody => "derive.EmptyBody",
            DeriveError::MissingReferenceMask(_) => "derive.MissingReferenceMask",
            DeriveError::NotConnected => "derive.NotConnected",
            DeriveError::InvalidConfig(_) => "derive.InvalidConfig",
        }
    }
}

/// Numeric constants of the derivation rules.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DeriveConfig {
    pub body_hu_threshold: f64,
    pub vessel_hu_threshold: f64,
    pub vessel_lung_erosion_voxels: usize,
    pub min_component_voxels: usize,
    pub close_radius: usize,
}

impl Default for DeriveConfig {
    fn default() -> Self {
        Self {
            body_hu_threshold: -500.0,
            vessel_hu_threshold: -500.0,
            vessel_lung_erosion_voxels: 2,
            min_component_voxels: 27,
            close_radius: 1,
        }
    }
}

impl DeriveConfig {
    pub fn validate(&self) -> Result<(), DeriveError> {
        for (name, v) in [
            ("body_hu_threshold", self.body_hu_threshold),
            ("vessel_hu_threshold", self.vessel_hu_threshold),
        ] {
            if !(HU_MIN..=HU_MAX).contains(&v) {
                return Err(DeriveError::InvalidConfig(format!(
                    "{name} {v} outside [{HU_MIN}, {HU_MAX}]"
                )));
            }
        }
        Ok(())
    }
}

/// Threshold, close and keep the largest connected component.
pub fn body_mask(v: &Volume3D, cfg: &DeriveConfig) -> Result<Mask3D, DeriveError> {
    let bits: Vec<bool> = v
        .voxels()
        .iter()
        .map(|&hu| f64::from(hu) > cfg.body_hu_threshold)
        .collect();
    let thresholded = Mask3D::from_bits(v.shape(), bits).expect("shape matches");
    let closed = binary_close(&thresholded, cfg.close_radius);
    largest_component(&closed).map_err(|e| match e {
        MorphError::EmptyMask => DeriveError::EmptyBody,
        other => unreachable!("unexpected morph error: {other}"),
    })
}

/// Slicewise histogram thresholding of body voxels; slices whose histogram
/// cannot be split contribute no bone.
pub fn bone_mask(v: &Volume3D, body: &Mask3D) -> Mask3D {
    assert_eq!(v.shape(), body.shape());
    let [nz, ny, nx] = v.shape();
    let mut out = Mask3D::empty(v.shape());
    for z in 0..nz {
        let mut samples = Vec::new();
        for y in 0..ny {
            for x in 0..nx {
                if body.get(z, y, x) {
                    samples.push(f64::from(v.get(z, y, x)));
                }
            }
        }
        if samples.is_empty() {
            continue;
        }
        let hist = Histogram::from_samples(&samples, BONE_HIST_BINS);
        let Ok(threshold) = otsu_threshold(&hist) else {
            continue;
        };
        for y in 0..ny {
            for x in 0..nx {
                if body.get(z, y, x) && f64::from(v.get(z, y, x)) > threshold {
                    out.set(z, y, x, true);
                }
            }
        }
    }
    out
}

/// Bright structures inside the eroded lung, with small components dropped.
pub fn lung_vessels(v: &Volume3D, lung: &Mask3D, cfg: &DeriveConfig) -> Mask3D {
    assert_eq!(v.shape(), lung.shape());
    let eroded = binary_erode(lung, cfg.vessel_lung_erosion_voxels);
    let bits: Vec<bool> = eroded
        .bits()
        .iter()
        .zip(v.voxels())
        .map(|(&inside, &hu)| inside && f64::from(hu) > cfg.vessel_hu_threshold)
        .collect();
    let candidates = Mask3D::from_bits(v.shape(), bits).expect("shape matches");
    remove_small_components(&candidates, cfg.min_component_voxels)
}

/// Body voxels strictly between the lung halves, per (z, y) line.
pub fn mediastinum_region(left_lung: &Mask3D, right_lung: &Mask3D, body: &Mask3D) -> Mask3D {
    assert_eq!(left_lung.shape(), body.shape());
    assert_eq!(right_lung.shape(), body.shape());
    let [nz, ny, nx] = body.shape();
    let mut out = Mask3D::empty(body.shape());
    for z in 0..nz {
        for y in 0..ny {
            let mut right_max: Option<usize> = None;
            let mut left_min: Option<usize> = None;
            for x in 0..nx {
                if right_lung.get(z, y, x) {
                    right_max = Some(x);
                }
                if left_min.is_none() && left_lung.get(z, y, x) {
                    left_min = Some(x);
                }
            }
            let (Some(r), Some(l)) = (right_max, left_min) else {
                continue;
            };
            for x in (r + 1)..l {
                if body.get(z, y, x) {
                    out.set(z, y, x, true);
                }
            }
        }
    }
    out
}

/// Superior/inferior cut at the inferior face of the reference vertebra.
pub struct MediastinumSplit {
    pub superior: Mask3D,
    pub inferior: Mask3D,
}

pub fn split_mediastinum(med: &Mask3D, t4: &Mask3D) -> Result<MediastinumSplit, DeriveError> {
    assert_eq!(med.shape(), t4.shape());
    let z_cut = t4
        .coords()
        .map(|(z, _, _)| z)
        .min()
        .ok_or(DeriveError::MissingReferenceMask("t4"))?;
    let superior = Mask3D::from_fn(med.shape(), |z, y, x| med.get(z, y, x) && z >= z_cut);
    let inferior = Mask3D::from_fn(med.shape(), |z, y, x| med.get(z, y, x) && z < z_cut);
    Ok(MediastinumSplit { superior, inferior })
}

pub struct InferiorMediastinumSplit {
    pub anterior: Mask3D,
    pub middle: Mask3D,
    pub posterior: Mask3D,
}

/// Slicewise y-banding against the heart extent. Slices without heart take
/// the bounds of the nearest heart-bearing slice (ties toward lower z).
pub fn split_inferior_mediastinum(
    inf_med: &Mask3D,
    heart: &Mask3D,
) -> Result<InferiorMediastinumSplit, DeriveError> {
    assert_eq!(inf_med.shape(), heart.shape());
    let [nz, ny, nx] = inf_med.shape();
    let mut bounds: Vec<Option<(usize, usize)>> = vec![None; nz];
    for (z, y, _) in heart.coords() {
        bounds[z] = Some(match bounds[z] {
            None => (y, y),
            Some((lo, hi)) => (lo.min(y), hi.max(y)),
        });
    }
    let heart_slices: Vec<usize> = (0..nz).filter(|&z| bounds[z].is_some()).collect();
    if heart_slices.is_empty() {
        return Err(DeriveError::MissingReferenceMask("heart"));
    }
    let nearest = |z: usize| -> (usize, usize) {
        let zn = *heart_slices
            .iter()
            .min_by_key(|&&h| (z.abs_diff(h), h))
            .unwrap();
        bounds[zn].unwrap()
    };
    let mut anterior = Mask3D::empty(inf_med.shape());
    let mut middle = Mask3D::empty(inf_med.shape());
    let mut posterior = Mask3D::empty(inf_med.shape());
    for (z, slice_bounds) in bounds.iter().enumerate() {
        let (y_min, y_max) = slice_bounds.unwrap_or_else(|| nearest(z));
        for y in 0..ny {
            for x in 0..nx {
                if !inf_med.get(z, y, x) {
                    continue;
                }
                if y < y_min {
                    anterior.set(z, y, x, true);
                } else if y > y_max {
                    posterior.set(z, y, x, true);
                } else {
                    middle.set(z, y, x, true);
                }
            }
        }
    }
    Ok(InferiorMediastinumSplit {
        anterior,
        middle,
        posterior,
    })
}

pub struct DiaphragmHalves {
    pub left: Mask3D,
    pub right: Mask3D,
}

/// Split at the body-centroid x column (rounded half up); patient-left keeps
/// `x >= cut`. Falls back to the image midline when the body mask is empty.
pub fn subdiaphragm_halves(subdia: &Mask3D, body: &Mask3D) -> DiaphragmHalves {
    assert_eq!(subdia.shape(), body.shape());
    let nx = subdia.shape()[2];
    let x_cut = match body.centroid() {
        Some((_, _, cx)) => (cx + 0.5).floor() as usize,
        None => nx / 2,
    };
    let left = Mask3D::from_fn(subdia.shape(), |z, y, x| subdia.get(z, y, x) && x >= x_cut);
    let right = subdia.minus(&left);
    DiaphragmHalves { left, right }
}

/// Batch-survivable irregularity in the rib inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeriveWarning {
    RibCountMismatch { side: String, count: usize },
}

pub struct RibLabeling {
    /// (side, 1-based index top-down) -> single-rib mask.
    pub ribs: BTreeMap<(RibSide, u8), Mask3D>,
    pub warnings: Vec<DeriveWarning>,
}

/// Assign each 26-connected rib component a side (by centroid x against the
/// spine centroid, ties to the right) and a 1..=12 index top-down by
/// centroid z. Sides with a component count other than 12 keep their z-order
/// numbering, attach a warning, and drop components beyond the 12th.
pub fn label_individual_ribs(ribs: &Mask3D, spine: &Mask3D) -> Result<RibLabeling, DeriveError> {
    assert_eq!(ribs.shape(), spine.shape());
    if ribs.is_empty() {
        return Err(DeriveError::MissingReferenceMask("ribs"));
    }
    let (_, _, spine_cx) = spine
        .centroid()
        .ok_or(DeriveError::MissingReferenceMask("spine"))?;
    let cc = connected_components(ribs, Connectivity::Full);
    let mut per_side: BTreeMap<RibSide, Vec<(f64, u32)>> = BTreeMap::new();
    for id in 1..=cc.count as u32 {
        let comp = cc.component(id);
        let (cz, _, cx) = comp.centroid().expect("component non-empty");
        let side = if cx > spine_cx {
            RibSide::Left
        } else {
            RibSide::Right
        };
        per_side.entry(side).or_default().push((cz, id));
    }
    let mut out = BTreeMap::new();
    let mut warnings = Vec::new();
    for side in [RibSide::Left, RibSide::Right] {
        let mut comps = per_side.remove(&side).unwrap_or_default();
        if comps.len() != 12 {
            warnings.push(DeriveWarning::RibCountMismatch {
                side: match side {
                    RibSide::Left => "left".to_string(),
                    RibSide::Right => "right".to_string(),
                },
                count: comps.len(),
            });
        }
        // top-down: highest centroid z first; ties keep scan-order ids
        comps.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for (rank, (_, id)) in comps.into_iter().enumerate().take(12) {
            out.insert((side, rank as u8 + 1), cc.component(id));
        }
    }
    Ok(RibLabeling {
        ribs: out,
        warnings,
    })
}

pub struct RibParts {
    pub anterior: Mask3D,
    pub posterior: Mask3D,
}

/// Cut a single rib at its lateral extremum: the voxel maximizing
/// |x - spine centroid x| (ties to the most posterior, then the lowest z,
/// then scan order). Voxels with y at or behind the extremum are posterior.
pub fn split_rib_ant_post(rib: &Mask3D, spine: &Mask3D) -> Result<RibParts, DeriveError> {
    assert_eq!(rib.shape(), spine.shape());
    let cc = connected_components(rib, Connectivity::Full);
    if cc.count != 1 {
        return Err(DeriveError::NotConnected);
    }
    let (_, _, spine_cx) = spine
        .centroid()
        .ok_or(DeriveError::MissingReferenceMask("spine"))?;
    // strict-greater replacement keeps the first scan-order voxel on full ties
    let mut best: Option<(f64, usize, std::cmp::Reverse<usize>)> = None;
    for (z, y, x) in rib.coords() {
        let key = ((x as f64 - spine_cx).abs(), y, std::cmp::Reverse(z));
        if best.is_none_or(|b| key.partial_cmp(&b) == Some(std::cmp::Ordering::Greater)) {
            best = Some(key);
        }
    }
    let y_ext = best.expect("rib non-empty").1;
    let posterior = Mask3D::from_fn(rib.shape(), |z, y, x| rib.get(z, y, x) && y >= y_ext);
    let anterior = rib.minus(&posterior);
    Ok(RibParts {
        anterior,
        posterior,
    })
}

pub struct AortaSplit {
    pub ascending: Mask3D,
    pub arch: Mask3D,
    pub descending: Mask3D,
}

/// Slicewise aorta subdivision. With two or more cross-section components
/// the most anterior joins the ascending aorta, the most posterior the
/// descending, and anything between the arch; a single component joins the
/// arch above the heart's superior extent and the descending aorta below.
pub fn split_aorta(aorta: &Mask3D, heart: &Mask3D) -> Result<AortaSplit, DeriveError> {
    assert_eq!(aorta.shape(), heart.shape());
    let heart_z_max = heart
        .coords()
        .map(|(z, _, _)| z)
        .max()
        .ok_or(DeriveError::MissingReferenceMask("heart"))?;
    let [nz, ny, nx] = aorta.shape();
    let mut ascending = Mask3D::empty(aorta.shape());
    let mut arch = Mask3D::empty(aorta.shape());
    let mut descending = Mask3D::empty(aorta.shape());
    for z in 0..nz {
        let slice: Vec<bool> = (0..ny * nx)
            .map(|i| aorta.bits()[z * ny * nx + i])
            .collect();
        let (labels, count) =
            crate::morph::raw_connected_components([1, ny, nx], &slice, Connectivity::Full);
        if count == 0 {
            continue;
        }
        let mut cy = vec![(0f64, 0usize); count + 1];
        for (i, &l) in labels.iter().enumerate() {
            if l > 0 {
                cy[l as usize].0 += (i / nx) as f64;
                cy[l as usize].1 += 1;
            }
        }
        let centroid_y = |id: usize| cy[id].0 / cy[id].1 as f64;
        #[derive(Clone, Copy, PartialEq)]
        enum Dest {
            Ascending,
            Arch,
            Descending,
        }
        let mut dest = vec![Dest::Arch; count + 1];
        if count == 1 {
            dest[1] = if z > heart_z_max {
                Dest::Arch
            } else {
                Dest::Descending
            };
        } else {
            // lexicographic (centroid y, id) keeps ties deterministic and
            // the two extremes distinct
            let by_key = |&a: &usize, &b: &usize| {
                centroid_y(a)
                    .partial_cmp(&centroid_y(b))
                    .unwrap()
                    .then(a.cmp(&b))
            };
            let ids: Vec<usize> = (1..=count).collect();
            let front = *ids.iter().min_by(|a, b| by_key(a, b)).unwrap();
            let back = *ids.iter().max_by(|a, b| by_key(a, b)).unwrap();
            dest[front] = Dest::Ascending;
            dest[back] = Dest::Descending;
        }
        for (i, &l) in labels.iter().enumerate() {
            if l == 0 {
                continue;
            }
            let (y, x) = (i / nx, i % nx);
            match dest[l as usize] {
                Dest::Ascending => ascending.set(z, y, x, true),
                Dest::Arch => arch.set(z, y, x, true),
                Dest::Descending => descending.set(z, y, x, true),
            }
        }
    }
    Ok(AortaSplit {
        ascending,
        arch,
        descending,
    })
}

#[derive(Debug, Error)]
pub enum DeriveAllError {
    #[error(transparent)]
    Derive(#[from] DeriveError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl DeriveAllError {
    pub fn code(&self) -> &'static str {
        match self {
            DeriveAllError::Derive(e) => e.code(),
            DeriveAllError::Data(e) => e.code(),
        }
    }
}

/// Full derivation output: the composed label volume plus the body/bone
/// masks used for projection.
pub struct DeriveOutput {
    pub labels: LabelVolume,
    pub body: Mask3D,
    pub bone: Mask3D,
    pub warnings: Vec<DeriveWarning>,
}

fn union_of(lv: &LabelVolume, ids: &[&str]) -> Option<Mask3D> {
    let mut out: Option<Mask3D> = None;
    for id in ids {
        if let Some(mask) = lv.get(id) {
            out = Some(match out {
                None => mask.clone(),
                Some(acc) => acc.union(mask),
            });
        }
    }
    out
}

/// Run every applicable derivation rule over the input label volume, then
/// union-complete the hierarchy. Rules whose reference inputs are absent are
/// skipped; input masks pass through unchanged.
pub fn derive_all(
    v: &Volume3D,
    inputs: &LabelVolume,
    tax: &LabelTaxonomy,
    cfg: &DeriveConfig,
) -> Result<DeriveOutput, DeriveAllError> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    let body = body_mask(v, cfg)?;
    let bone = bone_mask(v, &body);

    let mut lv = LabelVolume::new(v.shape(), tax.version());
    for (id, mask) in inputs.iter() {
        lv.insert(id, mask.clone())?;
    }
    lv.insert("bones", bone.clone())?;

    let right_lung = union_of(
        inputs,
        &["right_upper_lobe", "right_middle_lobe", "right_lower_lobe"],
    );
    let left_lung = union_of(inputs, &["left_upper_lobe", "left_lower_lobe"]);
    if let Some(right) = &right_lung {
        lv.insert("right_lung", right.clone())?;
        if !right.is_empty() {
            lv.insert("right_lung_vessel", lung_vessels(v, right, cfg))?;
        }
    }
    if let Some(left) = &left_lung {
        lv.insert("left_lung", left.clone())?;
        if !left.is_empty() {
            lv.insert("left_lung_vessel", lung_vessels(v, left, cfg))?;
        }
    }

    if let (Some(left), Some(right)) = (&left_lung, &right_lung) {
        let med = mediastinum_region(left, right, &body);
        if let Some(t4) = inputs.get("t4") {
            if !t4.is_empty() {
                let split = split_mediastinum(&med, t4)?;
                if let Some(heart) = inputs.get("heart") {
                    if !heart.is_empty() {
                        let inf = split_inferior_mediastinum(&split.inferior, heart)?;
                        lv.insert("anterior_mediastinum", inf.anterior)?;
                        lv.insert("middle_mediastinum", inf.middle)?;
                        lv.insert("posterior_mediastinum", inf.posterior)?;
                    }
                }
                lv.insert("superior_mediastinum", split.superior)?;
                lv.insert("inferior_mediastinum", split.inferior)?;
            }
        }
        lv.insert("mediastinum", med)?;
    }

    if let Some(subdia) = inputs.get("sub_diaphragm") {
        if !subdia.is_empty() {
            let halves = subdiaphragm_halves(subdia, &body);
            lv.insert("left_hemidiaphragm", halves.left)?;
            lv.insert("right_hemidiaphragm", halves.right)?;
        }
    }

    if let (Some(ribs), Some(spine)) = (inputs.get("ribs"), inputs.get("spine")) {
        if !ribs.is_empty() && !spine.is_empty() {
            let labeled = label_individual_ribs(ribs, spine)?;
            warnings.extend(labeled.warnings.iter().cloned());
            for index in 1..=12u8 {
                let mut whole: Option<Mask3D> = None;
                let mut post: Option<Mask3D> = None;
                let mut ant: Option<Mask3D> = None;
                for side in [RibSide::Left, RibSide::Right] {
                    let Some(rib) = labeled.ribs.get(&(side, index)) else {
                        continue;
                    };
                    let parts = split_rib_ant_post(rib, spine)?;
                    lv.insert(paxray::rib_id(side, index as usize), rib.clone())?;
                    lv.insert(
                        paxray::rib_segment_id(side, index as usize, true),
                        parts.posterior.clone(),
                    )?;
                    lv.insert(
                        paxray::rib_segment_id(side, index as usize, false),
                        parts.anterior.clone(),
                    )?;
                    let merge = |acc: Option<Mask3D>, m: &Mask3D| match acc {
                        None => Some(m.clone()),
                        Some(a) => Some(a.union(m)),
                    };
                    whole = merge(whole, rib);
                    post = merge(post, &parts.posterior);
                    ant = merge(ant, &parts.anterior);
                }
                if let Some(m) = whole {
                    lv.insert(paxray::rib_union_id(index as usize, None), m)?;
                }
                if let Some(m) = post {
                    lv.insert(paxray::rib_union_id(index as usize, Some(true)), m)?;
                }
                if let Some(m) = ant {
                    lv.insert(paxray::rib_union_id(index as usize, Some(false)), m)?;
                }
            }
        }
    }

    if let (Some(aorta), Some(heart)) = (inputs.get("aorta"), inputs.get("heart")) {
        if !aorta.is_empty() && !heart.is_empty() {
            let split = split_aorta(aorta, heart)?;
            lv.insert("ascending_aorta", split.ascending)?;
            lv.insert("aortic_arch", split.arch)?;
            lv.insert("descending_aorta", split.descending)?;
        }
    }

    let labels = compose_hierarchy(&lv, tax)?;
    Ok(DeriveOutput {
        labels,
        body,
        bone,
        warnings,
    })
}
