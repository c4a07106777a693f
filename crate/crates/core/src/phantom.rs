//! Procedural CT phantom: a deterministic, seedable thorax stand-in used
//! for end-to-end runs and tests without patient data.
//!
//! The phantom paints an ellipsoidal body into an air background, two lung
//! ellipsoids split into lobes, a vertical spine column with per-vertebra
//! gaps, twelve rib arcs per side, heart, candy-cane aorta, esophagus,
//! trachea, and a sub-diaphragm slab. Alongside the volume it emits the
//! label volume an external segmentation stack would normally provide, plus
//! a small grounding demo kit (taxonomy, lexicon, embeddings, reports,
//! annotations, proposals).

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::paxray::{self, RibSide};
use crate::data::{
    save_label_volume, save_taxonomy, save_volume, DataError, LabelVolume, Mask3D, Volume3D,
    VolumeDtype,
};
use crate::eval::{save_annotations, save_proposals, Annotation, ProposalMap, ScoredBox};
use crate::ground::{mask_to_bbox, BBox};
use crate::language::{
    save_embeddings, save_lexicon, tokenize, Category, EmbeddingTable, LanguageError, Lexicon,
    Report,
};
use crate::project::{project_mask, ProjectionAxis};

pub const MIN_SIZE: usize = 32;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Language(#[from] LanguageError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

impl PhantomError {
    pub fn code(&self) -> &'static str {
        match self {
            PhantomError::Data(e) => e.code(),
            PhantomError::Language(e) => e.code(),
            PhantomError::Eval(e) => e.code(),
        }
    }
}

pub struct Phantom {
    pub volume: Volume3D,
    /// Model-derived input labels the derivation rules consume.
    pub labels: LabelVolume,
    // masks kept for annotation boxes
    left_rib6_posterior: Mask3D,
    descending_tube: Mask3D,
}

struct Painter {
    voxels: Vec<f32>,
}

impl Painter {
    fn new(n: usize) -> Self {
        Self {
            voxels: vec![-1000.0; n * n * n],
        }
    }

    fn paint(&mut self, mask: &Mask3D, hu: f32) {
        for (i, &b) in mask.bits().iter().enumerate() {
            if b {
                self.voxels[i] = hu;
            }
        }
    }
}

fn ellipsoid(n: usize, c: (f64, f64, f64), r: (f64, f64, f64)) -> Mask3D {
    Mask3D::from_fn([n, n, n], |z, y, x| {
        let dz = (z as f64 - c.0) / r.0;
        let dy = (y as f64 - c.1) / r.1;
        let dx = (x as f64 - c.2) / r.2;
        dz * dz + dy * dy + dx * dx <= 1.0
    })
}

/// Vertical tube along z with circular cross-section.
fn tube_z(n: usize, cy: f64, cx: f64, radius: f64, z_lo: usize, z_hi: usize) -> Mask3D {
    Mask3D::from_fn([n, n, n], |z, y, x| {
        if z < z_lo || z > z_hi {
            return false;
        }
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        dy * dy + dx * dx <= radius * radius
    })
}

/// Paint a polyline sample set with a unit in-plane brush.
fn brush_points(n: usize, points: &[(usize, f64, f64)]) -> Mask3D {
    let mut mask = Mask3D::empty([n, n, n]);
    for &(z, py, px) in points {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let y = py.round() as i64 + dy;
                let x = px.round() as i64 + dx;
                if y < 0 || x < 0 || y >= n as i64 || x >= n as i64 {
                    continue;
                }
                let (fy, fx) = (y as f64, x as f64);
                if (fy - py).powi(2) + (fx - px).powi(2) <= 1.44 {
                    mask.set(z, y as usize, x as usize, true);
                }
            }
        }
    }
    mask
}

/// Build the phantom for a seed and cube side; `size` must be at least
/// [`MIN_SIZE`].
pub fn generate(seed: u64, size: usize) -> Phantom {
    assert!(size >= MIN_SIZE, "phantom size must be >= {MIN_SIZE}");
    let n = size;
    let f = |frac: f64| frac * n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = || rng.gen_range(-0.01..0.01) * n as f64;

    let center = f(0.5);
    let body = ellipsoid(n, (center, center, center), (f(0.70), f(0.30), f(0.38)));

    // lungs: right at low x, left at high x
    let lung_cz = f(0.58) + jitter();
    let lung_cy = center + jitter();
    let lung_r = (f(0.22), f(0.20), f(0.10));
    let right_lung = ellipsoid(n, (lung_cz, lung_cy, center - f(0.17)), lung_r);
    let left_lung = ellipsoid(n, (lung_cz, lung_cy, center + f(0.17)), lung_r);

    let above = |m: &Mask3D, z_cut: f64| {
        Mask3D::from_fn([n, n, n], |z, y, x| m.get(z, y, x) && (z as f64) >= z_cut)
    };
    let below = |m: &Mask3D, z_cut: f64| {
        Mask3D::from_fn([n, n, n], |z, y, x| m.get(z, y, x) && (z as f64) < z_cut)
    };
    let band = |m: &Mask3D, lo: f64, hi: f64| {
        Mask3D::from_fn([n, n, n], |z, y, x| {
            m.get(z, y, x) && (z as f64) >= lo && (z as f64) < hi
        })
    };
    let right_upper = above(&right_lung, lung_cz + f(0.08));
    let right_middle = band(&right_lung, lung_cz - f(0.05), lung_cz + f(0.08));
    let right_lower = below(&right_lung, lung_cz - f(0.05));
    let left_upper = above(&left_lung, lung_cz);
    let left_lower = below(&left_lung, lung_cz);

    let vessel_r = f(0.035);
    let vessel_lo = (lung_cz - f(0.15)) as usize;
    let vessel_hi = (lung_cz + f(0.15)) as usize;
    let right_vessel_tube = tube_z(n, lung_cy, center - f(0.17), vessel_r, vessel_lo, vessel_hi);
    let left_vessel_tube = tube_z(n, lung_cy, center + f(0.17), vessel_r, vessel_lo, vessel_hi);

    let heart = ellipsoid(
        n,
        (f(0.50) + jitter(), f(0.48), center),
        (f(0.13), f(0.12), f(0.09)),
    );

    // spine column split into 12 vertebrae with one-voxel gaps
    let spine_half = f(0.05);
    let spine_cy = f(0.68);
    let spine_top = f(0.88) as usize;
    let spine_bottom = f(0.12) as usize;
    let seg = (spine_top - spine_bottom) / 12;
    let mut spine = Mask3D::empty([n, n, n]);
    let mut vertebrae: Vec<(String, Mask3D)> = Vec::new();
    for i in 0..12usize {
        let hi = spine_top - i * seg;
        let lo = hi + 1 - seg; // leave a gap voxel at the segment top
        let v = Mask3D::from_fn([n, n, n], |z, y, x| {
            z >= lo
                && z < hi
                && (y as f64 - spine_cy).abs() <= spine_half
                && (x as f64 - center).abs() <= spine_half
        });
        spine.union_in_place(&v);
        vertebrae.push((format!("t{}", i + 1), v));
    }

    // rib arcs, one pair per vertebra, lateral apex at 90 degrees
    let rib_rx = f(0.30);
    let rib_ry = f(0.24) + jitter();
    let mut ribs = Mask3D::empty([n, n, n]);
    let mut rib_masks: Vec<(RibSide, u8, Mask3D)> = Vec::new();
    for (i, (_, vert)) in vertebrae.iter().enumerate() {
        let (vz, _, _) = vert.centroid().expect("vertebra painted");
        let z = vz.round() as usize;
        for side in [RibSide::Left, RibSide::Right] {
            let sgn = match side {
                RibSide::Left => 1.0,
                RibSide::Right => -1.0,
            };
            let points: Vec<(usize, f64, f64)> = (0..=360)
                .map(|step| {
                    let theta = (8.0 + step as f64 * (150.0 - 8.0) / 360.0).to_radians();
                    (
                        z,
                        f(0.5) + rib_ry * theta.cos(),
                        center + sgn * rib_rx * theta.sin(),
                    )
                })
                .collect();
            let arc = brush_points(n, &points);
            ribs.union_in_place(&arc);
            rib_masks.push((side, i as u8 + 1, arc));
        }
    }

    // candy-cane aorta: two vertical tubes joined by a bend above the heart
    let aorta_r = f(0.025);
    let asc_c = (f(0.40), center - f(0.03));
    let desc_c = (f(0.60), center + f(0.03));
    let tube_lo = f(0.30) as usize;
    let tube_hi = f(0.72) as usize;
    let bend_z = f(0.74) as usize;
    let ascending = tube_z(n, asc_c.0, asc_c.1, aorta_r, tube_lo, tube_hi);
    let descending = tube_z(n, desc_c.0, desc_c.1, aorta_r, tube_lo, tube_hi);
    let bend_points: Vec<(usize, f64, f64)> = (0..=120)
        .map(|step| {
            let t = step as f64 / 120.0;
            (
                bend_z,
                asc_c.0 + t * (desc_c.0 - asc_c.0),
                asc_c.1 + t * (desc_c.1 - asc_c.1),
            )
        })
        .collect();
    let bend = brush_points(n, &bend_points);
    let aorta = ascending.union(&descending).union(&bend);

    let esophagus = tube_z(
        n,
        f(0.56),
        center - f(0.02) + jitter(),
        f(0.015).max(1.0),
        f(0.30) as usize,
        f(0.80) as usize,
    );
    let trachea = tube_z(
        n,
        f(0.50),
        center,
        f(0.02).max(1.0),
        f(0.60) as usize,
        f(0.92) as usize,
    );

    let sub_diaphragm = below(&body, f(0.30));

    let mut painter = Painter::new(n);
    painter.paint(&body, 0.0);
    painter.paint(&right_lung, -850.0);
    painter.paint(&left_lung, -850.0);
    painter.paint(&right_vessel_tube, 40.0);
    painter.paint(&left_vessel_tube, 40.0);
    painter.paint(&heart, 40.0);
    painter.paint(&aorta, 60.0);
    painter.paint(&esophagus, 30.0);
    painter.paint(&spine, 700.0);
    painter.paint(&ribs, 500.0);
    painter.paint(&trachea, -1000.0);

    let volume = Volume3D::new([n, n, n], [1.0, 1.0, 1.0], painter.voxels)
        .expect("phantom voxels are finite");

    let mut labels = LabelVolume::new([n, n, n], paxray::VERSION);
    let mut put = |id: &str, m: Mask3D| labels.insert(id, m).expect("phantom shapes agree");
    put("right_upper_lobe", right_upper);
    put("right_middle_lobe", right_middle);
    put("right_lower_lobe", right_lower);
    put("left_upper_lobe", left_upper);
    put("left_lower_lobe", left_lower);
    put("heart", heart);
    put("aorta", aorta);
    put("esophagus", esophagus);
    put("airways", trachea);
    put("spine", spine);
    for (id, v) in vertebrae {
        put(&id, v);
    }
    put("ribs", ribs);
    put("sub_diaphragm", sub_diaphragm);

    // annotation targets: posterior half of the left 6th rib (behind the
    // lateral apex row) and the descending tube of the aorta
    let left_rib6 = rib_masks
        .iter()
        .find(|(side, idx, _)| *side == RibSide::Left && *idx == 6)
        .map(|(_, _, m)| m.clone())
        .expect("12 ribs per side");
    let apex_y = f(0.5);
    let left_rib6_posterior = Mask3D::from_fn([n, n, n], |z, y, x| {
        left_rib6.get(z, y, x) && (y as f64) >= apex_y
    });

    Phantom {
        volume,
        labels,
        left_rib6_posterior,
        descending_tube: descending,
    }
}

/// Default word-category lexicon covering the taxonomy label texts plus a
/// handful of report observations.
pub fn demo_lexicon() -> Lexicon {
    let mut lex = Lexicon::new();
    let anatomy = [
        "lung",
        "lobe",
        "vessel",
        "mediastinum",
        "heart",
        "airways",
        "esophagus",
        "aorta",
        "arch",
        "rib",
        "ribs",
        "spine",
        "sacrum",
        "cocygis",
        "bones",
        "diaphragm",
        "hemidiaphragm",
        "cardiac silhouette",
    ];
    for a in anatomy {
        lex.insert(a, Category::A);
    }
    for i in 1..=7 {
        lex.insert(&format!("c{i}"), Category::A);
    }
    for i in 1..=12 {
        lex.insert(&format!("t{i}"), Category::A);
    }
    for i in 1..=5 {
        lex.insert(&format!("l{i}"), Category::A);
    }
    let modifiers = [
        "left",
        "right",
        "upper",
        "middle",
        "lower",
        "superior",
        "inferior",
        "anterior",
        "posterior",
        "ascending",
        "descending",
        "aortic",
        "cervical",
        "thoracic",
        "lumbar",
        "sub",
        "1st",
        "2nd",
        "3rd",
        "4th",
        "5th",
        "6th",
        "7th",
        "8th",
        "9th",
        "10th",
        "11th",
        "12th",
    ];
    for m in modifiers {
        lex.insert(m, Category::AM);
    }
    let observations = [
        "opacity",
        "pneumothorax",
        "effusion",
        "consolidation",
        "nodule",
        "fracture",
        "cardiomegaly",
        "enlarged",
    ];
    for o in observations {
        lex.insert(o, Category::O);
    }
    for om in [
        "above",
        "below",
        "near",
        "mild",
        "small",
        "large",
        "increased",
    ] {
        lex.insert(om, Category::OM);
    }
    lex
}

/// Seeded random unit embeddings for every token the demo kit mentions.
pub fn demo_embeddings(seed: u64) -> EmbeddingTable {
    const DIM: usize = 24;
    let mut tokens: BTreeSet<String> = BTreeSet::new();
    for node in paxray::taxonomy().nodes() {
        tokens.extend(tokenize(&node.display_name));
    }
    for (surface, _) in demo_lexicon().iter_sorted() {
        tokens.extend(tokenize(surface));
    }
    for report in demo_reports() {
        tokens.extend(tokenize(&report.findings));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let mut table = EmbeddingTable::new(DIM);
    for token in tokens {
        let mut v: Vec<f64> = (0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        table.insert(token, v);
    }
    table
}

/// Two fixed demo reports exercising anatomy matches, a whole-image
/// fallback and a filtered-out sentence.
pub fn demo_reports() -> Vec<Report> {
    vec![
        Report {
            id: "r001".into(),
            findings: "Small opacity overlying the left 6th rib posterior. \
                       No pneumothorax. Heart size is normal."
                .into(),
        },
        Report {
            id: "r002".into(),
            findings: "Consolidation in the right lower lobe; effusion near the \
                       descending aorta.\nThe heart is enlarged."
                .into(),
        },
    ]
}

fn frontal_box(mask: &Mask3D) -> BBox {
    mask_to_bbox(&project_mask(mask, ProjectionAxis::Frontal)).expect("mask non-empty")
}

fn lateral_box(mask: &Mask3D) -> BBox {
    mask_to_bbox(&project_mask(mask, ProjectionAxis::Lateral)).expect("mask non-empty")
}

/// Ground-truth boxes for the demo reports, derived from the phantom's own
/// geometry.
pub fn demo_annotations(phantom: &Phantom) -> Vec<Annotation> {
    let n = phantom.volume.shape()[0] as u32;
    let size = [n, n];
    vec![
        Annotation {
            report_id: "r001".into(),
            view: ProjectionAxis::Frontal,
            phrase: "Small opacity overlying the left 6th rib posterior".into(),
            gt_box: frontal_box(&phantom.left_rib6_posterior),
            image_size: size,
        },
        Annotation {
            report_id: "r001".into(),
            view: ProjectionAxis::Frontal,
            phrase: "No pneumothorax".into(),
            gt_box: BBox::new(0, 0, n, n).expect("full image"),
            image_size: size,
        },
        Annotation {
            report_id: "r002".into(),
            view: ProjectionAxis::Frontal,
            phrase: "Consolidation in the right lower lobe".into(),
            gt_box: frontal_box(phantom.labels.get("right_lower_lobe").expect("lobe")),
            image_size: size,
        },
        Annotation {
            report_id: "r002".into(),
            view: ProjectionAxis::Frontal,
            phrase: "effusion near the descending aorta".into(),
            gt_box: frontal_box(&phantom.descending_tube),
            image_size: size,
        },
        Annotation {
            report_id: "r002".into(),
            view: ProjectionAxis::Lateral,
            phrase: "The heart is enlarged".into(),
            gt_box: lateral_box(phantom.labels.get("heart").expect("heart")),
            image_size: size,
        },
    ]
}

/// Per-image demo proposals: the ground truth box, a shifted copy, and a
/// centered quarter-image box.
pub fn demo_proposals(annotations: &[Annotation]) -> ProposalMap {
    let mut out = ProposalMap::new();
    for gt in annotations {
        let [w, h] = gt.image_size;
        let entry = out.entry(gt.image_id()).or_default();
        entry.push(ScoredBox {
            bbox: gt.gt_box,
            score: 0.9,
        });
        let shifted = BBox::new(
            (gt.gt_box.x0 + 2).min(w - 1),
            (gt.gt_box.y0 + 2).min(h - 1),
            (gt.gt_box.x1 + 2).min(w),
            (gt.gt_box.y1 + 2).min(h),
        );
        if let Some(b) = shifted {
            entry.push(ScoredBox {
                bbox: b,
                score: 0.5,
            });
        }
        entry.push(ScoredBox {
            bbox: BBox::new(w / 4, h / 4, 3 * w / 4, 3 * h / 4).expect("quarter box"),
            score: 0.1,
        });
    }
    out
}

/// Write the phantom volume, input labels and the demo kit into `out_dir`.
pub fn write_kit(
    phantom: &Phantom,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<(), PhantomError> {
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out).map_err(DataError::IoFailure)?;
    save_volume(&phantom.volume, out.join("volume"), VolumeDtype::I16)?;
    save_label_volume(&phantom.labels, out.join("labels"))?;
    save_taxonomy(&paxray::taxonomy(), out.join("taxonomy.json"))?;
    save_lexicon(&demo_lexicon(), out.join("lexicon.tsv"))?;
    save_embeddings(&demo_embeddings(seed), out.join("embeddings.vec"))?;
    let reports = demo_reports();
    let text = serde_json::to_string_pretty(&reports).expect("report serialization");
    std::fs::write(out.join("reports.json"), text).map_err(DataError::IoFailure)?;
    let annotations = demo_annotations(phantom);
    save_annotations(&annotations, out.join("annotations.json"))?;
    save_proposals(&demo_proposals(&annotations), out.join("proposals.json"))?;
    Ok(())
}
