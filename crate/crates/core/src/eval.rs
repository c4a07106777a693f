//! Retrieval metrics: IoU, proposal hit rate and Top-k region retrieval,
//! plus ingestion of external proposal boxes and ground-truth annotations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ground::{BBox, GroundingDoc, RegionLabel};
use crate::project::ProjectionAxis;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no annotations")]
    NoAnnotations,
    #[error("malformed JSON in {path}: {detail}")]
    MalformedJson { path: PathBuf, detail: String },
    #[error("box out of bounds: {0}")]
    OutOfBounds(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::NoAnnotations => "eval.NoAnnotations",
            EvalError::MalformedJson { .. } => "eval.MalformedJson",
            EvalError::OutOfBounds(_) => "eval.OutOfBounds",
            EvalError::IoFailure(_) => "eval.IoFailure",
        }
    }
}

/// Whether an overlap exactly at the threshold counts as a hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    /// IoU >= threshold (default).
    #[default]
    Inclusive,
    /// IoU > threshold.
    Strict,
}

impl IouMode {
    fn is_hit(self, iou: f64, tau: f64) -> bool {
        match self {
            IouMode::Inclusive => iou >= tau,
            IouMode::Strict => iou > tau,
        }
    }
}

/// One ground-truth phrase box.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub report_id: String,
    pub view: ProjectionAxis,
    pub phrase: String,
    pub gt_box: BBox,
    /// [w, h] of the annotated image.
    pub image_size: [u32; 2],
}

impl Annotation {
    /// Key into per-image proposal sets.
    pub fn image_id(&self) -> String {
        image_id(&self.report_id, self.view)
    }
}

pub fn image_id(report_id: &str, view: ProjectionAxis) -> String {
    let v = match view {
        ProjectionAxis::Frontal => "frontal",
        ProjectionAxis::Lateral => "lateral",
    };
    format!("{report_id}_{v}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
}

/// Proposal boxes keyed by image id.
pub type ProposalMap = BTreeMap<String, Vec<ScoredBox>>;

/// Intersection over union of two half-open pixel boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix0 = a.x0.max(b.x0);
    let iy0 = a.y0.max(b.y0);
    let ix1 = a.x1.min(b.x1);
    let iy1 = a.y1.min(b.y1);
    if ix0 >= ix1 || iy0 >= iy1 {
        return 0.0;
    }
    let inter = u64::from(ix1 - ix0) * u64::from(iy1 - iy0);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Percentage of ground truths matched by at least one proposal box of
/// their image at the IoU threshold.
pub fn hit_rate(
    gts: &[Annotation],
    proposals: &ProposalMap,
    tau: f64,
    mode: IouMode,
) -> Result<f64, EvalError> {
    if gts.is_empty() {
        return Err(EvalError::NoAnnotations);
    }
    let hits = gts
        .iter()
        .filter(|gt| {
            proposals.get(&gt.image_id()).is_some_and(|boxes| {
                boxes
                    .iter()
                    .any(|b| mode.is_hit(iou(&b.bbox, &gt.gt_box), tau))
            })
        })
        .count();
    Ok(100.0 * hits as f64 / gts.len() as f64)
}

/// Top-k outcome plus the annotations whose phrase was absent from the
/// grounding output (counted as misses, reported rather than fatal).
#[derive(Debug, Clone)]
pub struct TopkOutcome {
    pub percent: f64,
    pub unmatched: Vec<String>,
}

/// Percentage of ground truths whose phrase has a match within the first k
/// ranked regions at the IoU threshold. Whole-image entries use the
/// full-image box of the annotated image.
pub fn topk_retrieval(
    gts: &[Annotation],
    groundings: &[GroundingDoc],
    k: usize,
    tau: f64,
    mode: IouMode,
) -> Result<TopkOutcome, EvalError> {
    if gts.is_empty() {
        return Err(EvalError::NoAnnotations);
    }
    let mut successes = 0usize;
    let mut unmatched = Vec::new();
    for gt in gts {
        let phrase = groundings
            .iter()
            .filter(|doc| doc.report_id == gt.report_id && doc.view == gt.view)
            .flat_map(|doc| doc.phrases.iter())
            .find(|p| p.text == gt.phrase);
        let Some(phrase) = phrase else {
            unmatched.push(format!("{}/{}", gt.image_id(), gt.phrase));
            continue;
        };
        let full = BBox {
            x0: 0,
            y0: 0,
            x1: gt.image_size[0],
            y1: gt.image_size[1],
        };
        let hit = phrase.ranked.iter().take(k).any(|entry| {
            let bbox = match &entry.label {
                RegionLabel::WholeImage => full,
                RegionLabel::Label(_) => BBox {
                    x0: entry.bbox[0],
                    y0: entry.bbox[1],
                    x1: entry.bbox[2],
                    y1: entry.bbox[3],
                },
            };
            mode.is_hit(iou(&bbox, &gt.gt_box), tau)
        });
        if hit {
            successes += 1;
        }
    }
    Ok(TopkOutcome {
        percent: 100.0 * successes as f64 / gts.len() as f64,
        unmatched,
    })
}

#[derive(Serialize, Deserialize)]
struct AnnotationFile {
    report_id: String,
    view: ProjectionAxis,
    phrase: String,
    #[serde(rename = "box")]
    gt_box: [u32; 4],
    image_size: [u32; 2],
}

fn check_box(raw: [u32; 4], image_size: Option<[u32; 2]>) -> Result<BBox, EvalError> {
    let bbox = BBox::new(raw[0], raw[1], raw[2], raw[3])
        .ok_or_else(|| EvalError::OutOfBounds(format!("degenerate box {raw:?}")))?;
    if let Some([w, h]) = image_size {
        if bbox.x1 > w || bbox.y1 > h {
            return Err(EvalError::OutOfBounds(format!(
                "box {raw:?} exceeds image {w}x{h}"
            )));
        }
    }
    Ok(bbox)
}

/// Load the annotations JSON array, validating box bounds.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>, EvalError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let rows: Vec<AnnotationFile> =
        serde_json::from_slice(&bytes).map_err(|e| EvalError::MalformedJson {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    rows.into_iter()
        .map(|r| {
            let gt_box = check_box(r.gt_box, Some(r.image_size))?;
            Ok(Annotation {
                report_id: r.report_id,
                view: r.view,
                phrase: r.phrase,
                gt_box,
                image_size: r.image_size,
            })
        })
        .collect()
}

pub fn save_annotations(gts: &[Annotation], path: impl AsRef<Path>) -> Result<(), EvalError> {
    let rows: Vec<AnnotationFile> = gts
        .iter()
        .map(|a| AnnotationFile {
            report_id: a.report_id.clone(),
            view: a.view,
            phrase: a.phrase.clone(),
            gt_box: a.gt_box.to_array(),
            image_size: a.image_size,
        })
        .collect();
    fs::write(
        path,
        serde_json::to_string_pretty(&rows).expect("serialize"),
    )?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ProposalFile {
    #[serde(rename = "box")]
    bbox: [u32; 4],
    score: f64,
}

/// Load per-image proposals: `{"<image_id>": [{"box": [...], "score": s}]}`.
pub fn load_proposals(path: impl AsRef<Path>) -> Result<ProposalMap, EvalError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let raw: BTreeMap<String, Vec<ProposalFile>> =
        serde_json::from_slice(&bytes).map_err(|e| EvalError::MalformedJson {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let mut out = ProposalMap::new();
    for (image, boxes) in raw {
        let boxes = boxes
            .into_iter()
            .map(|p| {
                Ok(ScoredBox {
                    bbox: check_box(p.bbox, None)?,
                    score: p.score,
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        out.insert(image, boxes);
    }
    Ok(out)
}

pub fn save_proposals(proposals: &ProposalMap, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let raw: BTreeMap<&str, Vec<ProposalFile>> = proposals
        .iter()
        .map(|(image, boxes)| {
            (
                image.as_str(),
                boxes
                    .iter()
                    .map(|b| ProposalFile {
                        bbox: b.bbox.to_array(),
                        score: b.score,
                    })
                    .collect(),
            )
        })
        .collect();
    fs::write(path, serde_json::to_string_pretty(&raw).expect("serialize"))?;
    Ok(())
}

/// Per-view slice of a metrics report; percentages carry one decimal.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ViewMetrics {
    pub annotation_count: usize,
    /// Per-image proposal box count statistics (hit-rate reports only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposal_boxes_max: Option<usize>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub hit_rate: BTreeMap<String, f64>,
    /// Keyed as `top_k[k][tau]` in percent.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub top_k: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub unmatched_phrases: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kind: String,
    pub iou_mode: IouMode,
    pub views: BTreeMap<String, ViewMetrics>,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn tau_key(tau: f64) -> String {
    format!("{tau}")
}

fn split_by_view(gts: &[Annotation]) -> BTreeMap<String, Vec<Annotation>> {
    let mut by_view: BTreeMap<String, Vec<Annotation>> = BTreeMap::new();
    for gt in gts {
        let key = match gt.view {
            ProjectionAxis::Frontal => "frontal",
            ProjectionAxis::Lateral => "lateral",
        };
        by_view.entry(key.to_string()).or_default().push(gt.clone());
    }
    by_view
}

/// Hit-rate table over all requested thresholds, one entry per view.
pub fn build_hitrate_report(
    gts: &[Annotation],
    proposals: &ProposalMap,
    taus: &[f64],
    mode: IouMode,
) -> Result<MetricsReport, EvalError> {
    if gts.is_empty() {
        return Err(EvalError::NoAnnotations);
    }
    let mut views = BTreeMap::new();
    for (view, view_gts) in split_by_view(gts) {
        let mut metrics = ViewMetrics {
            annotation_count: view_gts.len(),
            ..ViewMetrics::default()
        };
        metrics.proposal_boxes_max = Some(
            view_gts
                .iter()
                .filter_map(|g| proposals.get(&g.image_id()).map(|b| b.len()))
                .max()
                .unwrap_or(0),
        );
        for &tau in taus {
            let hr = hit_rate(&view_gts, proposals, tau, mode)?;
            metrics.hit_rate.insert(tau_key(tau), round1(hr));
        }
        views.insert(view, metrics);
    }
    Ok(MetricsReport {
        kind: "hitrate".into(),
        iou_mode: mode,
        views,
    })
}

/// Top-k table over all requested (k, tau) pairs, one entry per view.
pub fn build_topk_report(
    gts: &[Annotation],
    groundings: &[GroundingDoc],
    ks: &[usize],
    taus: &[f64],
    mode: IouMode,
) -> Result<MetricsReport, EvalError> {
    if gts.is_empty() {
        return Err(EvalError::NoAnnotations);
    }
    let mut views = BTreeMap::new();
    for (view, view_gts) in split_by_view(gts) {
        let mut metrics = ViewMetrics {
            annotation_count: view_gts.len(),
            ..ViewMetrics::default()
        };
        for &k in ks {
            let mut per_tau = BTreeMap::new();
            for &tau in taus {
                let outcome = topk_retrieval(&view_gts, groundings, k, tau, mode)?;
                per_tau.insert(tau_key(tau), round1(outcome.percent));
                if metrics.unmatched_phrases.is_empty() {
                    metrics.unmatched_phrases = outcome.unmatched;
                }
            }
            metrics.top_k.insert(k.to_string(), per_tau);
        }
        views.insert(view, metrics);
    }
    Ok(MetricsReport {
        kind: "topk".into(),
        iou_mode: mode,
        views,
    })
}

pub fn save_metrics(report: &MetricsReport, path: impl AsRef<Path>) -> Result<(), EvalError> {
    fs::write(
        path,
        serde_json::to_string_pretty(report).expect("serialize"),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground::{GroundedPhrase, RankedEntry};
    use rand::{Rng, SeedableRng};

    fn bbox(x0: u32, y0: u32, x1: u32, y1: u32) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn gt(report: &str, phrase: &str, b: BBox) -> Annotation {
        Annotation {
            report_id: report.into(),
            view: ProjectionAxis::Frontal,
            phrase: phrase.into(),
            gt_box: b,
            image_size: [64, 64],
        }
    }

    #[test]
    fn iou_identity_disjoint_and_half_overlap() {
        let a = bbox(0, 0, 10, 10);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bbox(20, 20, 30, 30)), 0.0);
        let b = bbox(5, 0, 15, 10);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_symmetric_and_bounded_random() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                let x0 = rng.gen_range(0..30u32);
                let y0 = rng.gen_range(0..30u32);
                bbox(x0, y0, x0 + rng.gen_range(1..20), y0 + rng.gen_range(1..20))
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let ab = iou(&a, &b);
            assert_eq!(ab, iou(&b, &a));
            assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn exact_proposals_hit_everywhere() {
        let gts = vec![
            gt("r1", "p", bbox(1, 2, 9, 11)),
            gt("r2", "q", bbox(0, 0, 5, 5)),
        ];
        let mut proposals = ProposalMap::new();
        for g in &gts {
            proposals.insert(
                g.image_id(),
                vec![ScoredBox {
                    bbox: g.gt_box,
                    score: 1.0,
                }],
            );
        }
        for tau in [0.25, 0.5, 0.75, 0.99] {
            assert_eq!(
                hit_rate(&gts, &proposals, tau, IouMode::Inclusive).unwrap(),
                100.0
            );
        }
    }

    #[test]
    fn boundary_iou_hit_at_half_miss_at_three_quarters() {
        let gts = vec![gt("r", "p", bbox(0, 0, 10, 10))];
        let mut proposals = ProposalMap::new();
        proposals.insert(
            gts[0].image_id(),
            vec![ScoredBox {
                bbox: bbox(0, 0, 10, 5),
                score: 1.0,
            }],
        );
        assert_eq!(
            hit_rate(&gts, &proposals, 0.5, IouMode::Inclusive).unwrap(),
            100.0
        );
        assert_eq!(
            hit_rate(&gts, &proposals, 0.75, IouMode::Inclusive).unwrap(),
            0.0
        );
        // strict mode flips the boundary case
        assert_eq!(
            hit_rate(&gts, &proposals, 0.5, IouMode::Strict).unwrap(),
            0.0
        );
    }

    #[test]
    fn empty_annotations_error() {
        assert!(matches!(
            hit_rate(&[], &ProposalMap::new(), 0.5, IouMode::Inclusive),
            Err(EvalError::NoAnnotations)
        ));
    }

    fn doc(report: &str, phrases: Vec<GroundedPhrase>) -> GroundingDoc {
        GroundingDoc {
            report_id: report.into(),
            view: ProjectionAxis::Frontal,
            phrases,
        }
    }

    fn entry(label: &str, score: f64, b: BBox) -> RankedEntry {
        RankedEntry {
            label: RegionLabel::Label(label.into()),
            score,
            bbox: b.to_array(),
        }
    }

    #[test]
    fn topk_rank_three_needs_k_five() {
        // GT overlaps the 3rd-ranked box at IoU 0.6
        let gt_box = bbox(0, 0, 10, 10);
        let third = bbox(0, 0, 10, 6); // IoU 0.6
        let phrases = vec![GroundedPhrase {
            text: "finding".into(),
            ranked: vec![
                entry("a", 0.9, bbox(30, 30, 40, 40)),
                entry("b", 0.8, bbox(40, 40, 50, 50)),
                entry("c", 0.7, third),
            ],
        }];
        let gts = vec![gt("r", "finding", gt_box)];
        let docs = vec![doc("r", phrases)];
        let at = |k| {
            topk_retrieval(&gts, &docs, k, 0.5, IouMode::Inclusive)
                .unwrap()
                .percent
        };
        assert_eq!(at(1), 0.0);
        assert_eq!(at(5), 100.0);
    }

    #[test]
    fn whole_image_fallback_matches_full_image_gt() {
        let gts = vec![Annotation {
            image_size: [32, 16],
            ..gt("r", "vague", bbox(0, 0, 32, 16))
        }];
        let docs = vec![doc(
            "r",
            vec![GroundedPhrase {
                text: "vague".into(),
                ranked: vec![RankedEntry {
                    label: RegionLabel::WholeImage,
                    score: 0.0,
                    bbox: [0, 0, 32, 16],
                }],
            }],
        )];
        for tau in [0.25, 0.5, 1.0] {
            let got = topk_retrieval(&gts, &docs, 1, tau, IouMode::Inclusive).unwrap();
            assert_eq!(got.percent, 100.0);
        }
    }

    #[test]
    fn unmatched_phrase_reported_not_fatal() {
        let gts = vec![gt("r", "missing phrase", bbox(0, 0, 4, 4))];
        let docs = vec![doc("r", vec![])];
        let got = topk_retrieval(&gts, &docs, 1, 0.5, IouMode::Inclusive).unwrap();
        assert_eq!(got.percent, 0.0);
        assert_eq!(got.unmatched, vec!["r_frontal/missing phrase"]);
    }

    #[test]
    fn hit_rate_monotone_in_tau_and_proposals() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(15);
        for _ in 0..50 {
            let gts: Vec<Annotation> = (0..5)
                .map(|i| {
                    let x0 = rng.gen_range(0..30u32);
                    let y0 = rng.gen_range(0..30u32);
                    gt(
                        &format!("r{i}"),
                        "p",
                        bbox(x0, y0, x0 + rng.gen_range(1..30), y0 + rng.gen_range(1..30)),
                    )
                })
                .collect();
            let mut proposals = ProposalMap::new();
            for g in &gts {
                let boxes: Vec<ScoredBox> = (0..rng.gen_range(1..5))
                    .map(|_| {
                        let x0 = rng.gen_range(0..30u32);
                        let y0 = rng.gen_range(0..30u32);
                        ScoredBox {
                            bbox: bbox(
                                x0,
                                y0,
                                x0 + rng.gen_range(1..30),
                                y0 + rng.gen_range(1..30),
                            ),
                            score: 1.0,
                        }
                    })
                    .collect();
                proposals.insert(g.image_id(), boxes);
            }
            let taus = [0.1, 0.25, 0.5, 0.75, 0.9];
            let rates: Vec<f64> = taus
                .iter()
                .map(|&t| hit_rate(&gts, &proposals, t, IouMode::Inclusive).unwrap())
                .collect();
            for w in rates.windows(2) {
                assert!(w[0] >= w[1], "hit rate must not increase with tau");
            }
            // adding one proposal never decreases the rate
            let before = hit_rate(&gts, &proposals, 0.5, IouMode::Inclusive).unwrap();
            proposals
                .get_mut(&gts[0].image_id())
                .unwrap()
                .push(ScoredBox {
                    bbox: gts[0].gt_box,
                    score: 0.1,
                });
            let after = hit_rate(&gts, &proposals, 0.5, IouMode::Inclusive).unwrap();
            assert!(after >= before);
        }
    }

    #[test]
    fn annotations_round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ann.json");
        let gts = vec![gt("r1", "left opacity", bbox(2, 3, 10, 12))];
        save_annotations(&gts, &p).unwrap();
        assert_eq!(load_annotations(&p).unwrap(), gts);

        std::fs::write(
            &p,
            r#"[{"report_id":"r","view":"frontal","phrase":"p","box":[5,0,5,10],"image_size":[64,64]}]"#,
        )
        .unwrap();
        assert!(matches!(
            load_annotations(&p).unwrap_err(),
            EvalError::OutOfBounds(_)
        ));
        std::fs::write(
            &p,
            r#"[{"report_id":"r","view":"frontal","phrase":"p","box":[0,0,99,10],"image_size":[64,64]}]"#,
        )
        .unwrap();
        assert!(matches!(
            load_annotations(&p).unwrap_err(),
            EvalError::OutOfBounds(_)
        ));
    }

    #[test]
    fn proposals_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(25);
        let mut proposals = ProposalMap::new();
        for i in 0..4 {
            let boxes: Vec<ScoredBox> = (0..6)
                .map(|_| {
                    let x0 = rng.gen_range(0..20u32);
                    let y0 = rng.gen_range(0..20u32);
                    ScoredBox {
                        bbox: bbox(x0, y0, x0 + rng.gen_range(1..20), y0 + rng.gen_range(1..20)),
                        score: rng.gen_range(-5.0..5.0),
                    }
                })
                .collect();
            proposals.insert(format!("img{i}"), boxes);
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("props.json");
        save_proposals(&proposals, &p).unwrap();
        assert_eq!(load_proposals(&p).unwrap(), proposals);
    }

    #[test]
    fn single_image_single_box_parses() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("props.json");
        std::fs::write(&p, r#"{"img_frontal":[{"box":[0,0,4,4],"score":0.5}]}"#).unwrap();
        let got = load_proposals(&p).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got["img_frontal"].len(), 1);
    }

    #[test]
    fn topk_over_all_regions_equals_hit_rate_on_same_boxes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..30 {
            let region_boxes: Vec<BBox> = (0..4)
                .map(|_| {
                    let x0 = rng.gen_range(0..30u32);
                    let y0 = rng.gen_range(0..30u32);
                    bbox(x0, y0, x0 + rng.gen_range(1..20), y0 + rng.gen_range(1..20))
                })
                .collect();
            let gts: Vec<Annotation> = (0..3)
                .map(|i| {
                    let x0 = rng.gen_range(0..30u32);
                    let y0 = rng.gen_range(0..30u32);
                    Annotation {
                        report_id: "r".into(),
                        view: ProjectionAxis::Frontal,
                        phrase: format!("p{i}"),
                        gt_box: bbox(x0, y0, x0 + rng.gen_range(1..20), y0 + rng.gen_range(1..20)),
                        image_size: [64, 64],
                    }
                })
                .collect();
            // proposals = the region boxes
            let mut proposals = ProposalMap::new();
            proposals.insert(
                "r_frontal".into(),
                region_boxes
                    .iter()
                    .map(|&b| ScoredBox {
                        bbox: b,
                        score: 1.0,
                    })
                    .collect(),
            );
            // groundings: every phrase ranks all region boxes
            let docs = vec![doc(
                "r",
                gts.iter()
                    .map(|g| GroundedPhrase {
                        text: g.phrase.clone(),
                        ranked: region_boxes
                            .iter()
                            .enumerate()
                            .map(|(i, &b)| entry(&format!("l{i}"), 1.0, b))
                            .collect(),
                    })
                    .collect(),
            )];
            for tau in [0.25, 0.5, 0.75] {
                let hr = hit_rate(&gts, &proposals, tau, IouMode::Inclusive).unwrap();
                let tk = topk_retrieval(&gts, &docs, region_boxes.len(), tau, IouMode::Inclusive)
                    .unwrap()
                    .percent;
                assert_eq!(hr, tk, "tau {tau}");
            }
        }
    }

    #[test]
    fn topk_monotone_in_k_and_tau() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(101);
        for _ in 0..50 {
            let gts: Vec<Annotation> = (0..4)
                .map(|i| {
                    let x0 = rng.gen_range(0..30u32);
                    let y0 = rng.gen_range(0..30u32);
                    Annotation {
                        report_id: "r".into(),
                        view: ProjectionAxis::Frontal,
                        phrase: format!("p{i}"),
                        gt_box: bbox(x0, y0, x0 + rng.gen_range(1..20), y0 + rng.gen_range(1..20)),
                        image_size: [64, 64],
                    }
                })
                .collect();
            let docs = vec![doc(
                "r",
                gts.iter()
                    .map(|g| GroundedPhrase {
                        text: g.phrase.clone(),
                        ranked: (0..5)
                            .map(|i| {
                                let x0 = rng.gen_range(0..30u32);
                                let y0 = rng.gen_range(0..30u32);
                                entry(
                                    &format!("l{i}"),
                                    1.0 - i as f64 * 0.1,
                                    bbox(
                                        x0,
                                        y0,
                                        x0 + rng.gen_range(1..20),
                                        y0 + rng.gen_range(1..20),
                                    ),
                                )
                            })
                            .collect(),
                    })
                    .collect(),
            )];
            let at = |k, tau| {
                topk_retrieval(&gts, &docs, k, tau, IouMode::Inclusive)
                    .unwrap()
                    .percent
            };
            for k in 1..5 {
                assert!(at(k + 1, 0.5) >= at(k, 0.5), "not monotone in k");
            }
            let mut prev = 100.0f64;
            for tau in [0.1, 0.25, 0.5, 0.75] {
                let v = at(3, tau);
                assert!(v <= prev, "not monotone in tau");
                prev = v;
            }
        }
    }

    #[test]
    fn report_percentages_are_rounded_to_one_decimal() {
        // 1 of 3 hits = 33.333...% -> 33.3
        let gts = vec![
            gt("a", "p", bbox(0, 0, 10, 10)),
            gt("b", "p", bbox(0, 0, 10, 10)),
            gt("c", "p", bbox(0, 0, 10, 10)),
        ];
        let mut proposals = ProposalMap::new();
        proposals.insert(
            gts[0].image_id(),
            vec![ScoredBox {
                bbox: gts[0].gt_box,
                score: 1.0,
            }],
        );
        let report = build_hitrate_report(&gts, &proposals, &[0.5], IouMode::Inclusive).unwrap();
        assert_eq!(report.views["frontal"].hit_rate["0.5"], 33.3);
        assert_eq!(report.views["frontal"].annotation_count, 3);
    }
}
