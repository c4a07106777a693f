//! Phrase-to-region matching: cosine similarity between phrase and label
//! embeddings, top-k retrieval with a whole-image fallback, parent-class
//! mask refinement and mask-to-box conversion.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::data::{LabelNode, LabelTaxonomy};
use crate::language::{
    embed_label_text, embed_phrase, is_zero_vector, EmbeddingTable, Lexicon, TaggedPhrase,
};
use crate::project::{Image2D, Mask2D, ProjectionAxis};

/// Reserved pseudo-label for the whole-image fallback; never a taxonomy id.
pub const WHOLE_IMAGE: &str = "WHOLE_IMAGE";

#[derive(Debug, Error)]
pub enum GroundError {
    #[error("vector dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no candidate region has a non-empty mask")]
    NoRegions,
    #[error("mask is empty")]
    EmptyMask,
    #[error("label {0:?} is not in the taxonomy")]
    UnknownLabelId(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("malformed JSON in {path}: {detail}")]
    MalformedJson { path: PathBuf, detail: String },
}

impl GroundError {
    pub fn code(&self) -> &'static str {
        match self {
            GroundError::DimensionMismatch { .. } => "ground.DimensionMismatch",
            GroundError::NoRegions => "ground.NoRegions",
            GroundError::EmptyMask => "ground.EmptyMask",
            GroundError::UnknownLabelId(_) => "ground.UnknownLabelId",
            GroundError::IoFailure(_) => "ground.IoFailure",
            GroundError::MalformedJson { .. } => "ground.MalformedJson",
        }
    }
}

/// Axis-aligned half-open pixel box: [x0, x1) x [y0, y1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Option<Self> {
        (x0 < x1 && y0 < y1).then_some(Self { x0, y0, x1, y1 })
    }

    /// Full-image box for an `[h, w]` image.
    pub fn full_image(shape: [usize; 2]) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: shape[1] as u32,
            y1: shape[0] as u32,
        }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.x1 - self.x0) * u64::from(self.y1 - self.y0)
    }

    pub fn to_array(self) -> [u32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

/// Candidate regions of one view.
#[derive(Debug, Clone)]
pub struct RegionSet {
    pub view: ProjectionAxis,
    pub image_shape: [usize; 2],
    regions: BTreeMap<String, Mask2D>,
}

impl RegionSet {
    pub fn new(view: ProjectionAxis, image_shape: [usize; 2]) -> Self {
        Self {
            view,
            image_shape,
            regions: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, mask: Mask2D) {
        assert_eq!(mask.shape(), self.image_shape, "region shape mismatch");
        self.regions.insert(id.into(), mask);
    }

    pub fn get(&self, id: &str) -> Option<&Mask2D> {
        self.regions.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mask2D)> {
        self.regions.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

/// Phrase-by-label cosine similarities, entries in [-1, 1].
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    labels: Vec<String>,
    rows: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.labels.len() + col]
    }

    /// Scores of one phrase row as (label, score).
    pub fn row(&self, row: usize) -> impl Iterator<Item = (&str, f64)> {
        self.labels
            .iter()
            .enumerate()
            .map(move |(c, l)| (l.as_str(), self.get(row, c)))
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let c = dot / (na * nb);
    // rounding can push |c| past 1; keep entries inside [-1, 1]
    if c.is_finite() {
        c.clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Cosine similarity of every phrase vector against every label vector.
/// Zero-norm vectors yield similarity 0.
pub fn similarity_matrix(
    phrase_vecs: &[Vec<f64>],
    label_vecs: &BTreeMap<String, Vec<f64>>,
) -> Result<SimilarityMatrix, GroundError> {
    let dim = phrase_vecs
        .first()
        .map(|v| v.len())
        .or_else(|| label_vecs.values().next().map(|v| v.len()))
        .unwrap_or(0);
    for v in phrase_vecs.iter().chain(label_vecs.values()) {
        if v.len() != dim {
            return Err(GroundError::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
    }
    let labels: Vec<String> = label_vecs.keys().cloned().collect();
    let mut values = Vec::with_capacity(phrase_vecs.len() * labels.len());
    for pv in phrase_vecs {
        for label in &labels {
            values.push(cosine(pv, &label_vecs[label]));
        }
    }
    Ok(SimilarityMatrix {
        labels,
        rows: phrase_vecs.len(),
        values,
    })
}

/// Retrieval target: a taxonomy label or the whole-image fallback.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegionLabel {
    Label(String),
    WholeImage,
}

impl RegionLabel {
    pub fn as_str(&self) -> &str {
        match self {
            RegionLabel::Label(l) => l,
            RegionLabel::WholeImage => WHOLE_IMAGE,
        }
    }
}

impl Serialize for RegionLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RegionLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(if s == WHOLE_IMAGE {
            RegionLabel::WholeImage
        } else {
            RegionLabel::Label(s)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedRegion {
    pub label: RegionLabel,
    pub score: f64,
    pub bbox: BBox,
}

/// Ranked regions for one phrase; scores non-increasing, length at most k.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingResult {
    pub phrase_index: usize,
    pub ranked: Vec<RankedRegion>,
}

/// Top-k labels for one phrase row, ties broken lexicographically by label
/// id; labels with empty masks are skipped. A zero phrase vector returns the
/// whole image with score 0 before similarities are consulted.
pub fn retrieve(
    s: &SimilarityMatrix,
    phrase_idx: usize,
    k: usize,
    regions: &RegionSet,
    phrase_vec: &[f64],
) -> Result<GroundingResult, GroundError> {
    assert!(k >= 1, "k must be at least 1");
    if is_zero_vector(phrase_vec) {
        return Ok(GroundingResult {
            phrase_index: phrase_idx,
            ranked: vec![RankedRegion {
                label: RegionLabel::WholeImage,
                score: 0.0,
                bbox: BBox::full_image(regions.image_shape),
            }],
        });
    }
    let mut candidates: Vec<(&str, f64)> = s
        .row(phrase_idx)
        .filter(|(label, _)| regions.get(label).is_some_and(|m| !m.is_empty()))
        .collect();
    if candidates.is_empty() {
        return Err(GroundError::NoRegions);
    }
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
    let ranked = candidates
        .into_iter()
        .take(k)
        .map(|(label, score)| {
            let bbox = mask_to_bbox(regions.get(label).expect("filtered"))?;
            Ok(RankedRegion {
                label: RegionLabel::Label(label.to_string()),
                score,
                bbox,
            })
        })
        .collect::<Result<Vec<_>, GroundError>>()?;
    Ok(GroundingResult {
        phrase_index: phrase_idx,
        ranked,
    })
}

/// Raw per-label input for [`refine_region_masks`]: an external segmenter's
/// probability map or an already-binary mask.
#[derive(Debug, Clone)]
pub enum RegionMap {
    Probability(Image2D),
    Mask(Mask2D),
}

/// Threshold probability maps (at >= threshold), apply 2D cleanup, then
/// intersect each child with its refined parent top-down so the taxonomy
/// subset constraint holds on the output.
pub fn refine_region_masks(
    view: ProjectionAxis,
    image_shape: [usize; 2],
    raw: &BTreeMap<String, RegionMap>,
    tax: &LabelTaxonomy,
    threshold: f64,
    cleanup: crate::project::Cleanup2D,
) -> Result<RegionSet, GroundError> {
    for id in raw.keys() {
        if !tax.contains(id) {
            return Err(GroundError::UnknownLabelId(id.clone()));
        }
    }
    let mut masks: BTreeMap<String, Mask2D> = BTreeMap::new();
    for (id, map) in raw {
        let mask = match map {
            RegionMap::Mask(m) => m.clone(),
            RegionMap::Probability(img) => {
                assert_eq!(img.shape(), image_shape, "probability map shape mismatch");
                Mask2D::from_bits(
                    image_shape,
                    img.pixels().iter().map(|&p| p >= threshold).collect(),
                )
            }
        };
        let cleaned = mask
            .close(cleanup.close_radius)
            .remove_small(cleanup.min_component_pixels);
        masks.insert(id.clone(), cleaned);
    }
    // parents first, so each child sees its parent already refined
    let order: Vec<String> = tax
        .topo_children_first()
        .iter()
        .rev()
        .map(|s| s.to_string())
        .collect();
    for id in order {
        let Some(parent) = tax.parent_of(&id).map(|p| p.id.clone()) else {
            continue;
        };
        if let Some(parent_mask) = masks.get(&parent).cloned() {
            if let Some(child_mask) = masks.get_mut(&id) {
                *child_mask = child_mask.intersect(&parent_mask);
            }
        }
    }
    let mut set = RegionSet::new(view, image_shape);
    for (id, mask) in masks {
        set.insert(id, mask);
    }
    Ok(set)
}

/// Tightest half-open box around the set pixels.
pub fn mask_to_bbox(m: &Mask2D) -> Result<BBox, GroundError> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for (row, col) in m.coords() {
        bounds = Some(match bounds {
            None => (row, row, col, col),
            Some((r0, r1, c0, c1)) => (r0.min(row), r1.max(row), c0.min(col), c1.max(col)),
        });
    }
    let (r0, r1, c0, c1) = bounds.ok_or(GroundError::EmptyMask)?;
    Ok(BBox {
        x0: c0 as u32,
        y0: r0 as u32,
        x1: c1 as u32 + 1,
        y1: r1 as u32 + 1,
    })
}

/// One report-view worth of grounding output, the external JSON schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundingDoc {
    pub report_id: String,
    pub view: ProjectionAxis,
    pub phrases: Vec<GroundedPhrase>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundedPhrase {
    pub text: String,
    pub ranked: Vec<RankedEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedEntry {
    pub label: RegionLabel,
    pub score: f64,
    pub bbox: [u32; 4],
}

/// Ground a batch of already-filtered phrases against one region set.
pub fn ground_phrases(
    report_id: &str,
    phrases: &[TaggedPhrase],
    regions: &RegionSet,
    tax: &LabelTaxonomy,
    lex: &Lexicon,
    table: &EmbeddingTable,
    k: usize,
) -> Result<GroundingDoc, GroundError> {
    let phrase_vecs: Vec<Vec<f64>> = phrases.iter().map(|p| embed_phrase(p, table)).collect();
    let mut label_vecs = BTreeMap::new();
    for (id, _) in regions.iter() {
        let node: &LabelNode = tax
            .node(id)
            .ok_or_else(|| GroundError::UnknownLabelId(id.to_string()))?;
        label_vecs.insert(id.to_string(), embed_label_text(node, lex, table));
    }
    let sim = similarity_matrix(&phrase_vecs, &label_vecs)?;
    let mut out = Vec::with_capacity(phrases.len());
    for (idx, phrase) in phrases.iter().enumerate() {
        let result = retrieve(&sim, idx, k, regions, &phrase_vecs[idx])?;
        out.push(GroundedPhrase {
            text: phrase.raw_text.clone(),
            ranked: result
                .ranked
                .into_iter()
                .map(|r| RankedEntry {
                    label: r.label,
                    score: r.score,
                    bbox: r.bbox.to_array(),
                })
                .collect(),
        });
    }
    Ok(GroundingDoc {
        report_id: report_id.to_string(),
        view: regions.view,
        phrases: out,
    })
}

pub fn save_groundings(docs: &[GroundingDoc], path: impl AsRef<Path>) -> Result<(), GroundError> {
    let text = serde_json::to_string_pretty(docs).expect("grounding serialization");
    fs::write(path, text)?;
    Ok(())
}

pub fn load_groundings(path: impl AsRef<Path>) -> Result<Vec<GroundingDoc>, GroundError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| GroundError::MalformedJson {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}
