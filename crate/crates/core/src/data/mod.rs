//! Voxel/mask/taxonomy data model, file containers and hierarchy composition.
//!
//! All grids are row-major with z slowest and x fastest. The anatomical frame
//! is fixed project-wide: z increases toward the head (superior), y toward
//! the back (posterior), x toward the patient's left.

mod container;
mod hierarchy;
mod labelvol;
pub mod paxray;
mod taxonomy;

pub use container::{load_mask, load_volume, save_mask, save_volume, VolumeDtype};
pub use hierarchy::{compose_hierarchy, validate_hierarchy, HierarchyViolation};
pub use labelvol::{load_label_volume, save_label_volume};
pub use taxonomy::{load_taxonomy, save_taxonomy};

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

/// Grid shape as `[nz, ny, nx]`.
pub type Shape3 = [usize; 3];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("header declares {expected} bytes but raw file holds {actual}")]
    HeaderMismatch { expected: u64, actual: u64 },
    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("mask byte at offset {offset} is {value}, expected 0 or 1")]
    InvalidMaskValue { offset: usize, value: u8 },
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("malformed JSON in {path}: {detail}")]
    MalformedJson { path: PathBuf, detail: String },
    #[error("taxonomy cycle through node {0:?}")]
    CycleDetected(String),
    #[error("duplicate node id {0:?}")]
    DuplicateId(String),
    #[error("node {id:?} references missing parent {parent:?}")]
    DanglingParent { id: String, parent: String },
    #[error("label {0:?} is not in the taxonomy")]
    UnknownLabelId(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Shape3, actual: Shape3 },
    #[error("invalid dimensions: shape {shape:?} does not hold {elements} elements")]
    InvalidDimensions { shape: Shape3, elements: usize },
    #[error("non-finite voxel value at index {0}")]
    NonFiniteVoxel(usize),
}

impl DataError {
    /// Stable machine-readable code, module-qualified.
    pub fn code(&self) -> &'static str {
        match self {
            DataError::MissingFile(_) => "data.MissingFile",
            DataError::HeaderMismatch { .. } => "data.HeaderMismatch",
            DataError::UnsupportedDtype(_) => "data.UnsupportedDtype",
            DataError::InvalidMaskValue { .. } => "data.InvalidMaskValue",
            DataError::IoFailure(_) => "data.IoFailure",
            DataError::MalformedJson { .. } => "data.MalformedJson",
            DataError::CycleDetected(_) => "data.CycleDetected",
            DataError::DuplicateId(_) => "data.DuplicateId",
            DataError::DanglingParent { .. } => "data.DanglingParent",
            DataError::UnknownLabelId(_) => "data.UnknownLabelId",
            DataError::ShapeMismatch { .. } => "data.ShapeMismatch",
            DataError::InvalidDimensions { .. } => "data.InvalidDimensions",
            DataError::NonFiniteVoxel(_) => "data.NonFiniteVoxel",
        }
    }
}

/// CT intensity grid in Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    shape: Shape3,
    spacing_mm: [f64; 3],
    voxels: Vec<f32>,
}

impl Volume3D {
    pub fn new(shape: Shape3, spacing_mm: [f64; 3], voxels: Vec<f32>) -> Result<Self, DataError> {
        let elements = shape[0]
            .checked_mul(shape[1])
            .and_then(|v| v.checked_mul(shape[2]))
            .unwrap_or(0);
        if shape.contains(&0) || voxels.len() != elements {
            return Err(DataError::InvalidDimensions {
                shape,
                elements: voxels.len(),
            });
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteVoxel(i));
        }
        Ok(Self {
            shape,
            spacing_mm,
            voxels,
        })
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape[1] + y) * self.shape[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[self.index(z, y, x)]
    }
}

/// Binary voxel mask over the same grid layout as [`Volume3D`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask3D {
    shape: Shape3,
    bits: Vec<bool>,
}

impl Mask3D {
    /// All-clear mask of the given shape.
    pub fn empty(shape: Shape3) -> Self {
        Self {
            shape,
            bits: vec![false; shape[0] * shape[1] * shape[2]],
        }
    }

    pub fn from_bits(shape: Shape3, bits: Vec<bool>) -> Result<Self, DataError> {
        if bits.len() != shape[0] * shape[1] * shape[2] {
            return Err(DataError::InvalidDimensions {
                shape,
                elements: bits.len(),
            });
        }
        Ok(Self { shape, bits })
    }

    pub fn from_fn(shape: Shape3, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(shape[0] * shape[1] * shape[2]);
        for z in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    bits.push(f(z, y, x));
                }
            }
        }
        Self { shape, bits }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape[1] + y) * self.shape[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.bits[self.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, value: bool) {
        let i = self.index(z, y, x);
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set voxel coordinates in scan order (z, y, x).
    pub fn coords(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let [_, ny, nx] = self.shape;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| {
                let x = i % nx;
                let y = (i / nx) % ny;
                let z = i / (nx * ny);
                (z, y, x)
            })
    }

    pub fn union(&self, other: &Mask3D) -> Mask3D {
        debug_assert_eq!(self.shape, other.shape);
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a | b)
            .collect();
        Mask3D {
            shape: self.shape,
            bits,
        }
    }

    pub fn union_in_place(&mut self, other: &Mask3D) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn intersect(&self, other: &Mask3D) -> Mask3D {
        debug_assert_eq!(self.shape, other.shape);
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a & b)
            .collect();
        Mask3D {
            shape: self.shape,
            bits,
        }
    }

    /// Voxels set in `self` but not in `other`.
    pub fn minus(&self, other: &Mask3D) -> Mask3D {
        debug_assert_eq!(self.shape, other.shape);
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a & !b)
            .collect();
        Mask3D {
            shape: self.shape,
            bits,
        }
    }

    pub fn is_subset_of(&self, other: &Mask3D) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Mean of set-voxel coordinates as (z, y, x); `None` when empty.
    pub fn centroid(&self) -> Option<(f64, f64, f64)> {
        let mut n = 0usize;
        let (mut sz, mut sy, mut sx) = (0f64, 0f64, 0f64);
        for (z, y, x) in self.coords() {
            n += 1;
            sz += z as f64;
            sy += y as f64;
            sx += x as f64;
        }
        if n == 0 {
            None
        } else {
            let n = n as f64;
            Some((sz / n, sy / n, sx / n))
        }
    }
}

/// Which projected view a label participates in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewApplicability {
    Frontal,
    Lateral,
    Both,
}

impl ViewApplicability {
    pub fn includes_frontal(self) -> bool {
        matches!(self, ViewApplicability::Frontal | ViewApplicability::Both)
    }

    pub fn includes_lateral(self) -> bool {
        matches!(self, ViewApplicability::Lateral | ViewApplicability::Both)
    }
}

/// One node of the label taxonomy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelNode {
    pub id: String,
    pub display_name: String,
    pub parent_id: Option<String>,
    pub view_applicability: ViewApplicability,
}

/// Validated label forest: unique ids, existing parents, no cycles.
#[derive(Debug, Clone)]
pub struct LabelTaxonomy {
    version: String,
    nodes: Vec<LabelNode>,
    index: BTreeMap<String, usize>,
    children: Vec<Vec<usize>>,
    roots: Vec<usize>,
}

impl LabelTaxonomy {
    pub fn new(version: impl Into<String>, nodes: Vec<LabelNode>) -> Result<Self, DataError> {
        let mut index = BTreeMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.id.clone(), i).is_some() {
                return Err(DataError::DuplicateId(node.id.clone()));
            }
        }
        let mut children = vec![Vec::new(); nodes.len()];
        let mut roots = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            match &node.parent_id {
                None => roots.push(i),
                Some(p) => {
                    let &pi = index.get(p).ok_or_else(|| DataError::DanglingParent {
                        id: node.id.clone(),
                        parent: p.clone(),
                    })?;
                    children[pi].push(i);
                }
            }
        }
        // A node whose parent chain never reaches a root sits on a cycle.
        for (i, node) in nodes.iter().enumerate() {
            let mut hops = 0usize;
            let mut cur = i;
            while let Some(p) = &nodes[cur].parent_id {
                cur = index[p];
                hops += 1;
                if hops > nodes.len() {
                    return Err(DataError::CycleDetected(node.id.clone()));
                }
            }
        }
        Ok(Self {
            version: version.into(),
            nodes,
            index,
            children,
            roots,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[LabelNode] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&LabelNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn roots(&self) -> impl Iterator<Item = &LabelNode> {
        self.roots.iter().map(move |&i| &self.nodes[i])
    }

    pub fn children_of(&self, id: &str) -> impl Iterator<Item = &LabelNode> {
        let kids = self.index.get(id).map(|&i| self.children[i].as_slice());
        kids.unwrap_or(&[]).iter().map(move |&i| &self.nodes[i])
    }

    pub fn parent_of(&self, id: &str) -> Option<&LabelNode> {
        let node = self.node(id)?;
        node.parent_id.as_deref().and_then(|p| self.node(p))
    }

    /// Ancestor chain from direct parent up to the root.
    pub fn ancestors_of<'a>(&'a self, id: &str) -> Vec<&'a LabelNode> {
        let mut out = Vec::new();
        let mut cur = self.node(id);
        while let Some(node) = cur {
            match node.parent_id.as_deref() {
                Some(p) => {
                    let parent = self.node(p).expect("validated parent");
                    out.push(parent);
                    cur = Some(parent);
                }
                None => break,
            }
        }
        out
    }

    /// Node ids with no children.
    pub fn leaf_ids(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| self.children[*i].is_empty())
            .map(|(_, n)| n.id.as_str())
            .collect()
    }

    /// Ids in topological order, children before parents.
    pub fn topo_children_first(&self) -> Vec<&str> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<(usize, bool)> = self.roots.iter().map(|&r| (r, false)).collect();
        while let Some((i, expanded)) = stack.pop() {
            if expanded {
                order.push(self.nodes[i].id.as_str());
            } else {
                stack.push((i, true));
                for &c in self.children[i].iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        order
    }
}

/// Map from label id to mask; labels may overlap.
#[derive(Debug, Clone)]
pub struct LabelVolume {
    shape: Shape3,
    taxonomy_ref: String,
    entries: BTreeMap<String, Mask3D>,
}

impl LabelVolume {
    pub fn new(shape: Shape3, taxonomy_ref: impl Into<String>) -> Self {
        Self {
            shape,
            taxonomy_ref: taxonomy_ref.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn taxonomy_ref(&self) -> &str {
        &self.taxonomy_ref
    }

    pub fn insert(&mut self, id: impl Into<String>, mask: Mask3D) -> Result<(), DataError> {
        if mask.shape() != self.shape {
            return Err(DataError::ShapeMismatch {
                expected: self.shape,
                actual: mask.shape(),
            });
        }
        self.entries.insert(id.into(), mask);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Mask3D> {
        self.entries.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mask3D)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn label_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
