//! CT volumes to pseudo-X-ray projections with hierarchical anatomy masks
//! and report phrase grounding.
//!
//! The pipeline has three stages:
//!
//! 1. [`mod@derive`] turns a CT volume plus precomputed organ masks into a full
//!    hierarchical label volume (body/bone extraction, vessel thresholding,
//!    geometric splits for mediastinum, ribs, diaphragm and aorta).
//! 2. [`project`] reduces the volume and its labels to 2D pseudo-X-rays.
//! 3. [`language`], [`ground`] and [`eval`] match report phrases against the
//!    projected anatomy regions and score the retrieval.
//!
//! [`data`] holds the voxel/mask/taxonomy data model and file formats,
//! [`morph`] the binary-image primitives, and [`phantom`] a procedural test
//! CT used for end-to-end runs without patient data.

pub mod data;
pub mod derive;
pub mod eval;
pub mod ground;
pub mod language;
pub mod morph;
pub mod phantom;
pub mod project;
