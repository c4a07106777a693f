//! Label volume directory format: `labels.json` manifest plus one mask
//! container per label.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{load_mask, save_mask, DataError, LabelVolume};

#[derive(Serialize, Deserialize)]
struct Manifest {
    taxonomy: String,
    labels: BTreeMap<String, String>,
}

pub fn save_label_volume(lv: &LabelVolume, dir: impl AsRef<Path>) -> Result<(), DataError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut labels = BTreeMap::new();
    for (id, mask) in lv.iter() {
        save_mask(mask, dir.join(id))?;
        labels.insert(id.to_string(), id.to_string());
    }
    let manifest = Manifest {
        taxonomy: lv.taxonomy_ref().to_string(),
        labels,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    fs::write(dir.join("labels.json"), text)?;
    Ok(())
}

pub fn load_label_volume(dir: impl AsRef<Path>) -> Result<LabelVolume, DataError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("labels.json");
    if !manifest_path.is_file() {
        return Err(DataError::MissingFile(manifest_path));
    }
    let bytes = fs::read(&manifest_path)?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| DataError::MalformedJson {
            path: manifest_path.clone(),
            detail: e.to_string(),
        })?;
    if manifest.labels.is_empty() {
        return Err(DataError::MalformedJson {
            path: manifest_path,
            detail: "manifest lists no labels".to_string(),
        });
    }
    let mut masks = BTreeMap::new();
    for (id, stem) in &manifest.labels {
        masks.insert(id.clone(), load_mask(dir.join(stem))?);
    }
    let shape = masks.values().next().expect("non-empty").shape();
    let mut lv = LabelVolume::new(shape, manifest.taxonomy);
    for (id, mask) in masks {
        lv.insert(id, mask)?;
    }
    Ok(lv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Mask3D;

    #[test]
    fn directory_round_trip() {
        let mut lv = LabelVolume::new([2, 2, 2], "test-tax");
        let mut a = Mask3D::empty([2, 2, 2]);
        a.set(0, 0, 0, true);
        let mut b = Mask3D::empty([2, 2, 2]);
        b.set(1, 1, 1, true);
        lv.insert("alpha", a).unwrap();
        lv.insert("beta", b).unwrap();

        let dir = tempfile::tempdir().unwrap();
        save_label_volume(&lv, dir.path()).unwrap();
        let back = load_label_volume(dir.path()).unwrap();
        assert_eq!(back.taxonomy_ref(), "test-tax");
        assert_eq!(back.len(), 2);
        assert_eq!(back.get("alpha"), lv.get("alpha"));
        assert_eq!(back.get("beta"), lv.get("beta"));
    }

    #[test]
    fn mismatched_mask_shape_rejected() {
        let mut lv = LabelVolume::new([2, 2, 2], "t");
        let err = lv.insert("a", Mask3D::empty([1, 2, 2])).unwrap_err();
        assert!(matches!(err, DataError::ShapeMismatch { .. }));
    }
}
