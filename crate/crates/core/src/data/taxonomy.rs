//! Taxonomy JSON asset loading and saving.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, LabelNode, LabelTaxonomy, ViewApplicability};

#[derive(Serialize, Deserialize)]
struct TaxonomyFile {
    version: String,
    nodes: Vec<NodeFile>,
}

#[derive(Serialize, Deserialize)]
struct NodeFile {
    id: String,
    display_name: String,
    parent_id: Option<String>,
    views: ViewApplicability,
}

/// Load and validate a taxonomy JSON file.
pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<LabelTaxonomy, DataError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let file: TaxonomyFile =
        serde_json::from_slice(&bytes).map_err(|e| DataError::MalformedJson {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let nodes = file
        .nodes
        .into_iter()
        .map(|n| LabelNode {
            id: n.id,
            display_name: n.display_name,
            parent_id: n.parent_id,
            view_applicability: n.views,
        })
        .collect();
    LabelTaxonomy::new(file.version, nodes)
}

/// Write a taxonomy as JSON, nodes in their defining order.
pub fn save_taxonomy(tax: &LabelTaxonomy, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = TaxonomyFile {
        version: tax.version().to_string(),
        nodes: tax
            .nodes()
            .iter()
            .map(|n| NodeFile {
                id: n.id.clone(),
                display_name: n.display_name.clone(),
                parent_id: n.parent_id.clone(),
                views: n.view_applicability,
            })
            .collect(),
    };
    if let Some(dir) = path.as_ref().parent() {
        fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(&file).expect("taxonomy serialization");
    fs::write(path, text)?;
    Ok(())
}
