//! The shipped PAXRay label taxonomy: 166 nodes, 92 base (leaf) labels,
//! rooted at the four super-categories lung, mediastinum, bones and
//! sub-diaphragm.
//!
//! Ids are lowercase snake_case of the display names. Every rib contributes
//! nine labels: the whole rib, the left/right halves, the posterior/anterior
//! parts, and the four sided part segments. A node may have only one tree
//! parent, so each grouping label carries exactly one segment as its tree
//! child; the remaining subset relations are realized through the groupings'
//! own input masks at composition time.

use super::{LabelNode, LabelTaxonomy, ViewApplicability};

pub const VERSION: &str = "paxray-1";
pub const NODE_COUNT: usize = 166;
pub const BASE_LABEL_COUNT: usize = 92;

const ORDINALS: [&str; 12] = [
    "1st", "2nd", "3rd", "4th", "5th", "6th", "7th", "8th", "9th", "10th", "11th", "12th",
];

fn snake(display: &str) -> String {
    display
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Build the shipped taxonomy.
pub fn taxonomy() -> LabelTaxonomy {
    let mut nodes: Vec<LabelNode> = Vec::with_capacity(NODE_COUNT);
    let mut push = |display: &str, parent_display: Option<&str>| {
        nodes.push(LabelNode {
            id: snake(display),
            display_name: display.to_string(),
            parent_id: parent_display.map(snake),
            view_applicability: ViewApplicability::Both,
        });
    };

    push("lung", None);
    push("right lung", Some("lung"));
    push("right upper lobe", Some("right lung"));
    push("right middle lobe", Some("right lung"));
    push("right lower lobe", Some("right lung"));
    push("right lung vessel", Some("right lung"));
    push("left lung", Some("lung"));
    push("left upper lobe", Some("left lung"));
    push("left lower lobe", Some("left lung"));
    push("left lung vessel", Some("left lung"));

    push("mediastinum", None);
    push("superior mediastinum", Some("mediastinum"));
    push("inferior mediastinum", Some("mediastinum"));
    push("anterior mediastinum", Some("inferior mediastinum"));
    push("middle mediastinum", Some("inferior mediastinum"));
    push("posterior mediastinum", Some("inferior mediastinum"));
    push("heart", Some("mediastinum"));
    push("airways", Some("mediastinum"));
    push("esophagus", Some("mediastinum"));
    push("aorta", Some("mediastinum"));
    push("ascending aorta", Some("aorta"));
    push("aortic arch", Some("aorta"));
    push("descending aorta", Some("aorta"));

    push("bones", None);
    push("spine", Some("bones"));
    push("cervical spine", Some("spine"));
    for i in 1..=7 {
        push(&format!("c{i}"), Some("cervical spine"));
    }
    push("thoracic spine", Some("spine"));
    for i in 1..=12 {
        push(&format!("t{i}"), Some("thoracic spine"));
    }
    push("lumbar spine", Some("spine"));
    for i in 1..=5 {
        push(&format!("l{i}"), Some("lumbar spine"));
    }
    push("sacrum", Some("spine"));
    push("cocygis", Some("sacrum"));

    push("ribs", Some("bones"));
    for o in ORDINALS {
        let rib = format!("{o} rib");
        let left = format!("left {o} rib");
        let right = format!("right {o} rib");
        let post = format!("{o} rib posterior");
        let ant = format!("{o} rib anterior");
        push(&rib, Some("ribs"));
        push(&left, Some(&rib));
        push(&right, Some(&rib));
        push(&post, Some(&rib));
        push(&ant, Some(&rib));
        push(&format!("left {o} rib posterior"), Some(&left));
        push(&format!("left {o} rib anterior"), Some(&ant));
        push(&format!("right {o} rib posterior"), Some(&post));
        push(&format!("right {o} rib anterior"), Some(&right));
    }

    push("sub-diaphragm", None);
    push("left hemidiaphragm", Some("sub-diaphragm"));
    push("right hemidiaphragm", Some("sub-diaphragm"));

    debug_assert_eq!(nodes.len(), NODE_COUNT);
    LabelTaxonomy::new(VERSION, nodes).expect("shipped taxonomy is a valid forest")
}

/// Id of the whole-rib label for a side and 1-based index.
pub fn rib_id(side: RibSide, index: usize) -> String {
    let o = ORDINALS[index - 1];
    match side {
        RibSide::Left => snake(&format!("left {o} rib")),
        RibSide::Right => snake(&format!("right {o} rib")),
    }
}

/// Id of a sided posterior/anterior rib segment.
pub fn rib_segment_id(side: RibSide, index: usize, posterior: bool) -> String {
    let o = ORDINALS[index - 1];
    let part = if posterior { "posterior" } else { "anterior" };
    match side {
        RibSide::Left => snake(&format!("left {o} rib {part}")),
        RibSide::Right => snake(&format!("right {o} rib {part}")),
    }
}

/// Id of an unsided whole-rib or part-union label.
pub fn rib_union_id(index: usize, part: Option<bool>) -> String {
    let o = ORDINALS[index - 1];
    match part {
        None => snake(&format!("{o} rib")),
        Some(true) => snake(&format!("{o} rib posterior")),
        Some(false) => snake(&format!("{o} rib anterior")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RibSide {
    Left,
    Right,
}
