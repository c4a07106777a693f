//! Hierarchy composition and the child-subset-of-parent checker.

use std::collections::{BTreeMap, BTreeSet};

use super::{DataError, LabelTaxonomy, LabelVolume, Mask3D};

/// A child mask reaching outside its parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierarchyViolation {
    pub child: String,
    pub parent: String,
    pub offending_voxels: usize,
}

/// Union-complete every ancestor: each node's mask becomes the union of its
/// own input mask (if any) and all of its descendants' masks.
///
/// The output contains every input label plus all of their ancestors; nodes
/// unrelated to any input are omitted. Fails with `UnknownLabelId` when the
/// input volume carries a label the taxonomy does not know.
pub fn compose_hierarchy(lv: &LabelVolume, tax: &LabelTaxonomy) -> Result<LabelVolume, DataError> {
    for id in lv.label_ids() {
        if !tax.contains(id) {
            return Err(DataError::UnknownLabelId(id.to_string()));
        }
    }
    let mut wanted: BTreeSet<&str> = BTreeSet::new();
    for id in lv.label_ids() {
        wanted.insert(tax.node(id).expect("checked").id.as_str());
        for anc in tax.ancestors_of(id) {
            wanted.insert(anc.id.as_str());
        }
    }
    let mut composed: BTreeMap<&str, Mask3D> = BTreeMap::new();
    for id in tax.topo_children_first() {
        if !wanted.contains(id) {
            continue;
        }
        let mut mask = lv
            .get(id)
            .cloned()
            .unwrap_or_else(|| Mask3D::empty(lv.shape()));
        for child in tax.children_of(id) {
            if let Some(child_mask) = composed.get(child.id.as_str()) {
                mask.union_in_place(child_mask);
            }
        }
        composed.insert(id, mask);
    }
    let mut out = LabelVolume::new(lv.shape(), lv.taxonomy_ref());
    for (id, mask) in composed {
        out.insert(id, mask)?;
    }
    Ok(out)
}

/// Report every (child, parent) edge where the child mask is not a subset of
/// the parent mask, with the offending voxel count. Edges whose child has no
/// mask are skipped; a missing parent counts as empty.
pub fn validate_hierarchy(lv: &LabelVolume, tax: &LabelTaxonomy) -> Vec<HierarchyViolation> {
    let mut violations = Vec::new();
    for (id, child_mask) in lv.iter() {
        let Some(parent) = tax.parent_of(id) else {
            continue;
        };
        let offending = match lv.get(&parent.id) {
            Some(parent_mask) => child_mask.minus(parent_mask).count(),
            None => child_mask.count(),
        };
        if offending > 0 {
            violations.push(HierarchyViolation {
                child: id.to_string(),
                parent: parent.id.clone(),
                offending_voxels: offending,
            });
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabelNode, ViewApplicability};
    use rand::{Rng, SeedableRng};

    fn node(id: &str, parent: Option<&str>) -> LabelNode {
        LabelNode {
            id: id.into(),
            display_name: id.replace('_', " "),
            parent_id: parent.map(|p| p.into()),
            view_applicability: ViewApplicability::Both,
        }
    }

    fn lung_tax() -> LabelTaxonomy {
        LabelTaxonomy::new(
            "t",
            vec![
                node("lung", None),
                node("left_lung", Some("lung")),
                node("left_upper_lobe", Some("left_lung")),
                node("left_lower_lobe", Some("left_lung")),
            ],
        )
        .unwrap()
    }

    fn random_mask(shape: [usize; 3], rng: &mut impl Rng, p: f64) -> Mask3D {
        let n = shape[0] * shape[1] * shape[2];
        Mask3D::from_bits(shape, (0..n).map(|_| rng.gen_bool(p)).collect()).unwrap()
    }

    #[test]
    fn lobe_union_becomes_lung_half() {
        let shape = [4, 4, 4];
        let mut upper = Mask3D::empty(shape);
        upper.set(3, 1, 1, true);
        upper.set(2, 1, 1, true);
        let mut lower = Mask3D::empty(shape);
        lower.set(0, 1, 1, true);
        let mut lv = LabelVolume::new(shape, "t");
        lv.insert("left_upper_lobe", upper.clone()).unwrap();
        lv.insert("left_lower_lobe", lower.clone()).unwrap();
        let out = compose_hierarchy(&lv, &lung_tax()).unwrap();
        assert_eq!(out.get("left_lung").unwrap(), &upper.union(&lower));
        assert_eq!(out.get("lung").unwrap(), &upper.union(&lower));
    }

    #[test]
    fn empty_leaf_gives_empty_parent() {
        let shape = [2, 2, 2];
        let mut lv = LabelVolume::new(shape, "t");
        lv.insert("left_upper_lobe", Mask3D::empty(shape)).unwrap();
        let out = compose_hierarchy(&lv, &lung_tax()).unwrap();
        assert!(out.get("left_lung").unwrap().is_empty());
    }

    #[test]
    fn disjoint_children_sum_cardinalities() {
        let shape = [6, 6, 6];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = random_mask(shape, &mut rng, 0.2);
        let b = random_mask(shape, &mut rng, 0.2).minus(&a);
        let mut lv = LabelVolume::new(shape, "t");
        lv.insert("left_upper_lobe", a.clone()).unwrap();
        lv.insert("left_lower_lobe", b.clone()).unwrap();
        let out = compose_hierarchy(&lv, &lung_tax()).unwrap();
        assert_eq!(out.get("left_lung").unwrap().count(), a.count() + b.count());
    }

    #[test]
    fn unknown_label_rejected() {
        let mut lv = LabelVolume::new([2, 2, 2], "t");
        lv.insert("stomach", Mask3D::empty([2, 2, 2])).unwrap();
        assert!(matches!(
            compose_hierarchy(&lv, &lung_tax()).unwrap_err(),
            DataError::UnknownLabelId(_)
        ));
    }

    #[test]
    fn composed_output_validates_clean_and_is_idempotent() {
        let shape = [5, 5, 5];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut lv = LabelVolume::new(shape, "t");
            lv.insert("left_upper_lobe", random_mask(shape, &mut rng, 0.3))
                .unwrap();
            lv.insert("left_lower_lobe", random_mask(shape, &mut rng, 0.3))
                .unwrap();
            lv.insert("lung", random_mask(shape, &mut rng, 0.1))
                .unwrap();
            let tax = lung_tax();
            let once = compose_hierarchy(&lv, &tax).unwrap();
            assert!(validate_hierarchy(&once, &tax).is_empty());
            let twice = compose_hierarchy(&once, &tax).unwrap();
            for (id, mask) in once.iter() {
                assert_eq!(twice.get(id).unwrap(), mask);
            }
        }
    }

    #[test]
    fn violation_counts_match_brute_force_subset_scan() {
        let shape = [4, 4, 4];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let tax = lung_tax();
        for _ in 0..30 {
            let mut lv = LabelVolume::new(shape, "t");
            for id in ["lung", "left_lung", "left_upper_lobe", "left_lower_lobe"] {
                lv.insert(id, random_mask(shape, &mut rng, 0.4)).unwrap();
            }
            let got = validate_hierarchy(&lv, &tax);
            // brute force: scan every voxel of every edge
            let mut expected = Vec::new();
            for (child, parent) in [
                ("left_lower_lobe", "left_lung"),
                ("left_lung", "lung"),
                ("left_upper_lobe", "left_lung"),
            ] {
                let c = lv.get(child).unwrap();
                let p = lv.get(parent).unwrap();
                let mut n = 0;
                for i in 0..c.bits().len() {
                    if c.bits()[i] && !p.bits()[i] {
                        n += 1;
                    }
                }
                if n > 0 {
                    expected.push(HierarchyViolation {
                        child: child.into(),
                        parent: parent.into(),
                        offending_voxels: n,
                    });
                }
            }
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn child_with_one_voxel_outside_parent() {
        let shape = [3, 3, 3];
        let mut child = Mask3D::empty(shape);
        child.set(0, 0, 0, true);
        child.set(1, 1, 1, true);
        let mut parent = Mask3D::empty(shape);
        parent.set(1, 1, 1, true);
        let mut lv = LabelVolume::new(shape, "t");
        lv.insert("left_lung", child).unwrap();
        lv.insert("lung", parent).unwrap();
        let v = validate_hierarchy(&lv, &lung_tax());
        assert_eq!(
            v,
            vec![HierarchyViolation {
                child: "left_lung".into(),
                parent: "lung".into(),
                offending_voxels: 1
            }]
        );
    }
}
