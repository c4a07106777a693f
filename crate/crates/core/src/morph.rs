//! Binary-image primitives: connected components, box morphology and
//! histogram thresholding.
//!
//! Everything operates on 3D bit grids; 2D callers pass a grid with a single
//! slice (`[1, h, w]`), which turns face connectivity into 4-connectivity and
//! full connectivity into 8-connectivity.

use thiserror::Error;

use crate::data::{Mask3D, Shape3};

#[derive(Debug, Error)]
pub enum MorphError {
    #[error("mask is empty")]
    EmptyMask,
    #[error("histogram has fewer than two non-empty bins")]
    DegenerateHistogram,
}

impl MorphError {
    pub fn code(&self) -> &'static str {
        match self {
            MorphError::EmptyMask => "morph.EmptyMask",
            MorphError::DegenerateHistogram => "morph.DegenerateHistogram",
        }
    }
}

/// Neighborhood used for component labeling.
///
/// `Face` is 6-connectivity in 3D and 4-connectivity in 2D; `Full` is 26 in
/// 3D and 8 in 2D.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Face,
    Full,
}

/// Component-id-per-voxel labeling, ids 1..=count in first-voxel scan order.
#[derive(Debug, Clone)]
pub struct ComponentLabels {
    pub shape: Shape3,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl ComponentLabels {
    /// Mask of the component with the given id.
    pub fn component(&self, id: u32) -> Mask3D {
        Mask3D::from_bits(self.shape, self.labels.iter().map(|&l| l == id).collect())
            .expect("labels match shape")
    }

    /// Voxel count per component id (index 0 unused).
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.count + 1];
        for &l in &self.labels {
            if l > 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }
}

fn neighbor_offsets(connectivity: Connectivity) -> Vec<[isize; 3]> {
    let mut out = Vec::new();
    for dz in -1isize..=1 {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if dz == 0 && dy == 0 && dx == 0 {
                    continue;
                }
                let face = dz.abs() + dy.abs() + dx.abs() == 1;
                if matches!(connectivity, Connectivity::Full) || face {
                    out.push([dz, dy, dx]);
                }
            }
        }
    }
    out
}

pub(crate) fn raw_connected_components(
    shape: Shape3,
    bits: &[bool],
    connectivity: Connectivity,
) -> (Vec<u32>, usize) {
    let [nz, ny, nx] = shape;
    let offsets = neighbor_offsets(connectivity);
    let mut labels = vec![0u32; bits.len()];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let x = i % nx;
            let y = (i / nx) % ny;
            let z = i / (nx * ny);
            for off in &offsets {
                let zz = z as isize + off[0];
                let yy = y as isize + off[1];
                let xx = x as isize + off[2];
                if zz < 0 || yy < 0 || xx < 0 {
                    continue;
                }
                let (zz, yy, xx) = (zz as usize, yy as usize, xx as usize);
                if zz >= nz || yy >= ny || xx >= nx {
                    continue;
                }
                let j = (zz * ny + yy) * nx + xx;
                if bits[j] && labels[j] == 0 {
                    labels[j] = count;
                    stack.push(j);
                }
            }
        }
    }
    (labels, count as usize)
}

/// Label connected components; two set voxels share an id iff connected.
pub fn connected_components(mask: &Mask3D, connectivity: Connectivity) -> ComponentLabels {
    let (labels, count) = raw_connected_components(mask.shape(), mask.bits(), connectivity);
    ComponentLabels {
        shape: mask.shape(),
        labels,
        count,
    }
}

/// Keep only the component with the most voxels; ties go to the smallest
/// component id (first in scan order). Uses full connectivity.
pub fn largest_component(mask: &Mask3D) -> Result<Mask3D, MorphError> {
    let cc = connected_components(mask, Connectivity::Full);
    if cc.count == 0 {
        return Err(MorphError::EmptyMask);
    }
    let sizes = cc.sizes();
    let best = (1..=cc.count)
        .max_by_key(|&id| (sizes[id], std::cmp::Reverse(id)))
        .unwrap();
    Ok(cc.component(best as u32))
}

/// Sliding-window OR along one axis; `radius` voxels on each side. The box
/// collapses on a length-1 axis, so single-slice grids get the 2D behavior.
fn dilate_axis(shape: Shape3, bits: &[bool], axis: usize, radius: usize) -> Vec<bool> {
    if radius == 0 || shape[axis] == 1 {
        return bits.to_vec();
    }
    let [nz, ny, nx] = shape;
    let (len, stride, lines) = match axis {
        0 => (nz, ny * nx, ny * nx),
        1 => (ny, nx, nz * nx),
        _ => (nx, 1, nz * ny),
    };
    let mut out = vec![false; bits.len()];
    for line in 0..lines {
        let base = match axis {
            0 => line,
            1 => (line / nx) * (ny * nx) + line % nx,
            _ => line * nx,
        };
        let mut inside = 0usize;
        // prime the window [-radius, radius) ahead of position 0
        for k in 0..radius.min(len) {
            if bits[base + k * stride] {
                inside += 1;
            }
        }
        for i in 0..len {
            if i + radius < len && bits[base + (i + radius) * stride] {
                inside += 1;
            }
            if i > radius && bits[base + (i - radius - 1) * stride] {
                inside -= 1;
            }
            out[base + i * stride] = inside > 0;
        }
    }
    out
}

/// Sliding-window AND along one axis. `pad` is the value assumed outside the
/// grid: `false` gives the usual zero-padded erosion, `true` the variant used
/// inside closing so that closing stays extensive at the borders.
fn erode_axis(shape: Shape3, bits: &[bool], axis: usize, radius: usize, pad: bool) -> Vec<bool> {
    if radius == 0 || shape[axis] == 1 {
        return bits.to_vec();
    }
    let [nz, ny, nx] = shape;
    let (len, stride, lines) = match axis {
        0 => (nz, ny * nx, ny * nx),
        1 => (ny, nx, nz * nx),
        _ => (nx, 1, nz * ny),
    };
    let mut out = vec![false; bits.len()];
    for line in 0..lines {
        let base = match axis {
            0 => line,
            1 => (line / nx) * (ny * nx) + line % nx,
            _ => line * nx,
        };
        let mut unset = 0usize;
        for k in 0..radius.min(len) {
            if !bits[base + k * stride] {
                unset += 1;
            }
        }
        for i in 0..len {
            if i + radius < len && !bits[base + (i + radius) * stride] {
                unset += 1;
            }
            if i > radius && !bits[base + (i - radius - 1) * stride] {
                unset -= 1;
            }
            let clipped = (i < radius || i + radius >= len) && !pad;
            out[base + i * stride] = unset == 0 && !clipped;
        }
    }
    out
}

pub(crate) fn raw_dilate(shape: Shape3, bits: &[bool], radius: usize) -> Vec<bool> {
    let a = dilate_axis(shape, bits, 0, radius);
    let b = dilate_axis(shape, &a, 1, radius);
    dilate_axis(shape, &b, 2, radius)
}

pub(crate) fn raw_erode(shape: Shape3, bits: &[bool], radius: usize, pad: bool) -> Vec<bool> {
    let a = erode_axis(shape, bits, 0, radius, pad);
    let b = erode_axis(shape, &a, 1, radius, pad);
    erode_axis(shape, &b, 2, radius, pad)
}

pub(crate) fn raw_close(shape: Shape3, bits: &[bool], radius: usize) -> Vec<bool> {
    raw_erode(shape, &raw_dilate(shape, bits, radius), radius, true)
}

pub(crate) fn raw_open(shape: Shape3, bits: &[bool], radius: usize) -> Vec<bool> {
    raw_dilate(shape, &raw_erode(shape, bits, radius, false), radius)
}

/// Dilate with an axis-aligned box of side `2*radius + 1`.
pub fn binary_dilate(mask: &Mask3D, radius: usize) -> Mask3D {
    Mask3D::from_bits(mask.shape(), raw_dilate(mask.shape(), mask.bits(), radius)).unwrap()
}

/// Zero-padded erosion with an axis-aligned box of side `2*radius + 1`.
pub fn binary_erode(mask: &Mask3D, radius: usize) -> Mask3D {
    Mask3D::from_bits(
        mask.shape(),
        raw_erode(mask.shape(), mask.bits(), radius, false),
    )
    .unwrap()
}

/// Closing: erosion of the dilation. Extensive and idempotent.
pub fn binary_close(mask: &Mask3D, radius: usize) -> Mask3D {
    Mask3D::from_bits(mask.shape(), raw_close(mask.shape(), mask.bits(), radius)).unwrap()
}

/// Opening: dilation of the erosion. Anti-extensive and idempotent.
pub fn binary_open(mask: &Mask3D, radius: usize) -> Mask3D {
    Mask3D::from_bits(mask.shape(), raw_open(mask.shape(), mask.bits(), radius)).unwrap()
}

pub(crate) fn raw_remove_small(
    shape: Shape3,
    bits: &[bool],
    min_count: usize,
    connectivity: Connectivity,
) -> Vec<bool> {
    if min_count == 0 {
        return bits.to_vec();
    }
    let (labels, count) = raw_connected_components(shape, bits, connectivity);
    let mut sizes = vec![0usize; count + 1];
    for &l in &labels {
        if l > 0 {
            sizes[l as usize] += 1;
        }
    }
    labels
        .iter()
        .map(|&l| l > 0 && sizes[l as usize] >= min_count)
        .collect()
}

/// Drop components with fewer than `min_voxels` voxels (full connectivity).
pub fn remove_small_components(mask: &Mask3D, min_voxels: usize) -> Mask3D {
    Mask3D::from_bits(
        mask.shape(),
        raw_remove_small(mask.shape(), mask.bits(), min_voxels, Connectivity::Full),
    )
    .unwrap()
}

/// Binned value counts with explicit edges.
#[derive(Debug, Clone)]
pub struct Histogram {
    bin_edges: Vec<f64>,
    counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bin_edges: Vec<f64>, counts: Vec<u64>) -> Self {
        assert!(
            bin_edges.len() == counts.len() + 1,
            "need one more edge than bins"
        );
        assert!(
            bin_edges.windows(2).all(|w| w[0] < w[1]),
            "edges must increase"
        );
        Self { bin_edges, counts }
    }

    /// Uniform binning over the sample range. Samples equal to the maximum
    /// fall into the last bin; a constant sample set yields a single bin.
    pub fn from_samples(samples: &[f64], bins: usize) -> Self {
        assert!(bins >= 1 && !samples.is_empty());
        let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if min == max {
            return Self::new(vec![min, min + 1.0], vec![samples.len() as u64]);
        }
        let width = (max - min) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| min + width * i as f64).collect();
        let mut counts = vec![0u64; bins];
        for &v in samples {
            let bin = (((v - min) / width) as usize).min(bins - 1);
            counts[bin] += 1;
        }
        Self::new(edges, counts)
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    fn centers(&self) -> Vec<f64> {
        self.bin_edges
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }
}

/// Exhaustive between-class-variance maximization over all bin-edge splits;
/// ties resolve to the lowest threshold.
pub fn otsu_threshold(h: &Histogram) -> Result<f64, MorphError> {
    let nonempty = h.counts.iter().filter(|&&c| c > 0).count();
    if nonempty < 2 {
        return Err(MorphError::DegenerateHistogram);
    }
    let centers = h.centers();
    let total: f64 = h.counts.iter().map(|&c| c as f64).sum();
    let total_sum: f64 = h
        .counts
        .iter()
        .zip(&centers)
        .map(|(&c, &m)| c as f64 * m)
        .sum();
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    let mut best = f64::NEG_INFINITY;
    let mut best_edge = h.bin_edges[1];
    for t in 1..h.counts.len() {
        w0 += h.counts[t - 1] as f64;
        sum0 += h.counts[t - 1] as f64 * centers[t - 1];
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (total_sum - sum0) / w1;
        let variance = w0 * w1 * (m0 - m1) * (m0 - m1);
        if variance > best {
            best = variance;
            best_edge = h.bin_edges[t];
        }
    }
    Ok(best_edge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn mask(shape: Shape3, set: &[(usize, usize, usize)]) -> Mask3D {
        let mut m = Mask3D::empty(shape);
        for &(z, y, x) in set {
            m.set(z, y, x, true);
        }
        m
    }

    #[test]
    fn two_isolated_voxels_are_two_components() {
        let m = mask([3, 3, 3], &[(0, 0, 0), (2, 2, 2)]);
        assert_eq!(connected_components(&m, Connectivity::Face).count, 2);
    }

    #[test]
    fn diagonal_voxels_depend_on_connectivity() {
        // single-slice grid, so Face = 4-connectivity and Full = 8
        let m = mask([1, 2, 2], &[(0, 0, 0), (0, 1, 1)]);
        assert_eq!(connected_components(&m, Connectivity::Face).count, 2);
        assert_eq!(connected_components(&m, Connectivity::Full).count, 1);
    }

    /// Slow oracle: grow each component by repeated full scans.
    fn flood_fill_oracle(shape: Shape3, bits: &[bool], conn: Connectivity) -> Vec<u32> {
        let [nz, ny, nx] = shape;
        let offsets = neighbor_offsets(conn);
        let mut labels = vec![0u32; bits.len()];
        let mut next = 0u32;
        for start in 0..bits.len() {
            if !bits[start] || labels[start] != 0 {
                continue;
            }
            next += 1;
            labels[start] = next;
            loop {
                let mut changed = false;
                for i in 0..bits.len() {
                    if labels[i] != next {
                        continue;
                    }
                    let x = i % nx;
                    let y = (i / nx) % ny;
                    let z = i / (nx * ny);
                    for off in &offsets {
                        let (zz, yy, xx) = (
                            z as isize + off[0],
                            y as isize + off[1],
                            x as isize + off[2],
                        );
                        if zz < 0 || yy < 0 || xx < 0 {
                            continue;
                        }
                        let (zz, yy, xx) = (zz as usize, yy as usize, xx as usize);
                        if zz >= nz || yy >= ny || xx >= nx {
                            continue;
                        }
                        let j = (zz * ny + yy) * nx + xx;
                        if bits[j] && labels[j] == 0 {
                            labels[j] = next;
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
        }
        labels
    }

    #[test]
    fn random_masks_match_flood_fill_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..15 {
            let bits: Vec<bool> = (0..512).map(|_| rng.gen_bool(0.35)).collect();
            let m = Mask3D::from_bits([8, 8, 8], bits.clone()).unwrap();
            for conn in [Connectivity::Face, Connectivity::Full] {
                let got = connected_components(&m, conn);
                let want = flood_fill_oracle([8, 8, 8], &bits, conn);
                assert_eq!(got.labels, want);
            }
        }
    }

    #[test]
    fn largest_component_prefers_bigger_blob() {
        let mut m = Mask3D::empty([4, 4, 8]);
        for x in 0..5 {
            m.set(0, 0, x, true); // 5-voxel blob
            if x < 2 {
                m.set(3, 3, x, true); // 2-voxel blob
            }
        }
        let largest = largest_component(&m).unwrap();
        assert_eq!(largest.count(), 5);
        assert!(largest.get(0, 0, 0));
    }

    #[test]
    fn largest_component_single_voxel_identity() {
        let m = mask([2, 2, 2], &[(1, 1, 1)]);
        assert_eq!(largest_component(&m).unwrap(), m);
    }

    #[test]
    fn largest_component_tie_takes_scan_order_first() {
        let m = mask([1, 1, 8], &[(0, 0, 6), (0, 0, 7), (0, 0, 0), (0, 0, 1)]);
        let largest = largest_component(&m).unwrap();
        assert!(largest.get(0, 0, 0) && largest.get(0, 0, 1));
        assert_eq!(largest.count(), 2);
    }

    #[test]
    fn largest_component_empty_mask_errors() {
        assert!(matches!(
            largest_component(&Mask3D::empty([2, 2, 2])),
            Err(MorphError::EmptyMask)
        ));
    }

    #[test]
    fn radius_zero_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let bits: Vec<bool> = (0..125).map(|_| rng.gen_bool(0.4)).collect();
        let m = Mask3D::from_bits([5, 5, 5], bits).unwrap();
        assert_eq!(binary_close(&m, 0), m);
        assert_eq!(binary_open(&m, 0), m);
        assert_eq!(remove_small_components(&m, 0), m);
    }

    #[test]
    fn closing_fills_two_voxel_gap_on_strip() {
        // hand-derived on a 1x1x5 strip: dilation by 1 joins, erosion keeps
        // the bridge voxel set
        let m = mask([1, 1, 5], &[(0, 0, 1), (0, 0, 3)]);
        let closed = binary_close(&m, 1);
        assert!(closed.get(0, 0, 2));
        assert!(m.is_subset_of(&closed));
    }

    #[test]
    fn single_slice_grids_use_in_plane_morphology() {
        // a [1, h, w] grid behaves as 2D: erosion must not wipe the slice
        let blob = Mask3D::from_fn([1, 7, 7], |_, y, x| {
            (1..6).contains(&y) && (1..6).contains(&x)
        });
        let eroded = binary_erode(&blob, 1);
        assert_eq!(eroded.count(), 9, "5x5 square erodes to 3x3 in-plane");
        let opened = binary_open(&blob, 1);
        assert_eq!(opened, blob, "opening keeps a box larger than the element");
    }

    #[test]
    fn remove_small_drops_isolated_voxel() {
        let m = mask([3, 3, 3], &[(1, 1, 1)]);
        assert!(remove_small_components(&m, 2).is_empty());
    }

    #[test]
    fn otsu_ties_resolve_to_lowest_edge() {
        let h = Histogram::new(vec![0.0, 1.0, 2.0, 3.0], vec![3, 0, 3]);
        assert_eq!(otsu_threshold(&h).unwrap(), 1.0);
    }

    #[test]
    fn otsu_single_bin_is_degenerate() {
        let h = Histogram::new(vec![0.0, 1.0, 2.0], vec![9, 0]);
        assert!(matches!(
            otsu_threshold(&h),
            Err(MorphError::DegenerateHistogram)
        ));
    }

    /// Direct argmax over every split, recomputing means from scratch.
    fn otsu_oracle(h: &Histogram) -> f64 {
        let centers: Vec<f64> = h
            .bin_edges()
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect();
        let mut best = f64::NEG_INFINITY;
        let mut edge = f64::NAN;
        for t in 1..h.counts().len() {
            let w0: f64 = h.counts()[..t].iter().map(|&c| c as f64).sum();
            let w1: f64 = h.counts()[t..].iter().map(|&c| c as f64).sum();
            if w0 == 0.0 || w1 == 0.0 {
                continue;
            }
            let m0: f64 = h.counts()[..t]
                .iter()
                .zip(&centers[..t])
                .map(|(&c, &m)| c as f64 * m)
                .sum::<f64>()
                / w0;
            let m1: f64 = h.counts()[t..]
                .iter()
                .zip(&centers[t..])
                .map(|(&c, &m)| c as f64 * m)
                .sum::<f64>()
                / w1;
            let v = w0 * w1 * (m0 - m1) * (m0 - m1);
            if v > best {
                best = v;
                edge = h.bin_edges()[t];
            }
        }
        edge
    }

    #[test]
    fn otsu_matches_exhaustive_oracle_on_random_histograms() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let counts: Vec<u64> = (0..32).map(|_| rng.gen_range(0..40)).collect();
            if counts.iter().filter(|&&c| c > 0).count() < 2 {
                continue;
            }
            let edges: Vec<f64> = (0..=32).map(|i| i as f64 * 0.5).collect();
            let h = Histogram::new(edges, counts);
            assert_eq!(otsu_threshold(&h).unwrap(), otsu_oracle(&h));
        }
    }

    #[test]
    fn otsu_invariant_under_count_scaling() {
        let h = Histogram::new(
            (0..=16).map(|i| i as f64).collect(),
            vec![5, 1, 0, 2, 9, 9, 1, 0, 0, 4, 4, 2, 7, 0, 1, 3],
        );
        let scaled = Histogram::new(
            h.bin_edges().to_vec(),
            h.counts().iter().map(|&c| c * 7).collect(),
        );
        assert_eq!(
            otsu_threshold(&h).unwrap(),
            otsu_threshold(&scaled).unwrap()
        );
    }

    proptest! {
        #[test]
        fn components_partition_the_mask(bits in proptest::collection::vec(any::<bool>(), 64)) {
            let m = Mask3D::from_bits([4, 4, 4], bits).unwrap();
            let cc = connected_components(&m, Connectivity::Full);
            let mut union = Mask3D::empty([4, 4, 4]);
            for id in 1..=cc.count {
                let comp = cc.component(id as u32);
                prop_assert!(comp.intersect(&union).is_empty());
                union.union_in_place(&comp);
            }
            prop_assert_eq!(union, m);
        }

        #[test]
        fn closing_extensive_opening_anti_extensive_both_idempotent(
            bits in proptest::collection::vec(any::<bool>(), 64),
            radius in 0usize..3,
        ) {
            let m = Mask3D::from_bits([4, 4, 4], bits).unwrap();
            let closed = binary_close(&m, radius);
            prop_assert!(m.is_subset_of(&closed));
            prop_assert_eq!(binary_close(&closed, radius), closed.clone());
            let opened = binary_open(&m, radius);
            prop_assert!(opened.is_subset_of(&m));
            prop_assert_eq!(binary_open(&opened, radius), opened.clone());
        }

        #[test]
        fn largest_component_is_subset_and_connected(
            bits in proptest::collection::vec(any::<bool>(), 64),
        ) {
            let m = Mask3D::from_bits([4, 4, 4], bits).unwrap();
            prop_assume!(!m.is_empty());
            let largest = largest_component(&m).unwrap();
            prop_assert!(largest.is_subset_of(&m));
            prop_assert_eq!(connected_components(&largest, Connectivity::Full).count, 1);
        }
    }
}
