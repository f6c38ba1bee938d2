//! Morphological cleanup: small-component removal and cavity filling.
//!
//! Components of one label use 26-connectivity; cavities (background regions
//! with no 6-connected path to the volume border) use 6-connectivity — the
//! standard foreground/background duality that avoids checkerboard
//! artifacts. The operation is idempotent: removal never splits a component
//! and filling only grows surviving components.

use std::collections::VecDeque;

use crate::autodiff::Dims3;
use crate::dataset::LabelVolume;

fn neighbors26(p: usize, dims: Dims3, out: &mut Vec<usize>) {
    out.clear();
    let w = dims.w;
    let hw = dims.h * dims.w;
    let z = p / hw;
    let y = (p % hw) / w;
    let x = p % w;
    for dz in -1isize..=1 {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if dz == 0 && dy == 0 && dx == 0 {
                    continue;
                }
                let (nz, ny, nx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                if nz >= 0
                    && ny >= 0
                    && nx >= 0
                    && (nz as usize) < dims.d
                    && (ny as usize) < dims.h
                    && (nx as usize) < dims.w
                {
                    out.push((nz as usize) * hw + (ny as usize) * w + nx as usize);
                }
            }
        }
    }
}

fn neighbors6(p: usize, dims: Dims3, out: &mut Vec<usize>) {
    out.clear();
    let w = dims.w;
    let hw = dims.h * dims.w;
    let z = p / hw;
    let y = (p % hw) / w;
    let x = p % w;
    if z > 0 {
        out.push(p - hw);
    }
    if z + 1 < dims.d {
        out.push(p + hw);
    }
    if y > 0 {
        out.push(p - w);
    }
    if y + 1 < dims.h {
        out.push(p + w);
    }
    if x > 0 {
        out.push(p - 1);
    }
    if x + 1 < dims.w {
        out.push(p + 1);
    }
}

/// All 26-connected components of each foreground label, as
/// `(label, voxel indices)` lists.
fn foreground_components(data: &[u8], dims: Dims3) -> Vec<(u8, Vec<usize>)> {
    let mut seen = vec![false; data.len()];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    let mut scratch = Vec::with_capacity(26);
    for start in 0..data.len() {
        if data[start] == 0 || seen[start] {
            continue;
        }
        let label = data[start];
        let mut voxels = vec![start];
        seen[start] = true;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            neighbors26(p, dims, &mut scratch);
            for &q in &scratch {
                if !seen[q] && data[q] == label {
                    seen[q] = true;
                    voxels.push(q);
                    queue.push_back(q);
                }
            }
        }
        components.push((label, voxels));
    }
    components
}

/// Size of the largest 26-connected foreground component, scaled by
/// `fraction` and rounded up — the default small-component threshold. A
/// volume with no foreground yields 1.
pub fn min_component_threshold(labels: &LabelVolume, fraction: f64) -> usize {
    let largest = foreground_components(labels.data(), labels.extents())
        .iter()
        .map(|(_, v)| v.len())
        .max()
        .unwrap_or(0);
    ((largest as f64 * fraction).ceil() as usize).max(1)
}

/// Removes 26-connected foreground components smaller than
/// `min_component_voxels`, then fills enclosed background cavities: any
/// background region with no 6-connected path to the volume border whose
/// entire labeled neighborhood carries a single label becomes that label.
pub fn postprocess(labels: &LabelVolume, min_component_voxels: usize) -> LabelVolume {
    let dims = labels.extents();
    let mut data = labels.data().to_vec();

    for (_, voxels) in foreground_components(&data, dims) {
        if voxels.len() < min_component_voxels {
            for v in voxels {
                data[v] = 0;
            }
        }
    }

    // Flood-fill background from the border with 6-connectivity; whatever
    // background remains unreached is enclosed.
    let mut outside = vec![false; data.len()];
    let mut queue = VecDeque::new();
    let mut scratch = Vec::with_capacity(6);
    let border = |p: usize| {
        let w = dims.w;
        let hw = dims.h * dims.w;
        let z = p / hw;
        let y = (p % hw) / w;
        let x = p % w;
        z == 0 || y == 0 || x == 0 || z == dims.d - 1 || y == dims.h - 1 || x == dims.w - 1
    };
    for p in 0..data.len() {
        if data[p] == 0 && border(p) && !outside[p] {
            outside[p] = true;
            queue.push_back(p);
            while let Some(q) = queue.pop_front() {
                neighbors6(q, dims, &mut scratch);
                for &r in &scratch {
                    if data[r] == 0 && !outside[r] {
                        outside[r] = true;
                        queue.push_back(r);
                    }
                }
            }
        }
    }

    // Group enclosed background into 6-connected cavities and fill each one
    // surrounded by exactly one label.
    let mut seen = vec![false; data.len()];
    for start in 0..data.len() {
        if data[start] != 0 || outside[start] || seen[start] {
            continue;
        }
        let mut cavity = vec![start];
        seen[start] = true;
        queue.push_back(start);
        let mut touching: Option<u8> = None;
        let mut uniform = true;
        while let Some(p) = queue.pop_front() {
            neighbors6(p, dims, &mut scratch);
            for &q in &scratch {
                if data[q] == 0 {
                    if !seen[q] && !outside[q] {
                        seen[q] = true;
                        cavity.push(q);
                        queue.push_back(q);
                    }
                } else {
                    match touching {
                        None => touching = Some(data[q]),
                        Some(l) if l != data[q] => uniform = false,
                        _ => {}
                    }
                }
            }
        }
        if let (Some(label), true) = (touching, uniform) {
            for v in cavity {
                data[v] = label;
            }
        }
    }

    let mut out = LabelVolume::zeros(labels.geometry());
    out.data_mut().copy_from_slice(&data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Geometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blank(d: usize, h: usize, w: usize) -> LabelVolume {
        let geometry = Geometry::new(Dims3::new(d, h, w), [1.0; 3], [0.0; 3]).unwrap();
        LabelVolume::zeros(geometry)
    }

    fn fill_block(labels: &mut LabelVolume, lo: [usize; 3], hi: [usize; 3], value: u8) {
        for z in lo[0]..hi[0] {
            for y in lo[1]..hi[1] {
                for x in lo[2]..hi[2] {
                    labels.set(z, y, x, value);
                }
            }
        }
    }

    #[test]
    fn clean_volume_is_unchanged() {
        let mut labels = blank(12, 12, 12);
        fill_block(&mut labels, [2, 2, 2], [9, 9, 9], 3);
        let out = postprocess(&labels, 10);
        assert_eq!(out.data(), labels.data());
    }

    #[test]
    fn small_island_is_removed() {
        let mut labels = blank(16, 16, 16);
        fill_block(&mut labels, [2, 2, 2], [10, 10, 10], 1);
        // A 3-voxel island far from the block.
        labels.set(14, 14, 14, 1);
        labels.set(14, 14, 15, 1);
        labels.set(14, 15, 14, 1);
        let out = postprocess(&labels, 10);
        assert_eq!(out.get(14, 14, 14), 0);
        assert_eq!(out.get(14, 14, 15), 0);
        assert_eq!(out.get(14, 15, 14), 0);
        assert_eq!(out.get(5, 5, 5), 1);
    }

    #[test]
    fn enclosed_cavity_is_filled_with_surrounding_label() {
        let mut labels = blank(12, 12, 12);
        fill_block(&mut labels, [2, 2, 2], [9, 9, 9], 4);
        labels.set(5, 5, 5, 0);
        let out = postprocess(&labels, 1);
        assert_eq!(out.get(5, 5, 5), 4);
    }

    #[test]
    fn cavity_touching_two_labels_is_left_alone() {
        let mut labels = blank(12, 12, 12);
        fill_block(&mut labels, [2, 2, 2], [9, 9, 5], 1);
        fill_block(&mut labels, [2, 2, 5], [9, 9, 9], 2);
        // Carve a pocket straddling the label boundary.
        labels.set(5, 5, 4, 0);
        labels.set(5, 5, 5, 0);
        let out = postprocess(&labels, 1);
        assert_eq!(out.get(5, 5, 4), 0);
        assert_eq!(out.get(5, 5, 5), 0);
    }

    #[test]
    fn background_open_to_border_is_not_filled() {
        let mut labels = blank(10, 10, 10);
        fill_block(&mut labels, [2, 2, 2], [8, 8, 8], 2);
        // Tunnel from the cavity to the border.
        labels.set(5, 5, 5, 0);
        for x in 0..5 {
            labels.set(5, 5, x, 0);
        }
        let out = postprocess(&labels, 1);
        assert_eq!(out.get(5, 5, 5), 0);
    }

    #[test]
    fn postprocess_is_idempotent_on_random_volumes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let mut labels = blank(10, 11, 9);
            for v in labels.data_mut() {
                *v = rng.gen_range(0..=5u8);
            }
            let once = postprocess(&labels, 8);
            let twice = postprocess(&once, 8);
            assert_eq!(once.data(), twice.data());
        }
    }

    #[test]
    fn threshold_scales_with_largest_component() {
        let mut labels = blank(20, 20, 20);
        fill_block(&mut labels, [0, 0, 0], [10, 10, 10], 1); // 1000 voxels
        assert_eq!(min_component_threshold(&labels, 0.01), 10);
        assert_eq!(min_component_threshold(&labels, 0.0), 1);
        let empty = blank(4, 4, 4);
        assert_eq!(min_component_threshold(&empty, 0.01), 1);
    }
}
