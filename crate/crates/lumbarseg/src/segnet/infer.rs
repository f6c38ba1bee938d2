//! Overlapped sliding-window inference with probability averaging.

use rayon::prelude::*;

use super::{SegError, SegNetConfig, SegNetModel};
use crate::autodiff::{Dims3, Graph, ParamSet};
use crate::dataset::{Geometry, LabelVolume, Volume};

/// Per-voxel class probabilities over a volume, class-major storage.
#[derive(Debug, Clone)]
pub struct ProbabilityMap {
    geometry: Geometry,
    class_count: usize,
    /// `data[c * voxels + v]` = probability of class `c` at flat voxel `v`.
    data: Vec<f64>,
}

impl ProbabilityMap {
    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// The probability plane of one class, voxel-major.
    pub fn class_plane(&self, class: usize) -> &[f64] {
        let n = self.geometry.voxel_count();
        &self.data[class * n..(class + 1) * n]
    }

    pub fn get(&self, class: usize, z: usize, y: usize, x: usize) -> f64 {
        self.data[class * self.geometry.voxel_count() + self.geometry.extents.index(z, y, x)]
    }

    /// Voxel-wise argmax; ties resolve to the lowest class index.
    pub fn argmax(&self) -> LabelVolume {
        let n = self.geometry.voxel_count();
        let mut labels = LabelVolume::zeros(self.geometry);
        let out = labels.data_mut();
        for v in 0..n {
            let mut best = 0usize;
            let mut best_p = self.data[v];
            for c in 1..self.class_count {
                let p = self.data[c * n + v];
                if p > best_p {
                    best_p = p;
                    best = c;
                }
            }
            out[v] = best as u8;
        }
        labels
    }
}

/// Tile start offsets along one axis: multiples of `stride` while the tile
/// fits, plus a final end-aligned tile. Axes shorter than the patch get a
/// single zero-padded tile at 0.
fn tile_starts(extent: usize, patch: usize, stride: usize) -> Vec<isize> {
    if extent <= patch {
        return vec![0];
    }
    let mut starts = Vec::new();
    let mut s = 0usize;
    while s + patch <= extent {
        starts.push(s as isize);
        s += stride;
    }
    let last = (extent - patch) as isize;
    if *starts.last().expect("at least one tile") != last {
        starts.push(last);
    }
    starts
}

fn extract_tile(volume: &Volume, start: [isize; 3], patch: Dims3) -> Vec<f64> {
    let e = volume.extents().to_vec();
    let mut data = vec![0.0f64; patch.count()];
    let mut i = 0;
    for pz in 0..patch.d as isize {
        let z = start[0] + pz;
        for py in 0..patch.h as isize {
            let y = start[1] + py;
            for px in 0..patch.w as isize {
                let x = start[2] + px;
                if z >= 0
                    && y >= 0
                    && x >= 0
                    && (z as usize) < e[0]
                    && (y as usize) < e[1]
                    && (x as usize) < e[2]
                {
                    data[i] = volume.get(z as usize, y as usize, x as usize) as f64;
                }
                i += 1;
            }
        }
    }
    data
}

/// Tiles `volume` with overlapping patches (stride = patch extent ×
/// `config.stride_fraction`, borders zero-padded), runs the network on each
/// tile, and averages the per-class probabilities over all tiles covering a
/// voxel. The output geometry equals the input geometry and every voxel is
/// covered by at least one tile. Tiles run in parallel but are accumulated
/// in a fixed order, so the result is independent of thread count.
pub fn sliding_window_infer(
    volume: &Volume,
    params: &ParamSet,
    model: &SegNetModel,
    config: &SegNetConfig,
) -> Result<ProbabilityMap, SegError> {
    config.validate()?;
    let patch = config.patch_extents;
    let stride = |extent: usize| {
        (((extent as f64) * config.stride_fraction).round() as usize).max(1)
    };
    let e = volume.extents();
    let starts_z = tile_starts(e.d, patch.d, stride(patch.d));
    let starts_y = tile_starts(e.h, patch.h, stride(patch.h));
    let starts_x = tile_starts(e.w, patch.w, stride(patch.w));
    let mut tiles = Vec::new();
    for &z in &starts_z {
        for &y in &starts_y {
            for &x in &starts_x {
                tiles.push([z, y, x]);
            }
        }
    }

    let tile_probs: Result<Vec<Vec<f64>>, SegError> = tiles
        .par_iter()
        .map(|start| {
            let data = extract_tile(volume, *start, patch);
            let mut graph = Graph::new(false);
            let input = graph.input(1, patch, data)?;
            let logits = model.forward(&mut graph, params, input)?;
            let probs = graph.softmax(logits);
            Ok(graph.value(probs).to_vec())
        })
        .collect();
    let tile_probs = tile_probs?;

    let n = e.count();
    let classes = config.class_count;
    let mut sums = vec![0.0f64; classes * n];
    let mut cover = vec![0u32; n];
    let patch_n = patch.count();
    for (start, probs) in tiles.iter().zip(&tile_probs) {
        for pz in 0..patch.d as isize {
            let z = start[0] + pz;
            if z < 0 || z as usize >= e.d {
                continue;
            }
            for py in 0..patch.h as isize {
                let y = start[1] + py;
                if y < 0 || y as usize >= e.h {
                    continue;
                }
                for px in 0..patch.w as isize {
                    let x = start[2] + px;
                    if x < 0 || x as usize >= e.w {
                        continue;
                    }
                    let pv = ((pz * patch.h as isize + py) * patch.w as isize + px) as usize;
                    let v = e.index(z as usize, y as usize, x as usize);
                    for c in 0..classes {
                        sums[c * n + v] += probs[c * patch_n + pv];
                    }
                    cover[v] += 1;
                }
            }
        }
    }
    for v in 0..n {
        debug_assert!(cover[v] > 0, "voxel {v} uncovered");
        let inv = 1.0 / cover[v] as f64;
        for c in 0..classes {
            sums[c * n + v] *= inv;
        }
    }
    Ok(ProbabilityMap {
        geometry: volume.geometry(),
        class_count: classes,
        data: sums,
    })
}
