//! Exact surface-to-surface distances. Nearest-neighbor queries go through
//! a uniform spatial grid with ring-by-ring search, which prunes most pairs
//! but never approximates: results match the all-pairs computation exactly.

use rayon::prelude::*;

use super::surface::SurfaceVoxelSet;

/// Both symmetric surface distances, computed together because they share
/// the per-point nearest-neighbor sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceDistances {
    /// Maximum of all point-to-other-surface distances (mm).
    pub hausdorff_mm: f64,
    /// Mean of the same distances over both directions (mm).
    pub assd_mm: f64,
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dz = a[0] - b[0];
    let dy = a[1] - b[1];
    let dx = a[2] - b[2];
    dz * dz + dy * dy + dx * dx
}

/// Uniform bucket grid over a point set, sized for about one point per cell.
struct PointGrid<'a> {
    points: &'a [[f64; 3]],
    origin: [f64; 3],
    cell: f64,
    dims: [isize; 3],
    buckets: Vec<Vec<u32>>,
}

impl<'a> PointGrid<'a> {
    fn build(points: &'a [[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for i in 0..3 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let largest = (0..3).map(|i| hi[i] - lo[i]).fold(0.0, f64::max);
        let per_axis = (points.len() as f64).cbrt().ceil().max(1.0);
        let cell = if largest > 0.0 { largest / per_axis } else { 1.0 };
        let mut dims = [1isize; 3];
        for i in 0..3 {
            dims[i] = ((hi[i] - lo[i]) / cell).floor() as isize + 1;
        }
        let mut buckets = vec![Vec::new(); (dims[0] * dims[1] * dims[2]) as usize];
        for (i, p) in points.iter().enumerate() {
            let mut c = [0isize; 3];
            for axis in 0..3 {
                let raw = ((p[axis] - lo[axis]) / cell).floor() as isize;
                c[axis] = raw.clamp(0, dims[axis] - 1);
            }
            buckets[((c[0] * dims[1] + c[1]) * dims[2] + c[2]) as usize].push(i as u32);
        }
        Self {
            points,
            origin: lo,
            cell,
            dims,
            buckets,
        }
    }

    fn cell_of(&self, p: [f64; 3]) -> [isize; 3] {
        let mut c = [0isize; 3];
        for i in 0..3 {
            c[i] = ((p[i] - self.origin[i]) / self.cell).floor() as isize;
        }
        c
    }

    fn bucket_index(&self, c: [isize; 3]) -> usize {
        ((c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]) as usize
    }

    /// Exact squared distance from `q` to the nearest stored point.
    ///
    /// Rings of cells are visited outward from `q`'s cell. Every point in a
    /// ring ≥ k+1 cells away is at least k·cell from `q`, so once the best
    /// distance drops below that bound the search is complete.
    fn nearest_dist2(&self, q: [f64; 3]) -> f64 {
        let center = self.cell_of(q);
        let max_ring = (0..3)
            .map(|i| center[i].max(self.dims[i] - 1 - center[i]))
            .max()
            .unwrap_or(0);
        let mut best = f64::INFINITY;
        for ring in 0..=max_ring {
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dz.abs().max(dy.abs()).max(dx.abs()) != ring {
                            continue;
                        }
                        let c = [center[0] + dz, center[1] + dy, center[2] + dx];
                        if (0..3).any(|i| c[i] < 0 || c[i] >= self.dims[i]) {
                            continue;
                        }
                        for &idx in &self.buckets[self.bucket_index(c)] {
                            best = best.min(dist2(q, self.points[idx as usize]));
                        }
                    }
                }
            }
            let bound = ring as f64 * self.cell;
            if best <= bound * bound {
                break;
            }
        }
        best
    }
}

/// All distances from each point of `from` to its nearest point of `to`,
/// in the order of `from`.
fn directed_distances(from: &[[f64; 3]], to: &PointGrid) -> Vec<f64> {
    from.par_iter()
        .map(|p| to.nearest_dist2(*p).sqrt())
        .collect()
}

/// Hausdorff and average symmetric surface distance between two surfaces.
/// `None` when either surface is empty (the region is absent).
pub fn surface_distances(a: &SurfaceVoxelSet, b: &SurfaceVoxelSet) -> Option<SurfaceDistances> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let grid_a = PointGrid::build(&a.points);
    let grid_b = PointGrid::build(&b.points);
    let a_to_b = directed_distances(&a.points, &grid_b);
    let b_to_a = directed_distances(&b.points, &grid_a);
    let max = a_to_b
        .iter()
        .chain(&b_to_a)
        .fold(0.0f64, |acc, d| acc.max(*d));
    let sum: f64 = a_to_b.iter().sum::<f64>() + b_to_a.iter().sum::<f64>();
    Some(SurfaceDistances {
        hausdorff_mm: max,
        assd_mm: sum / (a.len() + b.len()) as f64,
    })
}

/// Maximum symmetric surface distance in mm; `None` when a surface is empty.
pub fn hausdorff(a: &SurfaceVoxelSet, b: &SurfaceVoxelSet) -> Option<f64> {
    surface_distances(a, b).map(|d| d.hausdorff_mm)
}

/// Average symmetric surface distance in mm; `None` when a surface is empty.
pub fn assd(a: &SurfaceVoxelSet, b: &SurfaceVoxelSet) -> Option<f64> {
    surface_distances(a, b).map(|d| d.assd_mm)
}
