//! Boundary extraction: the surface of a labeled region is the set of its
//! voxels with at least one 6-neighbor outside the region (voxels on the
//! volume border always qualify), expressed as physical points.

use crate::dataset::LabelVolume;

/// Physical 3D points (mm) of the boundary voxels of one labeled region.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceVoxelSet {
    pub points: Vec<[f64; 3]>,
}

impl SurfaceVoxelSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Collects the surface of `label` in physical coordinates. An absent label
/// yields an empty set; a nonempty region always yields a nonempty surface.
pub fn extract_surface(labels: &LabelVolume, label: u8) -> SurfaceVoxelSet {
    let geometry = labels.geometry();
    let dims = geometry.extents;
    let mut points = Vec::new();
    for z in 0..dims.d {
        for y in 0..dims.h {
            for x in 0..dims.w {
                if labels.get(z, y, x) != label {
                    continue;
                }
                let exposed = z == 0
                    || labels.get(z - 1, y, x) != label
                    || z + 1 == dims.d
                    || labels.get(z + 1, y, x) != label
                    || y == 0
                    || labels.get(z, y - 1, x) != label
                    || y + 1 == dims.h
                    || labels.get(z, y + 1, x) != label
                    || x == 0
                    || labels.get(z, y, x - 1) != label
                    || x + 1 == dims.w
                    || labels.get(z, y, x + 1) != label;
                if exposed {
                    points.push(geometry.voxel_center_mm(z, y, x));
                }
            }
        }
    }
    SurfaceVoxelSet { points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dims3;
    use crate::dataset::Geometry;

    fn volume_with_cube(
        extents: (usize, usize, usize),
        lo: usize,
        hi: usize,
        label: u8,
    ) -> LabelVolume {
        let g = Geometry::new(
            Dims3::new(extents.0, extents.1, extents.2),
            [1.0; 3],
            [0.0; 3],
        )
        .unwrap();
        let mut v = LabelVolume::zeros(g);
        for z in lo..hi {
            for y in lo..hi {
                for x in lo..hi {
                    v.set(z, y, x, label);
                }
            }
        }
        v
    }

    #[test]
    fn single_voxel_is_its_own_surface() {
        let g = Geometry::new(Dims3::new(4, 4, 4), [2.0, 1.0, 0.5], [10.0, -3.0, 0.0]).unwrap();
        let mut v = LabelVolume::zeros(g);
        v.set(1, 2, 3, 5);
        let surface = extract_surface(&v, 5);
        assert_eq!(surface.points, vec![g.voxel_center_mm(1, 2, 3)]);
    }

    #[test]
    fn solid_cube_sheds_its_interior() {
        // A 5³ cube has 5³ − 3³ = 98 boundary voxels.
        let v = volume_with_cube((7, 7, 7), 1, 6, 1);
        let surface = extract_surface(&v, 1);
        assert_eq!(surface.len(), 98);
        // The cube center is interior and must not appear.
        let g = v.geometry();
        assert!(!surface.points.contains(&g.voxel_center_mm(3, 3, 3)));
    }

    #[test]
    fn volume_border_counts_as_exposed() {
        // Filling the whole volume leaves exactly the outer shell.
        let v = volume_with_cube((4, 5, 6), 0, 4, 2); // touches the z border
        let surface = extract_surface(&v, 2);
        // The 4×4×4 block has a 2×2×2 interior, so 56 boundary voxels —
        // the z = 0 and z = 3 faces are exposed by the volume border alone.
        let mut expected = 0;
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    let interior = z > 0 && z < 3 && y > 0 && y < 3 && x > 0 && x < 3;
                    if !interior {
                        expected += 1;
                    }
                }
            }
        }
        assert_eq!(surface.len(), expected);
    }

    #[test]
    fn absent_label_yields_empty_set() {
        let v = volume_with_cube((4, 4, 4), 1, 3, 1);
        assert!(extract_surface(&v, 3).is_empty());
        assert!(!extract_surface(&v, 1).is_empty());
    }

    #[test]
    fn anisotropic_spacing_reaches_the_points() {
        let g = Geometry::new(Dims3::new(3, 3, 3), [2.0, 3.0, 5.0], [1.0, 1.0, 1.0]).unwrap();
        let mut v = LabelVolume::zeros(g);
        v.set(2, 1, 0, 1);
        let surface = extract_surface(&v, 1);
        assert_eq!(surface.points, vec![[1.0 + 4.0, 1.0 + 3.0, 1.0]]);
    }
}
