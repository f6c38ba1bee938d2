//! Volume data model, file I/O, synthetic phantoms, augmentation, and
//! training-patch sampling.
//!
//! Axis convention throughout: index order is `(z, y, x)` = (depth, height,
//! width), matching the tensor engine's `[C, D, H, W]` layout. Geometry maps
//! voxel index `(z, y, x)` to the physical point `origin_mm + index *
//! spacing_mm` (componentwise), so distances in millimeters survive crops
//! exactly. Bounding boxes live in continuous voxel coordinates and span the
//! half-open region `[corner_low, corner_high)`.

mod augment;
mod io;
mod phantom;
mod patches;

pub use augment::{elastic_deform, gray_value_augment, roi_augment};
pub use io::{load_box, load_labels, load_volume, save_box, save_labels, save_volume};
pub use phantom::{gen_phantom, PhantomSpec};
pub(crate) use phantom::parse_phantom_request;
pub use patches::{
    crop_labels, crop_region, crop_volume, place_labels, sample_training_patches, CropRegion,
};

use crate::autodiff::Dims3;
use thiserror::Error;

/// Highest permitted label value (background 0 plus vertebrae L1..L5).
pub const MAX_LABEL: u8 = 5;

/// Errors from volume construction, file I/O, and geometry operations.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Header {
        path: String,
        line: usize,
        message: String,
    },
    #[error("payload size mismatch in {path}: expected {expected_bytes} bytes, found {actual_bytes}")]
    Payload {
        path: String,
        expected_bytes: usize,
        actual_bytes: usize,
    },
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("geometry error: {0}")]
    Geometry(String),
}

/// Voxel grid placement: extents, per-axis spacing, and physical origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub extents: Dims3,
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
}

impl Geometry {
    pub fn new(
        extents: Dims3,
        spacing_mm: [f64; 3],
        origin_mm: [f64; 3],
    ) -> Result<Self, DataError> {
        if extents.d == 0 || extents.h == 0 || extents.w == 0 {
            return Err(DataError::Invalid(format!(
                "extents must all be at least 1, got {:?}",
                extents.to_vec()
            )));
        }
        if spacing_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(DataError::Invalid(format!(
                "spacing must be strictly positive, got {spacing_mm:?}"
            )));
        }
        if origin_mm.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid(format!(
                "origin must be finite, got {origin_mm:?}"
            )));
        }
        Ok(Self {
            extents,
            spacing_mm,
            origin_mm,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.extents.count()
    }

    /// Physical coordinates (mm) of the center of voxel `(z, y, x)`.
    pub fn voxel_center_mm(&self, z: usize, y: usize, x: usize) -> [f64; 3] {
        [
            self.origin_mm[0] + z as f64 * self.spacing_mm[0],
            self.origin_mm[1] + y as f64 * self.spacing_mm[1],
            self.origin_mm[2] + x as f64 * self.spacing_mm[2],
        ]
    }
}

/// A scalar intensity volume (CT surrogate). Intensities are 32-bit floats,
/// the element type of the on-disk format.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self, DataError> {
        if data.len() != geometry.voxel_count() {
            return Err(DataError::Invalid(format!(
                "intensity count {} does not match extents {:?}",
                data.len(),
                geometry.extents.to_vec()
            )));
        }
        Ok(Self { geometry, data })
    }

    pub fn constant(geometry: Geometry, value: f32) -> Self {
        let n = geometry.voxel_count();
        Self {
            geometry,
            data: vec![value; n],
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn extents(&self) -> Dims3 {
        self.geometry.extents
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.geometry.extents.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, value: f32) {
        let i = self.geometry.extents.index(z, y, x);
        self.data[i] = value;
    }
}

/// A per-voxel label map paired with a [`Volume`]'s geometry. Labels are
/// 0 (background) or 1..=5 (vertebrae L1..L5).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    geometry: Geometry,
    data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(geometry: Geometry, data: Vec<u8>) -> Result<Self, DataError> {
        if data.len() != geometry.voxel_count() {
            return Err(DataError::Invalid(format!(
                "label count {} does not match extents {:?}",
                data.len(),
                geometry.extents.to_vec()
            )));
        }
        if let Some(&bad) = data.iter().find(|&&l| l > MAX_LABEL) {
            return Err(DataError::Invalid(format!(
                "label {bad} exceeds the maximum {MAX_LABEL}"
            )));
        }
        Ok(Self { geometry, data })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        let n = geometry.voxel_count();
        Self {
            geometry,
            data: vec![0; n],
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn extents(&self) -> Dims3 {
        self.geometry.extents
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> u8 {
        self.data[self.geometry.extents.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, label: u8) {
        debug_assert!(label <= MAX_LABEL);
        let i = self.geometry.extents.index(z, y, x);
        self.data[i] = label;
    }

    /// Voxel count per label value 0..=5.
    pub fn label_counts(&self) -> [usize; 6] {
        let mut counts = [0usize; 6];
        for &l in &self.data {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Labels (1..=5) that appear at least once.
    pub fn present_labels(&self) -> Vec<u8> {
        let counts = self.label_counts();
        (1..=MAX_LABEL).filter(|&l| counts[l as usize] > 0).collect()
    }

    /// Collapses every foreground label to 1 (binary task).
    pub fn to_binary(&self) -> LabelVolume {
        LabelVolume {
            geometry: self.geometry,
            data: self.data.iter().map(|&l| u8::from(l != 0)).collect(),
        }
    }
}

/// An axis-aligned box in continuous voxel coordinates spanning the
/// half-open region `[corner_low, corner_high)` per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox3D {
    corner_low: [f64; 3],
    corner_high: [f64; 3],
}

impl BoundingBox3D {
    /// Requires `corner_low < corner_high` on every axis (positive volume).
    pub fn new(corner_low: [f64; 3], corner_high: [f64; 3]) -> Result<Self, DataError> {
        for i in 0..3 {
            if !(corner_low[i] < corner_high[i]) {
                return Err(DataError::Geometry(format!(
                    "box corners not ordered on axis {i}: {corner_low:?} vs {corner_high:?}"
                )));
            }
        }
        Ok(Self {
            corner_low,
            corner_high,
        })
    }

    /// Builds a valid box from two arbitrary corner points by sorting the
    /// coordinates componentwise.
    pub fn from_corners(a: [f64; 3], b: [f64; 3]) -> Result<Self, DataError> {
        let mut low = [0.0; 3];
        let mut high = [0.0; 3];
        for i in 0..3 {
            low[i] = a[i].min(b[i]);
            high[i] = a[i].max(b[i]);
        }
        Self::new(low, high)
    }

    pub fn corner_low(&self) -> [f64; 3] {
        self.corner_low
    }

    pub fn corner_high(&self) -> [f64; 3] {
        self.corner_high
    }

    pub fn volume(&self) -> f64 {
        (0..3)
            .map(|i| self.corner_high[i] - self.corner_low[i])
            .product()
    }

    /// Whether the center of voxel index `(z, y, x)` lies inside the box.
    pub fn contains_index(&self, z: usize, y: usize, x: usize) -> bool {
        let p = [z as f64, y as f64, x as f64];
        (0..3).all(|i| p[i] >= self.corner_low[i] && p[i] < self.corner_high[i])
    }

    /// Flattens to `[low_z, low_y, low_x, high_z, high_y, high_x]`.
    pub fn to_array6(&self) -> [f64; 6] {
        [
            self.corner_low[0],
            self.corner_low[1],
            self.corner_low[2],
            self.corner_high[0],
            self.corner_high[1],
            self.corner_high[2],
        ]
    }

    pub fn from_array6(v: [f64; 6]) -> Result<Self, DataError> {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }

    /// Intersection-over-union with another box.
    pub fn iou(&self, other: &BoundingBox3D) -> f64 {
        crate::autodiff::box_iou(&self.to_array6(), &other.to_array6())
    }

    /// Tight box around all nonzero labels: low corner at the minimum
    /// labeled index, high corner one past the maximum. `None` when no voxel
    /// is labeled.
    pub fn tight_box(labels: &LabelVolume) -> Option<BoundingBox3D> {
        let e = labels.extents();
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for z in 0..e.d {
            for y in 0..e.h {
                for x in 0..e.w {
                    if labels.get(z, y, x) != 0 {
                        any = true;
                        let p = [z, y, x];
                        for i in 0..3 {
                            lo[i] = lo[i].min(p[i]);
                            hi[i] = hi[i].max(p[i]);
                        }
                    }
                }
            }
        }
        if !any {
            return None;
        }
        Some(BoundingBox3D {
            corner_low: [lo[0] as f64, lo[1] as f64, lo[2] as f64],
            corner_high: [hi[0] as f64 + 1.0, hi[1] as f64 + 1.0, hi[2] as f64 + 1.0],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo(d: usize, h: usize, w: usize) -> Geometry {
        Geometry::new(Dims3::new(d, h, w), [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn geometry_rejects_zero_extent_and_bad_spacing() {
        assert!(Geometry::new(Dims3::new(0, 4, 4), [1.0; 3], [0.0; 3]).is_err());
        assert!(Geometry::new(Dims3::new(4, 4, 4), [1.0, 0.0, 1.0], [0.0; 3]).is_err());
        assert!(Geometry::new(Dims3::new(4, 4, 4), [1.0, -2.0, 1.0], [0.0; 3]).is_err());
    }

    #[test]
    fn volume_checks_element_count() {
        assert!(Volume::new(geo(2, 2, 2), vec![0.0; 7]).is_err());
        assert!(Volume::new(geo(2, 2, 2), vec![0.0; 8]).is_ok());
    }

    #[test]
    fn labels_above_five_are_rejected() {
        let mut data = vec![0u8; 8];
        data[3] = 6;
        assert!(LabelVolume::new(geo(2, 2, 2), data).is_err());
    }

    #[test]
    fn tight_box_matches_exhaustive_scan() {
        let mut labels = LabelVolume::zeros(geo(6, 6, 6));
        labels.set(1, 2, 3, 4);
        labels.set(4, 2, 5, 1);
        let b = BoundingBox3D::tight_box(&labels).unwrap();
        assert_eq!(b.corner_low(), [1.0, 2.0, 3.0]);
        assert_eq!(b.corner_high(), [5.0, 3.0, 6.0]);
        // Every labeled voxel is inside the half-open box.
        for z in 0..6 {
            for y in 0..6 {
                for x in 0..6 {
                    if labels.get(z, y, x) != 0 {
                        assert!(b.contains_index(z, y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn empty_labels_have_no_tight_box() {
        let labels = LabelVolume::zeros(geo(3, 3, 3));
        assert!(BoundingBox3D::tight_box(&labels).is_none());
    }

    #[test]
    fn box_iou_of_identical_boxes_is_one() {
        let b = BoundingBox3D::new([0.0, 0.0, 0.0], [2.0, 2.0, 2.0]).unwrap();
        assert!((b.iou(&b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn from_corners_sorts() {
        let b = BoundingBox3D::from_corners([3.0, 0.0, 5.0], [1.0, 2.0, 4.0]).unwrap();
        assert_eq!(b.corner_low(), [1.0, 0.0, 4.0]);
        assert_eq!(b.corner_high(), [3.0, 2.0, 5.0]);
    }

    #[test]
    fn binary_collapse_keeps_geometry() {
        let mut labels = LabelVolume::zeros(geo(2, 2, 2));
        labels.set(0, 0, 0, 3);
        labels.set(1, 1, 1, 5);
        let b = labels.to_binary();
        assert_eq!(b.get(0, 0, 0), 1);
        assert_eq!(b.get(1, 1, 1), 1);
        assert_eq!(b.get(0, 1, 0), 0);
        assert_eq!(b.label_counts()[1], 2);
    }
}
