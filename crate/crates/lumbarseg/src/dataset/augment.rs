//! Training-time augmentations: global gray-value transforms, smooth elastic
//! deformations applied identically to image and labels, and bounding-box
//! jitter for localization robustness.
//!
//! Every function is a pure function of its inputs and the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BoundingBox3D, DataError, LabelVolume, Volume};

fn check_range(name: &str, range: [f64; 2]) -> Result<(), DataError> {
    if !range[0].is_finite() || !range[1].is_finite() || range[0] > range[1] {
        return Err(DataError::Invalid(format!(
            "{name} range [{}, {}] must be finite and ordered",
            range[0], range[1]
        )));
    }
    Ok(())
}

/// Applies one random global affine intensity transform
/// `v ↦ scale · v + shift` with `scale` and `shift` drawn uniformly from the
/// given ranges. Geometry is unchanged; ranges `[1,1]` and `[0,0]` give the
/// identity.
pub fn gray_value_augment(
    volume: &Volume,
    scale_range: [f64; 2],
    shift_range: [f64; 2],
    seed: u64,
) -> Result<Volume, DataError> {
    check_range("scale", scale_range)?;
    check_range("shift", shift_range)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = rng.gen_range(scale_range[0]..=scale_range[1]);
    let shift = rng.gen_range(shift_range[0]..=shift_range[1]);
    let mut out = volume.clone();
    for v in out.data_mut() {
        *v = (scale * *v as f64 + shift) as f32;
    }
    Ok(out)
}

/// Per-axis control-point lattice for a smooth dense displacement field.
struct ControlField {
    counts: [usize; 3],
    spacing: f64,
    /// Displacement vectors, one [dz, dy, dx] per control point, stored in
    /// (z, y, x)-major order.
    vectors: Vec<[f64; 3]>,
}

impl ControlField {
    fn random(
        extents: [usize; 3],
        grid_spacing: usize,
        amplitude: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let spacing = grid_spacing as f64;
        let counts = [
            extents[0].div_ceil(grid_spacing) + 1,
            extents[1].div_ceil(grid_spacing) + 1,
            extents[2].div_ceil(grid_spacing) + 1,
        ];
        let mut vectors = Vec::with_capacity(counts[0] * counts[1] * counts[2]);
        for _ in 0..counts[0] * counts[1] * counts[2] {
            vectors.push([
                rng.gen_range(-amplitude..=amplitude),
                rng.gen_range(-amplitude..=amplitude),
                rng.gen_range(-amplitude..=amplitude),
            ]);
        }
        Self {
            counts,
            spacing,
            vectors,
        }
    }

    /// Trilinear interpolation of the control vectors at voxel (z, y, x).
    fn displacement(&self, z: usize, y: usize, x: usize) -> [f64; 3] {
        let pos = [
            z as f64 / self.spacing,
            y as f64 / self.spacing,
            x as f64 / self.spacing,
        ];
        let mut cell = [0usize; 3];
        let mut frac = [0f64; 3];
        for axis in 0..3 {
            let base = pos[axis].floor();
            cell[axis] = (base as usize).min(self.counts[axis] - 2);
            frac[axis] = pos[axis] - cell[axis] as f64;
        }
        let mut out = [0.0; 3];
        for (dz, wz) in [(0usize, 1.0 - frac[0]), (1, frac[0])] {
            for (dy, wy) in [(0usize, 1.0 - frac[1]), (1, frac[1])] {
                for (dx, wx) in [(0usize, 1.0 - frac[2]), (1, frac[2])] {
                    let w = wz * wy * wx;
                    if w == 0.0 {
                        continue;
                    }
                    let idx = ((cell[0] + dz) * self.counts[1] + (cell[1] + dy))
                        * self.counts[2]
                        + (cell[2] + dx);
                    let v = self.vectors[idx];
                    out[0] += w * v[0];
                    out[1] += w * v[1];
                    out[2] += w * v[2];
                }
            }
        }
        out
    }
}

fn sample_trilinear(volume: &Volume, p: [f64; 3]) -> f32 {
    let e = volume.extents().to_vec();
    let clamp = |v: f64, n: usize| v.max(0.0).min((n - 1) as f64);
    let p = [clamp(p[0], e[0]), clamp(p[1], e[1]), clamp(p[2], e[2])];
    let mut base = [0usize; 3];
    let mut frac = [0f64; 3];
    for axis in 0..3 {
        let b = p[axis].floor();
        base[axis] = (b as usize).min(e[axis].saturating_sub(2));
        frac[axis] = p[axis] - base[axis] as f64;
    }
    let mut acc = 0.0f64;
    for (dz, wz) in [(0usize, 1.0 - frac[0]), (1, frac[0])] {
        for (dy, wy) in [(0usize, 1.0 - frac[1]), (1, frac[1])] {
            for (dx, wx) in [(0usize, 1.0 - frac[2]), (1, frac[2])] {
                let w = wz * wy * wx;
                if w == 0.0 {
                    continue;
                }
                let z = (base[0] + dz).min(e[0] - 1);
                let y = (base[1] + dy).min(e[1] - 1);
                let x = (base[2] + dx).min(e[2] - 1);
                acc += w * volume.get(z, y, x) as f64;
            }
        }
    }
    acc as f32
}

fn sample_nearest(labels: &LabelVolume, p: [f64; 3]) -> u8 {
    let e = labels.extents().to_vec();
    let idx = |v: f64, n: usize| (v.round().max(0.0) as usize).min(n - 1);
    labels.get(idx(p[0], e[0]), idx(p[1], e[1]), idx(p[2], e[2]))
}

/// Warps image and labels with one shared smooth random displacement field.
///
/// Displacement vectors are drawn per control-grid point (spacing
/// `grid_spacing` voxels, amplitude `amplitude` voxels per axis) and
/// upsampled trilinearly to every voxel. The output at voxel `p` samples the
/// input at `p + d(p)` — trilinearly for intensities, nearest-neighbor for
/// labels — with clamp-to-edge behavior, so the label alphabet is preserved
/// exactly. Amplitude 0 is the identity.
pub fn elastic_deform(
    volume: &Volume,
    labels: &LabelVolume,
    grid_spacing: usize,
    amplitude: f64,
    seed: u64,
) -> Result<(Volume, LabelVolume), DataError> {
    if volume.geometry() != labels.geometry() {
        return Err(DataError::Geometry(
            "image and label geometries differ".into(),
        ));
    }
    if grid_spacing == 0 {
        return Err(DataError::Invalid("grid spacing must be at least 1".into()));
    }
    if !amplitude.is_finite() || amplitude < 0.0 {
        return Err(DataError::Invalid(format!(
            "deformation amplitude must be non-negative and finite, got {amplitude}"
        )));
    }
    let e = volume.extents().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = ControlField::random([e[0], e[1], e[2]], grid_spacing, amplitude, &mut rng);
    let mut out_volume = Volume::constant(volume.geometry(), 0.0);
    let mut out_labels = LabelVolume::zeros(labels.geometry());
    for z in 0..e[0] {
        for y in 0..e[1] {
            for x in 0..e[2] {
                let d = field.displacement(z, y, x);
                let p = [z as f64 + d[0], y as f64 + d[1], x as f64 + d[2]];
                out_volume.set(z, y, x, sample_trilinear(volume, p));
                out_labels.set(z, y, x, sample_nearest(labels, p));
            }
        }
    }
    Ok((out_volume, out_labels))
}

/// Jitters each box corner coordinate independently by a uniform draw within
/// `±jitter_fraction` of the box size along that axis. The fraction must stay
/// below 0.5 so the jittered corners cannot cross; fraction 0 is the
/// identity.
pub fn roi_augment(
    bbox: &BoundingBox3D,
    jitter_fraction: f64,
    seed: u64,
) -> Result<BoundingBox3D, DataError> {
    if !jitter_fraction.is_finite() || !(0.0..0.5).contains(&jitter_fraction) {
        return Err(DataError::Invalid(format!(
            "jitter fraction must lie in [0, 0.5), got {jitter_fraction}"
        )));
    }
    if jitter_fraction == 0.0 {
        return Ok(*bbox);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut low = bbox.corner_low();
    let mut high = bbox.corner_high();
    for axis in 0..3 {
        let span = high[axis] - low[axis];
        let limit = jitter_fraction * span;
        low[axis] += rng.gen_range(-limit..=limit);
        high[axis] += rng.gen_range(-limit..=limit);
    }
    BoundingBox3D::from_corners(low, high)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dims3;
    use crate::dataset::{gen_phantom, Geometry, PhantomSpec};

    fn small_pair() -> (Volume, LabelVolume) {
        let geometry = Geometry::new(Dims3::new(9, 10, 11), [1.0; 3], [0.0; 3]).unwrap();
        let mut volume = Volume::constant(geometry, 0.0);
        let mut labels = LabelVolume::zeros(geometry);
        for z in 0..9 {
            for y in 0..10 {
                for x in 0..11 {
                    volume.set(z, y, x, (z * 110 + y * 11 + x) as f32);
                    labels.set(z, y, x, ((z + y + x) % 6) as u8);
                }
            }
        }
        (volume, labels)
    }

    #[test]
    fn unit_gray_ranges_are_identity() {
        let (volume, _) = small_pair();
        let out = gray_value_augment(&volume, [1.0, 1.0], [0.0, 0.0], 3).unwrap();
        assert_eq!(out.data(), volume.data());
    }

    #[test]
    fn gray_augment_is_affine_and_deterministic() {
        let (volume, _) = small_pair();
        let a = gray_value_augment(&volume, [0.8, 1.2], [-0.1, 0.1], 7).unwrap();
        let b = gray_value_augment(&volume, [0.8, 1.2], [-0.1, 0.1], 7).unwrap();
        assert_eq!(a.data(), b.data());
        // An affine map sends the two known values consistently.
        let v0 = volume.get(0, 0, 0) as f64;
        let v1 = volume.get(8, 9, 10) as f64;
        let a0 = a.get(0, 0, 0) as f64;
        let a1 = a.get(8, 9, 10) as f64;
        let scale = (a1 - a0) / (v1 - v0);
        assert!((0.8..=1.2).contains(&scale));
        let shift = a0 - scale * v0;
        assert!((-0.11..=0.11).contains(&shift));
    }

    #[test]
    fn inverted_range_is_rejected() {
        let (volume, _) = small_pair();
        assert!(gray_value_augment(&volume, [1.2, 0.8], [0.0, 0.0], 0).is_err());
    }

    #[test]
    fn zero_amplitude_deformation_is_identity() {
        let (volume, labels) = small_pair();
        let (v, l) = elastic_deform(&volume, &labels, 8, 0.0, 5).unwrap();
        assert_eq!(v.data(), volume.data());
        assert_eq!(l.data(), labels.data());
    }

    #[test]
    fn deformation_preserves_label_alphabet_and_extents() {
        let (volume, labels, _) = gen_phantom(&PhantomSpec {
            seed: 21,
            ..PhantomSpec::default()
        })
        .unwrap();
        let (v, l) = elastic_deform(&volume, &labels, 8, 2.0, 13).unwrap();
        assert_eq!(v.extents(), volume.extents());
        assert_eq!(l.extents(), labels.extents());
        assert_ne!(v.data(), volume.data());
        let before = labels.present_labels();
        for value in l.present_labels() {
            assert!(value == 0 || before.contains(&value));
        }
    }

    #[test]
    fn deformation_is_deterministic_per_seed() {
        let (volume, labels) = small_pair();
        let (v1, l1) = elastic_deform(&volume, &labels, 4, 1.5, 2).unwrap();
        let (v2, l2) = elastic_deform(&volume, &labels, 4, 1.5, 2).unwrap();
        let (v3, _) = elastic_deform(&volume, &labels, 4, 1.5, 3).unwrap();
        assert_eq!(v1.data(), v2.data());
        assert_eq!(l1.data(), l2.data());
        assert_ne!(v1.data(), v3.data());
    }

    #[test]
    fn zero_jitter_keeps_the_box() {
        let bbox = BoundingBox3D::new([1.0, 2.0, 3.0], [4.0, 6.0, 9.0]).unwrap();
        assert_eq!(roi_augment(&bbox, 0.0, 9).unwrap(), bbox);
    }

    #[test]
    fn jittered_box_stays_valid_and_close() {
        let bbox = BoundingBox3D::new([2.0, 2.0, 2.0], [10.0, 12.0, 14.0]).unwrap();
        for seed in 0..50 {
            let out = roi_augment(&bbox, 0.2, seed).unwrap();
            for axis in 0..3 {
                let span = bbox.corner_high()[axis] - bbox.corner_low()[axis];
                assert!(out.corner_low()[axis] < out.corner_high()[axis]);
                assert!((out.corner_low()[axis] - bbox.corner_low()[axis]).abs() <= 0.2 * span);
                assert!(
                    (out.corner_high()[axis] - bbox.corner_high()[axis]).abs() <= 0.2 * span
                );
            }
        }
    }

    #[test]
    fn excessive_jitter_fraction_is_rejected() {
        let bbox = BoundingBox3D::new([0.0; 3], [1.0; 3]).unwrap();
        assert!(roi_augment(&bbox, 0.5, 0).is_err());
        assert!(roi_augment(&bbox, -0.1, 0).is_err());
    }
}
