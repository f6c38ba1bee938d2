//! Region cropping and random training-patch extraction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BoundingBox3D, DataError, Geometry, LabelVolume, Volume};
use crate::autodiff::Dims3;

/// An axis-aligned voxel-index region, inclusive `lo`, exclusive `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRegion {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl CropRegion {
    pub fn extents(&self) -> Dims3 {
        Dims3::new(
            self.hi[0] - self.lo[0],
            self.hi[1] - self.lo[1],
            self.hi[2] - self.lo[2],
        )
    }
}

/// Expands `bbox` by `margin_voxels` on every side, clamps to the volume
/// bounds, and returns the resulting index region. Fails if the expanded box
/// does not intersect the volume at all.
pub fn crop_region(
    geometry: Geometry,
    bbox: &BoundingBox3D,
    margin_voxels: f64,
) -> Result<CropRegion, DataError> {
    if !margin_voxels.is_finite() || margin_voxels < 0.0 {
        return Err(DataError::Geometry(format!(
            "crop margin must be a non-negative finite voxel count, got {margin_voxels}"
        )));
    }
    let extents = geometry.extents.to_vec();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for axis in 0..3 {
        let low = bbox.corner_low()[axis] - margin_voxels;
        let high = bbox.corner_high()[axis] + margin_voxels;
        let clamped_lo = low.floor().max(0.0) as usize;
        let clamped_hi = (high.ceil().max(0.0) as usize).min(extents[axis]);
        if clamped_lo >= clamped_hi {
            return Err(DataError::Geometry(format!(
                "box [{:?}, {:?}) does not intersect volume extents {:?}",
                bbox.corner_low(),
                bbox.corner_high(),
                extents
            )));
        }
        lo[axis] = clamped_lo;
        hi[axis] = clamped_hi;
    }
    Ok(CropRegion { lo, hi })
}

fn cropped_geometry(source: Geometry, region: &CropRegion) -> Result<Geometry, DataError> {
    let origin = [
        source.origin_mm[0] + region.lo[0] as f64 * source.spacing_mm[0],
        source.origin_mm[1] + region.lo[1] as f64 * source.spacing_mm[1],
        source.origin_mm[2] + region.lo[2] as f64 * source.spacing_mm[2],
    ];
    Geometry::new(region.extents(), source.spacing_mm, origin)
}

/// Copies the voxels of `region` out of `volume`. The cropped origin is
/// shifted so every voxel keeps its physical coordinates.
pub fn crop_volume(volume: &Volume, region: &CropRegion) -> Result<Volume, DataError> {
    check_region(volume.geometry().extents, region)?;
    let geometry = cropped_geometry(volume.geometry(), region)?;
    let mut out = Volume::constant(geometry, 0.0);
    for z in region.lo[0]..region.hi[0] {
        for y in region.lo[1]..region.hi[1] {
            for x in region.lo[2]..region.hi[2] {
                out.set(
                    z - region.lo[0],
                    y - region.lo[1],
                    x - region.lo[2],
                    volume.get(z, y, x),
                );
            }
        }
    }
    Ok(out)
}

/// Label counterpart of [`crop_volume`].
pub fn crop_labels(labels: &LabelVolume, region: &CropRegion) -> Result<LabelVolume, DataError> {
    check_region(labels.geometry().extents, region)?;
    let geometry = cropped_geometry(labels.geometry(), region)?;
    let mut out = LabelVolume::zeros(geometry);
    for z in region.lo[0]..region.hi[0] {
        for y in region.lo[1]..region.hi[1] {
            for x in region.lo[2]..region.hi[2] {
                out.set(
                    z - region.lo[0],
                    y - region.lo[1],
                    x - region.lo[2],
                    labels.get(z, y, x),
                );
            }
        }
    }
    Ok(out)
}

/// Writes `patch` (previously cropped at `region`) back into `target`.
pub fn place_labels(
    target: &mut LabelVolume,
    patch: &LabelVolume,
    region: &CropRegion,
) -> Result<(), DataError> {
    check_region(target.geometry().extents, region)?;
    if patch.extents() != region.extents() {
        return Err(DataError::Geometry(format!(
            "patch extents {:?} do not match region extents {:?}",
            patch.extents().to_vec(),
            region.extents().to_vec()
        )));
    }
    for z in region.lo[0]..region.hi[0] {
        for y in region.lo[1]..region.hi[1] {
            for x in region.lo[2]..region.hi[2] {
                target.set(
                    z,
                    y,
                    x,
                    patch.get(z - region.lo[0], y - region.lo[1], x - region.lo[2]),
                );
            }
        }
    }
    Ok(())
}

fn check_region(extents: Dims3, region: &CropRegion) -> Result<(), DataError> {
    let e = extents.to_vec();
    for axis in 0..3 {
        if region.lo[axis] >= region.hi[axis] || region.hi[axis] > e[axis] {
            return Err(DataError::Geometry(format!(
                "region lo {:?} hi {:?} invalid for extents {:?}",
                region.lo, region.hi, e
            )));
        }
    }
    Ok(())
}

/// Extracts one aligned (image, label) patch pair whose voxel (0,0,0) sits at
/// `start` in the source (which may be negative when the source is smaller
/// than the patch); out-of-range voxels are zero-filled.
fn extract_pair(
    volume: &Volume,
    labels: &LabelVolume,
    patch_extents: Dims3,
    start: [isize; 3],
) -> Result<(Volume, LabelVolume), DataError> {
    let src = volume.geometry();
    let origin = [
        src.origin_mm[0] + start[0] as f64 * src.spacing_mm[0],
        src.origin_mm[1] + start[1] as f64 * src.spacing_mm[1],
        src.origin_mm[2] + start[2] as f64 * src.spacing_mm[2],
    ];
    let geometry = Geometry::new(patch_extents, src.spacing_mm, origin)?;
    let mut image = Volume::constant(geometry, 0.0);
    let mut label = LabelVolume::zeros(geometry);
    let e = src.extents.to_vec();
    for pz in 0..patch_extents.d {
        let sz = start[0] + pz as isize;
        if sz < 0 || sz as usize >= e[0] {
            continue;
        }
        for py in 0..patch_extents.h {
            let sy = start[1] + py as isize;
            if sy < 0 || sy as usize >= e[1] {
                continue;
            }
            for px in 0..patch_extents.w {
                let sx = start[2] + px as isize;
                if sx < 0 || sx as usize >= e[2] {
                    continue;
                }
                image.set(pz, py, px, volume.get(sz as usize, sy as usize, sx as usize));
                label.set(pz, py, px, labels.get(sz as usize, sy as usize, sx as usize));
            }
        }
    }
    Ok((image, label))
}

/// Cuts `count` aligned (image, label) patch pairs at uniform random
/// positions and returns them in a deterministically shuffled order. Volumes
/// smaller than the patch are zero-padded symmetrically.
pub fn sample_training_patches(
    volume: &Volume,
    labels: &LabelVolume,
    patch_extents: Dims3,
    count: usize,
    seed: u64,
) -> Result<Vec<(Volume, LabelVolume)>, DataError> {
    if volume.geometry() != labels.geometry() {
        return Err(DataError::Geometry(
            "image and label geometries differ".into(),
        ));
    }
    let e = volume.extents().to_vec();
    let p = patch_extents.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let mut start = [0isize; 3];
        for axis in 0..3 {
            start[axis] = if e[axis] >= p[axis] {
                rng.gen_range(0..=(e[axis] - p[axis])) as isize
            } else {
                // Deficit axis: center the volume inside the patch.
                -(((p[axis] - e[axis]) / 2) as isize)
            };
        }
        pairs.push(extract_pair(volume, labels, patch_extents, start)?);
    }
    pairs.shuffle(&mut rng);
    Ok(pairs)
}
