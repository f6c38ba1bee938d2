//! End-to-end inference: localize the lumbar region, segment the cropped
//! sub-volume with a sliding window, clean the result up, and paste the
//! labels back into a full-size volume.

use super::infer::sliding_window_infer;
use super::model::SegNetModel;
use super::postprocess::{min_component_threshold, postprocess};
use super::{SegError, SegNetConfig};
use crate::autodiff::ParamSet;
use crate::dataset::{
    crop_region, crop_volume, place_labels, BoundingBox3D, CropRegion, LabelVolume, Volume,
};
use crate::locnet::{predict_roi, LocNetConfig, LocNetModel};

/// The result of running the full pipeline on one volume.
pub struct SegOutcome {
    /// Per-voxel labels on the input geometry; voxels outside the processed
    /// region are background.
    pub labels: LabelVolume,
    /// The lumbar bounding box the localizer predicted.
    pub roi: BoundingBox3D,
    /// The voxel region that was actually segmented (box plus margin,
    /// clamped to the volume).
    pub region: CropRegion,
    /// How many reference voxels voted for the box.
    pub references_used: usize,
}

/// Runs localization, segmentation, and post-processing on one volume.
///
/// The seed only affects which reference voxels the localizer samples when
/// a volume offers more than its budget; everything downstream is
/// deterministic given the sampled set.
#[allow(clippy::too_many_arguments)]
pub fn segment_volume(
    volume: &Volume,
    loc_params: &ParamSet,
    loc_model: &LocNetModel,
    loc_config: &LocNetConfig,
    seg_params: &ParamSet,
    seg_model: &SegNetModel,
    seg_config: &SegNetConfig,
    seed: u64,
) -> Result<SegOutcome, SegError> {
    seg_config.validate()?;
    let roi = predict_roi(volume, loc_params, loc_model, loc_config, seed)?;
    let region = crop_region(volume.geometry(), &roi.bbox, seg_config.crop_margin)?;
    let crop = crop_volume(volume, &region)?;

    let probabilities = sliding_window_infer(&crop, seg_params, seg_model, seg_config)?;
    let raw = probabilities.argmax();
    let threshold = min_component_threshold(&raw, seg_config.min_component_fraction);
    let cleaned = postprocess(&raw, threshold);

    let mut labels = LabelVolume::zeros(volume.geometry());
    place_labels(&mut labels, &cleaned, &region)?;
    Ok(SegOutcome {
        labels,
        roi: roi.bbox,
        region,
        references_used: roi.references_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dims3;
    use crate::dataset::{gen_phantom, Geometry, PhantomSpec};
    use crate::locnet::LocError;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_models() -> (ParamSet, LocNetModel, LocNetConfig, ParamSet, SegNetModel, SegNetConfig)
    {
        let loc_config = LocNetConfig {
            widths: [2, 4, 8],
            head_features: 16,
            head_hidden: 8,
            infer_reference_budget: 48,
            ..LocNetConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut loc_params = ParamSet::new();
        let loc_model = LocNetModel::build(&mut loc_params, &loc_config, &mut rng);
        // Zero the vote head so every reference votes for its own position:
        // the predicted box is then a small region at the densest edge
        // cluster, which keeps these tests about plumbing, not training.
        for name in ["loc.head.out.weight", "loc.head.out.bias"] {
            let id = loc_params.find(name).unwrap();
            loc_params.value_mut(id).fill(0.0);
        }

        let seg_config = SegNetConfig {
            depth: 2,
            base_width: 2,
            patch_extents: Dims3::new(16, 16, 16),
            ..SegNetConfig::default()
        };
        let mut seg_params = ParamSet::new();
        let seg_model = SegNetModel::build(&mut seg_params, &seg_config, &mut rng);
        (loc_params, loc_model, loc_config, seg_params, seg_model, seg_config)
    }

    #[test]
    fn output_covers_the_input_geometry_and_stays_in_range() {
        let (volume, _, _) = gen_phantom(&PhantomSpec::default()).unwrap();
        let (lp, lm, lc, sp, sm, sc) = tiny_models();
        let outcome = segment_volume(&volume, &lp, &lm, &lc, &sp, &sm, &sc, 1).unwrap();
        assert_eq!(outcome.labels.geometry(), volume.geometry());
        assert!(outcome.references_used > 0);
        let dims = volume.extents();
        for z in 0..dims.d {
            for y in 0..dims.h {
                for x in 0..dims.w {
                    let inside = z >= outcome.region.lo[0]
                        && z < outcome.region.hi[0]
                        && y >= outcome.region.lo[1]
                        && y < outcome.region.hi[1]
                        && x >= outcome.region.lo[2]
                        && x < outcome.region.hi[2];
                    if !inside {
                        assert_eq!(outcome.labels.get(z, y, x), 0);
                    }
                }
            }
        }
    }

    #[test]
    fn pipeline_is_deterministic() {
        let (volume, _, _) = gen_phantom(&PhantomSpec {
            seed: 3,
            ..PhantomSpec::default()
        })
        .unwrap();
        let (lp, lm, lc, sp, sm, sc) = tiny_models();
        let a = segment_volume(&volume, &lp, &lm, &lc, &sp, &sm, &sc, 5).unwrap();
        let b = segment_volume(&volume, &lp, &lm, &lc, &sp, &sm, &sc, 5).unwrap();
        assert_eq!(a.labels.data(), b.labels.data());
        assert_eq!(a.roi.to_array6(), b.roi.to_array6());
        assert_eq!(a.region.lo, b.region.lo);
        assert_eq!(a.region.hi, b.region.hi);
    }

    #[test]
    fn localization_failure_propagates() {
        let geometry = Geometry::new(Dims3::new(40, 40, 48), [1.0; 3], [0.0; 3]).unwrap();
        let flat = Volume::constant(geometry, 0.3);
        let (lp, lm, lc, sp, sm, sc) = tiny_models();
        let err = segment_volume(&flat, &lp, &lm, &lc, &sp, &sm, &sc, 0)
            .err()
            .expect("expected a localization failure");
        assert!(matches!(
            err,
            SegError::Localization(LocError::ConstantVolume)
        ));
    }
}
