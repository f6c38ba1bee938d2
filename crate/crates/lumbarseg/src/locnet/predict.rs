//! ROI prediction: edge detection → patch regression → corner voting → KDE.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::{extract_patch, standardize, LocNetModel, PATCH_EDGE};
use super::{canny3d, kde_aggregate, CornerVotes, LocError, LocNetConfig};
use crate::autodiff::{Checkpoint, Dims3, Graph, ParamSet, TensorError};
use crate::dataset::{BoundingBox3D, Volume};

/// A localized region plus the evidence that produced it.
#[derive(Debug, Clone)]
pub struct RoiPrediction {
    pub bbox: BoundingBox3D,
    pub votes: CornerVotes,
    pub references_used: usize,
}

/// Rebuilds the network handles for a checkpoint saved by the trainer. The
/// config must describe the same architecture the checkpoint was trained
/// with; any missing or extra parameter is rejected.
pub fn localizer_from_checkpoint(
    checkpoint: &Checkpoint,
    config: &LocNetConfig,
) -> Result<(ParamSet, LocNetModel), LocError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ParamSet::new();
    let model = LocNetModel::build(&mut params, config, &mut rng);
    let copied = params.copy_matching_from(&checkpoint.params, |_| false)?;
    if copied != params.len() || checkpoint.params.len() != params.len() {
        return Err(LocError::Invalid(format!(
            "checkpoint does not match the configured architecture: \
             {} of {} parameters matched ({} stored)",
            copied,
            params.len(),
            checkpoint.params.len()
        )));
    }
    Ok((params, model))
}

fn forward_votes(
    volume: &Volume,
    params: &ParamSet,
    model: &LocNetModel,
    reference: [usize; 3],
    norm: f64,
) -> Result<([f64; 3], [f64; 3]), TensorError> {
    let mut patch = extract_patch(volume, reference);
    standardize(&mut patch);
    let mut graph = Graph::new(false);
    let cube = Dims3::new(PATCH_EDGE, PATCH_EDGE, PATCH_EDGE);
    let input = graph.input(1, cube, patch)?;
    let out = model.forward(&mut graph, params, input)?;
    let v = graph.value(out);
    let r = [
        reference[0] as f64,
        reference[1] as f64,
        reference[2] as f64,
    ];
    Ok((
        [r[0] + norm * v[0], r[1] + norm * v[1], r[2] + norm * v[2]],
        [r[0] + norm * v[3], r[1] + norm * v[4], r[2] + norm * v[5]],
    ))
}

/// Localizes the lumbar region in `volume` with a trained network.
///
/// Edge detection proposes reference voxels; at most
/// `config.infer_reference_budget` of them are kept (uniform subsample,
/// deterministic per `seed`). Each reference casts one vote per box corner
/// (`reference + norm · predicted displacement`), and the votes are fused by
/// kernel density estimation. Patch regression runs in parallel; the vote
/// list is ordered by reference voxel, so results do not depend on thread
/// count.
pub fn predict_roi(
    volume: &Volume,
    params: &ParamSet,
    model: &LocNetModel,
    config: &LocNetConfig,
    seed: u64,
) -> Result<RoiPrediction, LocError> {
    config.validate()?;
    let edges = canny3d(
        volume,
        config.sigma,
        config.low_threshold,
        config.high_threshold,
    )?;
    if edges.positions.is_empty() {
        return Err(LocError::NoReferences);
    }
    let mut references = edges.positions;
    if references.len() > config.infer_reference_budget {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        references = references
            .choose_multiple(&mut rng, config.infer_reference_budget)
            .copied()
            .collect();
        references.sort_unstable();
    }

    let results: Result<Vec<([f64; 3], [f64; 3])>, TensorError> = references
        .par_iter()
        .map(|reference| forward_votes(volume, params, model, *reference, config.norm_constant))
        .collect();
    let pairs = results?;
    let votes = CornerVotes {
        low: pairs.iter().map(|(low, _)| *low).collect(),
        high: pairs.iter().map(|(_, high)| *high).collect(),
    };
    let bbox = kde_aggregate(&votes, None)?;
    Ok(RoiPrediction {
        bbox,
        votes,
        references_used: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_phantom, Geometry, PhantomSpec};
    use crate::locnet::{train_localizer, RoiCase};

    fn quick_config() -> LocNetConfig {
        LocNetConfig {
            widths: [2, 3, 4],
            head_features: 16,
            head_hidden: 8,
            train_references_per_volume: 3,
            infer_reference_budget: 12,
            round1_epochs: 1,
            round2_epochs: 0,
            ..LocNetConfig::default()
        }
    }

    fn trained() -> (crate::autodiff::Checkpoint, LocNetModel, LocNetConfig) {
        let (volume, _, bbox) = gen_phantom(&PhantomSpec {
            seed: 31,
            ..PhantomSpec::default()
        })
        .unwrap();
        let config = quick_config();
        let result = train_localizer(
            &[RoiCase {
                volume: &volume,
                bbox: &bbox,
            }],
            &config,
            3,
        )
        .unwrap();
        (result.checkpoint, result.model, config)
    }

    #[test]
    fn prediction_is_deterministic_and_positive() {
        let (checkpoint, model, config) = trained();
        let (volume, _, _) = gen_phantom(&PhantomSpec {
            seed: 32,
            ..PhantomSpec::default()
        })
        .unwrap();
        let a = predict_roi(&volume, &checkpoint.params, &model, &config, 5).unwrap();
        let b = predict_roi(&volume, &checkpoint.params, &model, &config, 5).unwrap();
        assert_eq!(a.bbox, b.bbox);
        assert_eq!(a.votes, b.votes);
        assert!(a.bbox.volume() > 0.0);
        assert_eq!(a.references_used, config.infer_reference_budget);
        assert_eq!(a.votes.low.len(), a.votes.high.len());
    }

    #[test]
    fn constant_volume_fails_distinctly() {
        let (checkpoint, model, config) = trained();
        let geometry =
            Geometry::new(Dims3::new(40, 40, 40), [1.0; 3], [0.0; 3]).unwrap();
        let volume = Volume::constant(geometry, 1.0);
        assert!(matches!(
            predict_roi(&volume, &checkpoint.params, &model, &config, 0),
            Err(LocError::ConstantVolume)
        ));
    }

    #[test]
    fn checkpoint_round_trip_restores_the_network() {
        let (checkpoint, model, config) = trained();
        let (params, rebuilt) = localizer_from_checkpoint(&checkpoint, &config).unwrap();
        let (volume, _, _) = gen_phantom(&PhantomSpec {
            seed: 33,
            ..PhantomSpec::default()
        })
        .unwrap();
        let original = predict_roi(&volume, &checkpoint.params, &model, &config, 2).unwrap();
        let restored = predict_roi(&volume, &params, &rebuilt, &config, 2).unwrap();
        assert_eq!(original.bbox, restored.bbox);
    }

    #[test]
    fn mismatched_architecture_is_rejected() {
        let (checkpoint, _, config) = trained();
        let wider = LocNetConfig {
            widths: [4, 6, 8],
            ..config
        };
        assert!(localizer_from_checkpoint(&checkpoint, &wider).is_err());
    }
}
