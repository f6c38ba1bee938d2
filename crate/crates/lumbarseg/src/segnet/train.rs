//! Two-step segmentation training: binary vertebra-vs-background first, then
//! multi-class with all layers but the classification head initialized from
//! the binary network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{SegNetModel, HEAD_PREFIX};
use super::{SegError, SegNetConfig};
use crate::autodiff::{
    adam_step, apply_bn_updates, AdamState, Checkpoint, GradBuffer, Graph, ParamSet,
};
use crate::dataset::{
    crop_labels, crop_region, crop_volume, elastic_deform, gray_value_augment, roi_augment,
    sample_training_patches, BoundingBox3D, LabelVolume, Volume,
};

/// One segmentation training case: a volume, its voxel labels, and the
/// ground-truth lumbar box used for ROI cropping.
#[derive(Clone, Copy)]
pub struct SegCase<'a> {
    pub volume: &'a Volume,
    pub labels: &'a LabelVolume,
    pub bbox: &'a BoundingBox3D,
}

/// Everything the segmentation trainers produce beyond the checkpoint.
pub struct SegTraining {
    pub checkpoint: Checkpoint,
    /// Handles into `checkpoint.params` for running the trained network.
    pub model: SegNetModel,
    /// Mean weighted cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    /// The class weights actually used.
    pub class_weights: Vec<f64>,
    /// Notes about classes that were absent from the training labels.
    pub weight_warnings: Vec<String>,
    /// Multi-class only: hashes of the shared (non-head) parameters in the
    /// binary checkpoint and at multi-class step 0; equal by construction.
    pub init_hashes: Option<(String, String)>,
}

/// Total voxels of each class across a set of label volumes. With
/// `class_count` 2 every nonzero label counts as class 1.
pub fn class_voxel_counts(labels: &[&LabelVolume], class_count: usize) -> Vec<usize> {
    let mut counts = vec![0usize; class_count];
    for volume in labels {
        for &l in volume.data() {
            let c = if class_count == 2 {
                usize::from(l != 0)
            } else {
                l as usize
            };
            if c < class_count {
                counts[c] += 1;
            }
        }
    }
    counts
}

/// Inverse-frequency class weights: `weight[c] ∝ 1/frequency(c)`, normalized
/// so the background weight is at most every vertebra weight, then clipped
/// to `[0.1, 10]`. A class with no voxels falls back to weight 1 and is
/// reported in the warning list rather than failing.
pub fn compute_class_weights(counts: &[usize]) -> (Vec<f64>, Vec<String>) {
    let total: usize = counts.iter().sum();
    let mut warnings = Vec::new();
    let background_raw = if counts[0] > 0 {
        total as f64 / counts[0] as f64
    } else {
        1.0
    };
    let mut weights: Vec<f64> = counts
        .iter()
        .enumerate()
        .map(|(c, &count)| {
            if count == 0 {
                warnings.push(format!(
                    "class {c} has no voxels in the training labels; using weight 1"
                ));
                1.0
            } else {
                (total as f64 / count as f64) / background_raw
            }
        })
        .collect();
    for w in &mut weights {
        *w = w.clamp(0.1, 10.0);
    }
    // Clipping can push a frequent foreground class below the background
    // weight; restore the ordering contract.
    let min_foreground = weights[1..].iter().copied().fold(f64::INFINITY, f64::min);
    if weights[0] > min_foreground {
        weights[0] = min_foreground;
    }
    (weights, warnings)
}

fn resolve_class_weights(
    cases: &[SegCase],
    config: &SegNetConfig,
) -> (Vec<f64>, Vec<String>) {
    match &config.class_weights {
        Some(weights) => (weights.clone(), Vec::new()),
        None => {
            let labels: Vec<&LabelVolume> = cases.iter().map(|c| c.labels).collect();
            compute_class_weights(&class_voxel_counts(&labels, config.class_count))
        }
    }
}

/// The common training loop: augment → crop → patch → weighted CE → Adam.
fn train_loop(
    cases: &[SegCase],
    config: &SegNetConfig,
    params: &mut ParamSet,
    model: &SegNetModel,
    class_weights: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, AdamState), SegError> {
    let mut grads = GradBuffer::zeros_like(params);
    let mut state = AdamState::new(params, config.learning_rate);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut total = 0.0;
        let mut steps = 0usize;
        for case in cases {
            // Fresh augmentations per case per epoch, seeded from the master
            // stream so the whole run stays a pure function of the seed.
            let jittered = roi_augment(case.bbox, config.augment.roi_jitter, rng.gen())?;
            let region = crop_region(case.volume.geometry(), &jittered, config.crop_margin)?;
            let volume = crop_volume(case.volume, &region)?;
            let labels = crop_labels(case.labels, &region)?;
            let labels = if config.class_count == 2 {
                labels.to_binary()
            } else {
                labels
            };
            let (volume, labels) = elastic_deform(
                &volume,
                &labels,
                config.augment.elastic_grid,
                config.augment.elastic_amplitude,
                rng.gen(),
            )?;
            let volume = gray_value_augment(
                &volume,
                config.augment.gray_scale,
                config.augment.gray_shift,
                rng.gen(),
            )?;
            let pairs = sample_training_patches(
                &volume,
                &labels,
                config.patch_extents,
                config.patches_per_volume,
                rng.gen(),
            )?;
            for (image, label) in pairs {
                let data: Vec<f64> = image.data().iter().map(|v| *v as f64).collect();
                let mut graph = Graph::new(true);
                let input = graph.input(1, config.patch_extents, data)?;
                let logits = model.forward(&mut graph, params, input)?;
                let loss = graph.weighted_ce_loss(logits, label.data(), class_weights)?;
                grads.zero();
                graph.backward(loss, params, &mut grads)?;
                adam_step(params, &grads, &mut state)?;
                apply_bn_updates(params, graph.bn_updates());
                total += graph.value(loss)[0];
                steps += 1;
            }
        }
        epoch_losses.push(if steps > 0 { total / steps as f64 } else { 0.0 });
    }
    Ok((epoch_losses, state))
}

fn check_dataset(cases: &[SegCase], config: &SegNetConfig) -> Result<(), SegError> {
    config.validate()?;
    if cases.is_empty() {
        return Err(SegError::Training("empty training set".into()));
    }
    if config.epochs == 0 {
        return Err(SegError::Training("training needs at least one epoch".into()));
    }
    let foreground: usize = cases
        .iter()
        .map(|c| c.labels.label_counts()[1..].iter().sum::<usize>())
        .sum();
    if foreground == 0 {
        return Err(SegError::Training(
            "training labels contain no foreground voxels".into(),
        ));
    }
    Ok(())
}

/// Trains the binary (vertebra vs background) network. Deterministic per
/// seed; labels are collapsed to {0, 1} internally.
pub fn train_binary(
    cases: &[SegCase],
    config: &SegNetConfig,
    seed: u64,
) -> Result<SegTraining, SegError> {
    if config.class_count != 2 {
        return Err(SegError::Invalid(format!(
            "binary training requires class_count 2, got {}",
            config.class_count
        )));
    }
    check_dataset(cases, config)?;
    let (class_weights, weight_warnings) = resolve_class_weights(cases, config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let model = SegNetModel::build(&mut params, config, &mut rng);
    let (epoch_losses, optimizer) =
        train_loop(cases, config, &mut params, &model, &class_weights, &mut rng)?;
    let metadata = format!(
        "segmenter-binary seed={seed} epochs={} params={}",
        config.epochs,
        params.subset_hash(|_| true)
    );
    Ok(SegTraining {
        checkpoint: Checkpoint {
            params,
            optimizer: Some(optimizer),
            metadata,
        },
        model,
        epoch_losses,
        class_weights,
        weight_warnings,
        init_hashes: None,
    })
}

/// Trains the 6-class network, initializing everything except the
/// classification head from `binary_checkpoint`. The checkpoint must match
/// the configured architecture on all shared layers.
pub fn train_multiclass(
    cases: &[SegCase],
    binary_checkpoint: &Checkpoint,
    config: &SegNetConfig,
    seed: u64,
) -> Result<SegTraining, SegError> {
    if config.class_count != 6 {
        return Err(SegError::Invalid(format!(
            "multi-class training requires class_count 6, got {}",
            config.class_count
        )));
    }
    check_dataset(cases, config)?;
    let (class_weights, weight_warnings) = resolve_class_weights(cases, config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let model = SegNetModel::build(&mut params, config, &mut rng);
    let shared = |name: &str| !name.starts_with(HEAD_PREFIX);
    let copied = params.copy_matching_from(&binary_checkpoint.params, |name| !shared(name))?;
    let shared_count = params.ids().filter(|id| shared(params.name(*id))).count();
    if copied != shared_count || binary_checkpoint.params.len() != params.len() {
        return Err(SegError::Invalid(format!(
            "binary checkpoint does not match the architecture: copied {copied} of \
             {shared_count} shared parameters ({} stored vs {} expected)",
            binary_checkpoint.params.len(),
            params.len()
        )));
    }
    let init_hashes = Some((
        binary_checkpoint.params.subset_hash(shared),
        params.subset_hash(shared),
    ));
    let (epoch_losses, optimizer) =
        train_loop(cases, config, &mut params, &model, &class_weights, &mut rng)?;
    let metadata = format!(
        "segmenter-multiclass seed={seed} epochs={} init_from_binary={}",
        config.epochs,
        binary_checkpoint.params.subset_hash(shared)
    );
    Ok(SegTraining {
        checkpoint: Checkpoint {
            params,
            optimizer: Some(optimizer),
            metadata,
        },
        model,
        epoch_losses,
        class_weights,
        weight_warnings,
        init_hashes,
    })
}

/// Rebuilds the network handles for a checkpoint saved by either trainer.
pub fn segmenter_from_checkpoint(
    checkpoint: &Checkpoint,
    config: &SegNetConfig,
) -> Result<(ParamSet, SegNetModel), SegError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ParamSet::new();
    let model = SegNetModel::build(&mut params, config, &mut rng);
    let copied = params.copy_matching_from(&checkpoint.params, |_| false)?;
    if copied != params.len() || checkpoint.params.len() != params.len() {
        return Err(SegError::Invalid(format!(
            "checkpoint does not match the configured architecture: {} of {} parameters \
             matched ({} stored)",
            copied,
            params.len(),
            checkpoint.params.len()
        )));
    }
    Ok((params, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{load_checkpoint, save_checkpoint, Dims3};
    use crate::dataset::{gen_phantom, Geometry, PhantomSpec};

    fn quick_config(class_count: usize) -> SegNetConfig {
        SegNetConfig {
            depth: 2,
            base_width: 2,
            class_count,
            patch_extents: Dims3::new(16, 16, 16),
            epochs: 1,
            patches_per_volume: 1,
            ..SegNetConfig::default()
        }
    }

    fn phantom_cases(seeds: &[u64]) -> Vec<(Volume, LabelVolume, BoundingBox3D)> {
        seeds
            .iter()
            .map(|seed| {
                gen_phantom(&PhantomSpec {
                    seed: *seed,
                    ..PhantomSpec::default()
                })
                .unwrap()
            })
            .collect()
    }

    fn borrow(data: &[(Volume, LabelVolume, BoundingBox3D)]) -> Vec<SegCase<'_>> {
        data.iter()
            .map(|(volume, labels, bbox)| SegCase {
                volume,
                labels,
                bbox,
            })
            .collect()
    }

    #[test]
    fn inverse_frequency_weights_favor_rare_classes() {
        let (weights, warnings) = compute_class_weights(&[900, 100]);
        assert!(warnings.is_empty());
        assert_eq!(weights[0], 1.0);
        assert!((weights[1] - 9.0).abs() < 1e-12);
        // Invariant to total count at fixed proportions.
        let (scaled, _) = compute_class_weights(&[9000, 1000]);
        assert_eq!(weights, scaled);
        // Equal frequencies → equal weights.
        let (flat, _) = compute_class_weights(&[500, 500]);
        assert_eq!(flat, vec![1.0, 1.0]);
    }

    #[test]
    fn absent_class_warns_instead_of_failing() {
        let (weights, warnings) = compute_class_weights(&[100, 0, 50]);
        assert_eq!(weights.len(), 3);
        assert_eq!(weights[1], 1.0);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("class 1"));
    }

    #[test]
    fn extreme_imbalance_is_clipped() {
        let (weights, _) = compute_class_weights(&[1_000_000, 10]);
        assert_eq!(weights[1], 10.0);
        assert!(weights[0] <= weights[1]);
    }

    #[test]
    fn binary_training_is_deterministic_and_rejects_all_background() {
        let data = phantom_cases(&[41]);
        let cases = borrow(&data);
        let config = quick_config(2);
        let a = train_binary(&cases, &config, 9).unwrap();
        let b = train_binary(&cases, &config, 9).unwrap();
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(
            a.checkpoint.params.subset_hash(|_| true),
            b.checkpoint.params.subset_hash(|_| true)
        );
        assert_eq!(a.class_weights.len(), 2);
        assert!(a.class_weights[0] <= a.class_weights[1]);

        let geometry = Geometry::new(Dims3::new(24, 24, 24), [1.0; 3], [0.0; 3]).unwrap();
        let volume = Volume::constant(geometry, 0.5);
        let labels = LabelVolume::zeros(geometry);
        let bbox = BoundingBox3D::new([4.0; 3], [20.0; 3]).unwrap();
        let empty = [SegCase {
            volume: &volume,
            labels: &labels,
            bbox: &bbox,
        }];
        assert!(matches!(
            train_binary(&empty, &config, 0),
            Err(SegError::Training(_))
        ));
    }

    #[test]
    fn binary_checkpoint_round_trips_bit_exact() {
        let data = phantom_cases(&[42]);
        let cases = borrow(&data);
        let result = train_binary(&cases, &quick_config(2), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("binary.ckpt");
        save_checkpoint(&path, &result.checkpoint).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(
            loaded.params.subset_hash(|_| true),
            result.checkpoint.params.subset_hash(|_| true)
        );
        let path2 = dir.path().join("binary2.ckpt");
        save_checkpoint(&path2, &loaded).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn multiclass_inherits_all_shared_parameters() {
        let data = phantom_cases(&[43, 44]);
        let cases = borrow(&data);
        let binary = train_binary(&cases, &quick_config(2), 5).unwrap();
        let multi =
            train_multiclass(&cases, &binary.checkpoint, &quick_config(6), 6).unwrap();
        let (from_binary, at_step0) = multi.init_hashes.clone().unwrap();
        assert_eq!(from_binary, at_step0);
        // The head is freshly 6-channel.
        let head = multi.checkpoint.params.find("seg.head.weight").unwrap();
        assert_eq!(multi.checkpoint.params.shape(head)[0], 6);
    }

    #[test]
    fn incompatible_binary_checkpoint_is_rejected() {
        let data = phantom_cases(&[45]);
        let cases = borrow(&data);
        let binary = train_binary(&cases, &quick_config(2), 1).unwrap();
        let wider = SegNetConfig {
            base_width: 3,
            ..quick_config(6)
        };
        assert!(train_multiclass(&cases, &binary.checkpoint, &wider, 0).is_err());
    }

    #[test]
    fn training_loss_decreases_on_phantoms() {
        let data = phantom_cases(&[46]);
        let cases = borrow(&data);
        let config = SegNetConfig {
            epochs: 3,
            patches_per_volume: 2,
            ..quick_config(2)
        };
        let result = train_binary(&cases, &config, 11).unwrap();
        assert!(
            result.epoch_losses.last().unwrap() < result.epoch_losses.first().unwrap(),
            "losses: {:?}",
            result.epoch_losses
        );
    }
}
