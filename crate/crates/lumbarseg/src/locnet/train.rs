//! Two-round localizer training: L2 regression on normalized displacements,
//! then IoU refinement continuing from the round-1 parameters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{extract_patch, standardize, LocNetModel, PATCH_EDGE};
use super::{canny3d, DisplacementTarget, LocError, LocNetConfig};
use crate::autodiff::{
    adam_step, apply_bn_updates, box_iou, AdamState, Checkpoint, Dims3, GradBuffer, Graph,
    ParamSet,
};
use crate::dataset::{BoundingBox3D, Volume};

/// One localization training case: a volume and its ground-truth box.
#[derive(Clone, Copy)]
pub struct RoiCase<'a> {
    pub volume: &'a Volume,
    pub bbox: &'a BoundingBox3D,
}

/// Everything `train_localizer` produces beyond the checkpoint itself.
pub struct LocTraining {
    pub checkpoint: Checkpoint,
    /// Handles into `checkpoint.params` for running the trained network.
    pub model: LocNetModel,
    /// Mean training loss per epoch, round 1 (L2 on normalized targets).
    pub round1_losses: Vec<f64>,
    /// Mean training loss per epoch, round 2 (negative log IoU).
    pub round2_losses: Vec<f64>,
    /// Parameter hash at the end of round 1.
    pub handoff_hash: String,
    /// Parameter hash at the start of round 2 (equals `handoff_hash`).
    pub round2_start_hash: String,
    /// Round-2 samples skipped because the predicted box was disjoint from
    /// the target (no gradient signal).
    pub disjoint_skipped: usize,
}

/// Hex SHA-256 over all parameter names and values in registration order.
pub fn param_set_hash(params: &ParamSet) -> String {
    params.subset_hash(|_| true)
}

struct SampleSet {
    /// Per case: reference voxels found by edge detection.
    references: Vec<Vec<[usize; 3]>>,
}

fn collect_references(cases: &[RoiCase], config: &LocNetConfig) -> Result<SampleSet, LocError> {
    let mut references = Vec::with_capacity(cases.len());
    for case in cases {
        let refs = match canny3d(
            case.volume,
            config.sigma,
            config.low_threshold,
            config.high_threshold,
        ) {
            Ok(set) => set.positions,
            Err(LocError::ConstantVolume) => Vec::new(),
            Err(e) => return Err(e),
        };
        references.push(refs);
    }
    if references.iter().all(|r| r.is_empty()) {
        return Err(LocError::Training(
            "no reference voxels found on any training volume".into(),
        ));
    }
    Ok(SampleSet { references })
}

/// Trains the localizer. Round 1 minimizes the mean squared error of the
/// normalized corner displacements at edge-detected reference voxels; round
/// 2 continues from the round-1 parameters, minimizing the negative log IoU
/// of the reconstructed boxes (samples whose predicted box misses the target
/// entirely are skipped — there is no usable gradient). Deterministic per
/// seed; per-epoch loss means and the round-handoff parameter hashes are
/// returned alongside the checkpoint.
pub fn train_localizer(
    cases: &[RoiCase],
    config: &LocNetConfig,
    seed: u64,
) -> Result<LocTraining, LocError> {
    config.validate()?;
    if cases.is_empty() {
        return Err(LocError::Training("empty training set".into()));
    }
    if config.round1_epochs == 0 {
        return Err(LocError::Training(
            "round 1 needs at least one epoch".into(),
        ));
    }
    let samples = collect_references(cases, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let model = LocNetModel::build(&mut params, config, &mut rng);
    let mut grads = GradBuffer::zeros_like(&params);
    let cube = Dims3::new(PATCH_EDGE, PATCH_EDGE, PATCH_EDGE);

    // Round 1: L2 on normalized displacement targets.
    let mut state = AdamState::new(&params, config.round1_lr);
    let mut round1_losses = Vec::with_capacity(config.round1_epochs);
    for _ in 0..config.round1_epochs {
        let mut total = 0.0;
        let mut steps = 0usize;
        for (case, refs) in cases.iter().zip(&samples.references) {
            if refs.is_empty() {
                continue;
            }
            let k = refs.len().min(config.train_references_per_volume);
            let chosen: Vec<[usize; 3]> =
                refs.choose_multiple(&mut rng, k).copied().collect();
            for reference in chosen {
                let target = DisplacementTarget::from_box(reference, case.bbox)
                    .normalized(config.norm_constant);
                let mut patch = extract_patch(case.volume, reference);
                standardize(&mut patch);
                let mut graph = Graph::new(true);
                let input = graph.input(1, cube, patch)?;
                let out = model.forward(&mut graph, &params, input)?;
                let loss = graph.mse_loss(out, &target)?;
                grads.zero();
                graph.backward(loss, &params, &mut grads)?;
                adam_step(&mut params, &grads, &mut state)?;
                apply_bn_updates(&mut params, graph.bn_updates());
                total += graph.value(loss)[0];
                steps += 1;
            }
        }
        round1_losses.push(if steps > 0 { total / steps as f64 } else { 0.0 });
    }

    let handoff_hash = param_set_hash(&params);

    // Round 2: IoU refinement from the round-1 parameters. The optimizer is
    // restarted at the round-2 learning rate; the parameters carry over.
    let round2_start_hash = param_set_hash(&params);
    let mut state = AdamState::new(&params, config.round2_lr);
    let mut round2_losses = Vec::with_capacity(config.round2_epochs);
    let mut disjoint_skipped = 0usize;
    for _ in 0..config.round2_epochs {
        let mut total = 0.0;
        let mut steps = 0usize;
        for (case, refs) in cases.iter().zip(&samples.references) {
            if refs.is_empty() {
                continue;
            }
            let target = case.bbox.to_array6();
            let k = refs.len().min(config.train_references_per_volume);
            let chosen: Vec<[usize; 3]> =
                refs.choose_multiple(&mut rng, k).copied().collect();
            for reference in chosen {
                let mut patch = extract_patch(case.volume, reference);
                standardize(&mut patch);
                let mut graph = Graph::new(true);
                let input = graph.input(1, cube, patch)?;
                let out = model.forward(&mut graph, &params, input)?;
                // Reconstruct corner coordinates inside the graph:
                // corner = reference + norm · output.
                let r = [
                    reference[0] as f64,
                    reference[1] as f64,
                    reference[2] as f64,
                ];
                let corners =
                    graph.scale_shift(out, config.norm_constant, &[r[0], r[1], r[2], r[0], r[1], r[2]])?;
                if box_iou(graph.value(corners), &target) <= 0.0 {
                    disjoint_skipped += 1;
                    continue;
                }
                let loss = graph.iou_loss(corners, target)?;
                grads.zero();
                graph.backward(loss, &params, &mut grads)?;
                adam_step(&mut params, &grads, &mut state)?;
                apply_bn_updates(&mut params, graph.bn_updates());
                total += graph.value(loss)[0];
                steps += 1;
            }
        }
        round2_losses.push(if steps > 0 { total / steps as f64 } else { 0.0 });
    }

    let metadata = format!(
        "localizer seed={seed} round1_epochs={} round2_epochs={} handoff={handoff_hash}",
        config.round1_epochs, config.round2_epochs
    );
    Ok(LocTraining {
        checkpoint: Checkpoint {
            params,
            optimizer: Some(state),
            metadata,
        },
        model,
        round1_losses,
        round2_losses,
        handoff_hash,
        round2_start_hash,
        disjoint_skipped,
    })
}
