//! Kernel-density aggregation of corner votes.
//!
//! Each reference voxel votes for both box corners. The per-corner density
//! is a product of per-axis Gaussian kernels whose bandwidths follow Scott's
//! rule (floored at one voxel) unless a fixed bandwidth is supplied. The
//! argmax over the vote locations seeds a mean-shift ascent that converges
//! to the continuous density mode, so the estimate is not quantized to the
//! vote grid.

use super::{CornerVotes, LocError};
use crate::dataset::BoundingBox3D;

fn lex_less(a: &[f64; 3], b: &[f64; 3]) -> bool {
    for axis in 0..3 {
        if a[axis] != b[axis] {
            return a[axis] < b[axis];
        }
    }
    false
}

/// Finds the density mode: the vote with the highest kernel density,
/// polished by mean-shift ascent. Votes are canonically sorted first, so
/// the result does not depend on vote order; exact density ties resolve to
/// the lexicographically smallest starting point (and thus its basin).
fn density_argmax(votes: &[[f64; 3]], bandwidth: Option<f64>) -> Result<[f64; 3], LocError> {
    let n = votes.len();
    let mut sorted: Vec<[f64; 3]> = votes.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("votes checked finite"));

    let h = match bandwidth {
        Some(h) => {
            if !(h > 0.0) || !h.is_finite() {
                return Err(LocError::Invalid(format!(
                    "bandwidth must be positive and finite, got {h}"
                )));
            }
            [h; 3]
        }
        None => {
            // Scott's rule per axis for 3-dimensional data, floored at one
            // voxel so degenerate vote clouds keep a usable kernel.
            let mut h = [1.0f64; 3];
            for axis in 0..3 {
                let mean = sorted.iter().map(|v| v[axis]).sum::<f64>() / n as f64;
                let var = sorted
                    .iter()
                    .map(|v| (v[axis] - mean) * (v[axis] - mean))
                    .sum::<f64>()
                    / n as f64;
                h[axis] = (var.sqrt() * (n as f64).powf(-1.0 / 7.0)).max(1.0);
            }
            h
        }
    };

    let inv_two_h2 = [
        1.0 / (2.0 * h[0] * h[0]),
        1.0 / (2.0 * h[1] * h[1]),
        1.0 / (2.0 * h[2] * h[2]),
    ];
    let mut best_point = sorted[0];
    let mut best_density = f64::NEG_INFINITY;
    for candidate in &sorted {
        let mut density = 0.0;
        for vote in &sorted {
            let dz = candidate[0] - vote[0];
            let dy = candidate[1] - vote[1];
            let dx = candidate[2] - vote[2];
            density +=
                (-(dz * dz * inv_two_h2[0] + dy * dy * inv_two_h2[1] + dx * dx * inv_two_h2[2]))
                    .exp();
        }
        if density > best_density || (density == best_density && lex_less(candidate, &best_point))
        {
            best_density = density;
            best_point = *candidate;
        }
    }

    // Mean-shift ascent from the best vote. With a Gaussian kernel the
    // weighted vote mean never decreases the density, so this walks to the
    // local mode and removes the half-sample error of the discrete argmax.
    let mut x = best_point;
    for _ in 0..64 {
        let mut weight_sum = 0.0;
        let mut acc = [0.0f64; 3];
        for vote in &sorted {
            let dz = x[0] - vote[0];
            let dy = x[1] - vote[1];
            let dx = x[2] - vote[2];
            let w = (-(dz * dz * inv_two_h2[0] + dy * dy * inv_two_h2[1] + dx * dx * inv_two_h2[2]))
                .exp();
            weight_sum += w;
            acc[0] += w * vote[0];
            acc[1] += w * vote[1];
            acc[2] += w * vote[2];
        }
        let next = [acc[0] / weight_sum, acc[1] / weight_sum, acc[2] / weight_sum];
        let moved = (next[0] - x[0])
            .abs()
            .max((next[1] - x[1]).abs())
            .max((next[2] - x[2]).abs());
        x = next;
        if moved < 1e-9 {
            break;
        }
    }
    Ok(x)
}

/// Fuses corner votes into a bounding box: per-corner density argmax, then a
/// componentwise corner sort so the box is always valid. A degenerate axis
/// (both corners equal) is widened to one voxel.
pub fn kde_aggregate(
    votes: &CornerVotes,
    bandwidth: Option<f64>,
) -> Result<BoundingBox3D, LocError> {
    if votes.low.is_empty() || votes.high.is_empty() {
        return Err(LocError::EmptyVotes("no votes were cast".into()));
    }
    if votes.low.len() != votes.high.len() {
        return Err(LocError::EmptyVotes(format!(
            "corner vote counts differ: {} low vs {} high",
            votes.low.len(),
            votes.high.len()
        )));
    }
    for v in votes.low.iter().chain(&votes.high) {
        if v.iter().any(|c| !c.is_finite()) {
            return Err(LocError::EmptyVotes(format!("non-finite vote {v:?}")));
        }
    }
    let low_peak = density_argmax(&votes.low, bandwidth)?;
    let high_peak = density_argmax(&votes.high, bandwidth)?;
    let mut low = [0.0; 3];
    let mut high = [0.0; 3];
    for axis in 0..3 {
        low[axis] = low_peak[axis].min(high_peak[axis]);
        high[axis] = low_peak[axis].max(high_peak[axis]);
        if high[axis] - low[axis] < 1e-9 {
            low[axis] -= 0.5;
            high[axis] += 0.5;
        }
    }
    BoundingBox3D::new(low, high).map_err(|e| LocError::EmptyVotes(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn votes_at(low: [f64; 3], high: [f64; 3], n: usize) -> CornerVotes {
        CornerVotes {
            low: vec![low; n],
            high: vec![high; n],
        }
    }

    #[test]
    fn identical_votes_return_that_point() {
        let votes = votes_at([3.0, 4.0, 5.0], [10.0, 11.0, 12.0], 25);
        let bbox = kde_aggregate(&votes, None).unwrap();
        assert_eq!(bbox.corner_low(), [3.0, 4.0, 5.0]);
        assert_eq!(bbox.corner_high(), [10.0, 11.0, 12.0]);
    }

    #[test]
    fn empty_votes_are_an_error() {
        let votes = CornerVotes {
            low: vec![],
            high: vec![],
        };
        assert!(matches!(
            kde_aggregate(&votes, None),
            Err(LocError::EmptyVotes(_))
        ));
    }

    #[test]
    fn larger_cluster_wins() {
        let mut low = vec![[10.0, 10.0, 10.0]; 400];
        low.extend(vec![[30.0, 30.0, 30.0]; 100]);
        let high: Vec<[f64; 3]> = low.iter().map(|v| [v[0] + 5.0, v[1] + 5.0, v[2] + 5.0]).collect();
        let votes = CornerVotes { low, high };
        let bbox = kde_aggregate(&votes, None).unwrap();
        assert_eq!(bbox.corner_low(), [10.0, 10.0, 10.0]);
        assert_eq!(bbox.corner_high(), [15.0, 15.0, 15.0]);
    }

    #[test]
    fn vote_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 2.0).unwrap();
        let mut low: Vec<[f64; 3]> = (0..200)
            .map(|_| {
                [
                    8.0 + noise.sample(&mut rng),
                    9.0 + noise.sample(&mut rng),
                    10.0 + noise.sample(&mut rng),
                ]
            })
            .collect();
        let high: Vec<[f64; 3]> = low
            .iter()
            .map(|v| [v[0] + 20.0, v[1] + 18.0, v[2] + 40.0])
            .collect();
        let forward = kde_aggregate(
            &CornerVotes {
                low: low.clone(),
                high: high.clone(),
            },
            None,
        )
        .unwrap();
        low.reverse();
        let mut high_rev = high.clone();
        high_rev.reverse();
        let reversed = kde_aggregate(
            &CornerVotes {
                low,
                high: high_rev,
            },
            None,
        )
        .unwrap();
        assert_eq!(forward, reversed);
    }

    #[test]
    fn noisy_votes_recover_the_corner() {
        // Smaller inline version of the acceptance experiment: truth plus
        // isotropic Gaussian noise, recovered within a voxel per axis.
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 2.0).unwrap();
            let truth_low = [12.0, 14.0, 9.0];
            let truth_high = [30.0, 33.0, 57.0];
            let mut low = Vec::new();
            let mut high = Vec::new();
            for _ in 0..500 {
                low.push([
                    truth_low[0] + noise.sample(&mut rng),
                    truth_low[1] + noise.sample(&mut rng),
                    truth_low[2] + noise.sample(&mut rng),
                ]);
                high.push([
                    truth_high[0] + noise.sample(&mut rng),
                    truth_high[1] + noise.sample(&mut rng),
                    truth_high[2] + noise.sample(&mut rng),
                ]);
            }
            let bbox = kde_aggregate(&CornerVotes { low, high }, None).unwrap();
            for axis in 0..3 {
                assert!(
                    (bbox.corner_low()[axis] - truth_low[axis]).abs() <= 1.0,
                    "seed {seed} axis {axis}: {:?}",
                    bbox.corner_low()
                );
                assert!((bbox.corner_high()[axis] - truth_high[axis]).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn degenerate_corner_axis_is_widened() {
        let votes = votes_at([5.0, 5.0, 5.0], [5.0, 9.0, 9.0], 3);
        let bbox = kde_aggregate(&votes, None).unwrap();
        assert!(bbox.volume() > 0.0);
        assert_eq!(bbox.corner_low()[0], 4.5);
        assert_eq!(bbox.corner_high()[0], 5.5);
    }

    #[test]
    fn fixed_bandwidth_is_accepted() {
        let votes = votes_at([1.0, 2.0, 3.0], [4.0, 5.0, 6.0], 10);
        let bbox = kde_aggregate(&votes, Some(1.5)).unwrap();
        assert_eq!(bbox.corner_low(), [1.0, 2.0, 3.0]);
        assert!(kde_aggregate(&votes, Some(0.0)).is_err());
    }

    #[test]
    fn random_mixed_votes_stay_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let votes = CornerVotes {
            low: (0..50)
                .map(|_| [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)])
                .collect(),
            high: (0..50)
                .map(|_| {
                    [
                        rng.gen_range(20.0..30.0),
                        rng.gen_range(20.0..30.0),
                        rng.gen_range(20.0..30.0),
                    ]
                })
                .collect(),
        };
        let a = kde_aggregate(&votes, None).unwrap();
        let b = kde_aggregate(&votes, None).unwrap();
        assert_eq!(a, b);
        assert!(a.volume() > 0.0);
    }
}
