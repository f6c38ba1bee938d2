//! Synthetic spine phantoms with exact ground truth.
//!
//! A phantom is a stack of bright ellipsoidal "vertebral bodies" along the
//! width (x) axis on a dark background, with small per-case jitter in radii,
//! gaps, intensities, and stack placement (the field-of-view surrogate).
//! As in real lumbar anatomy the bodies grow steadily in size (and, here,
//! brightness) from the first level to the last, and an unlabeled sacral
//! slab sits past the final body — without such level-dependent cues a
//! local patch could not tell the levels apart and corner regression would
//! be ambiguous by multiples of the stack pitch. Unlabeled distractor ellipsoids sit above the first
//! vertebra — the anatomy a varying field of view would include — so edge
//! detection and localization cannot simply latch onto "everything
//! bright". Gaussian noise is added last. Ground truth (labels 1..=count
//! from the top of the stack down, plus the tight bounding box) is exact
//! by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{BoundingBox3D, DataError, Geometry, LabelVolume, Volume};
use crate::autodiff::Dims3;

/// Parameters controlling one generated phantom case.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    /// Number of vertebral bodies (labels 1..=count), at most 5.
    pub vertebra_count: usize,
    pub extents: Dims3,
    pub spacing_mm: [f64; 3],
    /// Standard deviation of the additive Gaussian intensity noise.
    pub noise_sigma: f64,
    /// Maximum voxel jitter of the stack placement per axis.
    pub fov_jitter: f64,
    /// Unlabeled bright structures: this many distractor ellipsoids above
    /// the stack, plus the sacral slab below it whenever nonzero.
    pub distractor_count: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            vertebra_count: 5,
            extents: Dims3::new(44, 44, 76),
            spacing_mm: [1.0, 1.0, 1.0],
            noise_sigma: 0.05,
            fov_jitter: 2.0,
            distractor_count: 2,
        }
    }
}

impl PhantomSpec {
    /// Serializes in the same key=value style as the volume headers.
    pub fn to_text(&self) -> String {
        format!(
            "seed={}\n\
             vertebra_count={}\n\
             extents={} {} {}\n\
             spacing_mm={:?} {:?} {:?}\n\
             noise_sigma={:?}\n\
             fov_jitter={:?}\n\
             distractor_count={}\n",
            self.seed,
            self.vertebra_count,
            self.extents.d,
            self.extents.h,
            self.extents.w,
            self.spacing_mm[0],
            self.spacing_mm[1],
            self.spacing_mm[2],
            self.noise_sigma,
            self.fov_jitter,
            self.distractor_count,
        )
    }

    /// Parses the key=value form written by [`PhantomSpec::to_text`].
    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let (spec, _) = parse_phantom_request(text, false)?;
        Ok(spec)
    }
}

/// Parses a phantom spec, optionally honoring a `cases=N` line (used by the
/// command-line generator to emit N cases with seeds `seed`, `seed+1`, ...).
pub(crate) fn parse_phantom_request(
    text: &str,
    allow_cases: bool,
) -> Result<(PhantomSpec, usize), DataError> {
    let mut spec = PhantomSpec::default();
    let mut cases = 1usize;
    for (i, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(DataError::Invalid(format!(
                "phantom spec line {}: expected key=value, got `{line}`",
                i + 1
            )));
        };
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| {
            DataError::Invalid(format!(
                "phantom spec line {}: cannot parse {what} from `{value}`",
                i + 1
            ))
        };
        match key {
            "seed" => spec.seed = value.parse().map_err(|_| bad("seed"))?,
            "vertebra_count" => {
                spec.vertebra_count = value.parse().map_err(|_| bad("vertebra_count"))?
            }
            "extents" => {
                let parts: Vec<usize> = value
                    .split_whitespace()
                    .map(|p| p.parse().map_err(|_| bad("extents")))
                    .collect::<Result<_, _>>()?;
                if parts.len() != 3 {
                    return Err(bad("3 extents"));
                }
                spec.extents = Dims3::new(parts[0], parts[1], parts[2]);
            }
            "spacing_mm" => {
                let parts: Vec<f64> = value
                    .split_whitespace()
                    .map(|p| p.parse().map_err(|_| bad("spacing_mm")))
                    .collect::<Result<_, _>>()?;
                if parts.len() != 3 {
                    return Err(bad("3 spacing values"));
                }
                spec.spacing_mm = [parts[0], parts[1], parts[2]];
            }
            "noise_sigma" => spec.noise_sigma = value.parse().map_err(|_| bad("noise_sigma"))?,
            "fov_jitter" => spec.fov_jitter = value.parse().map_err(|_| bad("fov_jitter"))?,
            "distractor_count" => {
                spec.distractor_count = value.parse().map_err(|_| bad("distractor_count"))?
            }
            "cases" if allow_cases => cases = value.parse().map_err(|_| bad("cases"))?,
            other => {
                return Err(DataError::Invalid(format!(
                    "phantom spec line {}: unknown key `{other}`",
                    i + 1
                )))
            }
        }
    }
    Ok((spec, cases))
}

/// Base half-axis lengths of a vertebral body (z, y, x) in voxels.
const VERTEBRA_RADII: [f64; 3] = [7.0, 7.0, 3.0];
/// Uniform jitter applied to each half-axis length.
const RADII_JITTER: f64 = 0.4;
/// Half-axis span of the level-size ramp: the first body is scaled by
/// `1 - RAMP`, the last by `1 + RAMP`, linearly in between. The step
/// between adjacent levels (0.9 voxels on the base cross-section) exceeds
/// the radii jitter, so level identity stays readable in a local patch.
const LEVEL_RAMP: f64 = 0.25;
/// Uniform jitter applied to each body's intensity around its level value.
const INTENSITY_JITTER: f64 = 0.05;
/// Base half-axis lengths of the unlabeled sacral slab.
const SACRUM_RADII: [f64; 3] = [10.0, 10.0, 5.0];
/// Reserved width (x voxels) above the stack for distractors.
const DISTRACTOR_ZONE: f64 = 8.0;
const BACKGROUND_INTENSITY: f32 = 0.1;

/// Size multiplier of vertebra `i` of `n`: a linear ramp from `1 -
/// LEVEL_RAMP` up to `1 + LEVEL_RAMP`, mirroring how lumbar bodies grow
/// toward the sacrum.
fn level_scale(i: usize, n: usize) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    1.0 - LEVEL_RAMP + 2.0 * LEVEL_RAMP * i as f64 / (n - 1) as f64
}

fn stamp_ellipsoid(
    volume: &mut Volume,
    mut label_target: Option<(&mut LabelVolume, u8)>,
    center: [f64; 3],
    radii: [f64; 3],
    intensity: f32,
) {
    let e = volume.extents();
    let lo = |c: f64, r: f64| ((c - r).floor().max(0.0)) as usize;
    let hi = |c: f64, r: f64, n: usize| ((c + r).ceil() as usize + 1).min(n);
    for z in lo(center[0], radii[0])..hi(center[0], radii[0], e.d) {
        for y in lo(center[1], radii[1])..hi(center[1], radii[1], e.h) {
            for x in lo(center[2], radii[2])..hi(center[2], radii[2], e.w) {
                let dz = (z as f64 - center[0]) / radii[0];
                let dy = (y as f64 - center[1]) / radii[1];
                let dx = (x as f64 - center[2]) / radii[2];
                if dz * dz + dy * dy + dx * dx <= 1.0 {
                    volume.set(z, y, x, intensity);
                    if let Some((labels, value)) = label_target.as_mut() {
                        labels.set(z, y, x, *value);
                    }
                }
            }
        }
    }
}

/// Generates one phantom case: intensity volume, exact labels, and the tight
/// bounding box of all labeled voxels. Deterministic per spec.
pub fn gen_phantom(spec: &PhantomSpec) -> Result<(Volume, LabelVolume, BoundingBox3D), DataError> {
    if spec.vertebra_count == 0 || spec.vertebra_count > 5 {
        return Err(DataError::Invalid(format!(
            "vertebra_count must be in 1..=5, got {}",
            spec.vertebra_count
        )));
    }
    if !(spec.noise_sigma >= 0.0) || !(spec.fov_jitter >= 0.0) {
        return Err(DataError::Invalid(
            "noise_sigma and fov_jitter must be non-negative".into(),
        ));
    }
    let geometry = Geometry::new(spec.extents, spec.spacing_mm, [0.0, 0.0, 0.0])?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Draw every shape parameter first so the layout can be validated
    // before anything is stamped.
    let n = spec.vertebra_count;
    let mut radii = Vec::with_capacity(n);
    for i in 0..n {
        let scale = level_scale(i, n);
        radii.push([
            VERTEBRA_RADII[0] * scale + rng.gen_range(-RADII_JITTER..=RADII_JITTER),
            VERTEBRA_RADII[1] * scale + rng.gen_range(-RADII_JITTER..=RADII_JITTER),
            VERTEBRA_RADII[2] * scale + rng.gen_range(-RADII_JITTER..=RADII_JITTER),
        ]);
    }
    let gaps: Vec<f64> = (0..n.saturating_sub(1))
        .map(|_| rng.gen_range(2.0..=4.0))
        .collect();
    let intensities: Vec<f32> = (0..n)
        .map(|i| {
            (level_scale(i, n) + rng.gen_range(-INTENSITY_JITTER..=INTENSITY_JITTER)) as f32
        })
        .collect();
    let sacrum = if spec.distractor_count > 0 {
        Some((
            [
                SACRUM_RADII[0] + rng.gen_range(-0.5..=0.5),
                SACRUM_RADII[1] + rng.gen_range(-0.5..=0.5),
                SACRUM_RADII[2] + rng.gen_range(-0.5..=0.5),
            ],
            rng.gen_range(2.0..=4.0),
            1.0 + rng.gen_range(-0.1..=0.1) as f32,
        ))
    } else {
        None
    };
    let d = spec.extents.d as f64;
    let h = spec.extents.h as f64;
    let w = spec.extents.w as f64;
    let center_z = d / 2.0 + rng.gen_range(-spec.fov_jitter..=spec.fov_jitter);
    let center_y = h / 2.0 + rng.gen_range(-spec.fov_jitter..=spec.fov_jitter);
    let start_x = DISTRACTOR_ZONE + rng.gen_range(0.0..=spec.fov_jitter);

    let stack_len: f64 =
        radii.iter().map(|r| 2.0 * r[2]).sum::<f64>() + gaps.iter().sum::<f64>();
    let tail_len = sacrum
        .as_ref()
        .map(|(r, gap, _)| gap + 2.0 * r[2])
        .unwrap_or(0.0);
    let max_rz = radii.iter().map(|r| r[0]).fold(0.0, f64::max);
    let max_ry = radii.iter().map(|r| r[1]).fold(0.0, f64::max);
    if start_x + stack_len + tail_len + 2.0 > w
        || center_z - max_rz < 1.0
        || center_z + max_rz > d - 2.0
        || center_y - max_ry < 1.0
        || center_y + max_ry > h - 2.0
    {
        return Err(DataError::Invalid(format!(
            "extents {:?} too small for a {n}-vertebra stack of length {:.1} starting at x={start_x:.1}",
            spec.extents.to_vec(),
            stack_len + tail_len,
        )));
    }

    let mut volume = Volume::constant(geometry, BACKGROUND_INTENSITY);
    let mut labels = LabelVolume::zeros(geometry);

    let mut x = start_x;
    for i in 0..n {
        let r = radii[i];
        let cx = x + r[2];
        stamp_ellipsoid(
            &mut volume,
            Some((&mut labels, (i + 1) as u8)),
            [center_z, center_y, cx],
            r,
            intensities[i],
        );
        x = cx + r[2] + gaps.get(i).copied().unwrap_or(0.0);
    }

    if let Some((r, gap, intensity)) = sacrum {
        stamp_ellipsoid(
            &mut volume,
            None,
            [center_z, center_y, x + gap + r[2]],
            r,
            intensity,
        );
    }

    for _ in 0..spec.distractor_count {
        let r = [
            4.0 + rng.gen_range(-0.5..=0.5),
            4.0 + rng.gen_range(-0.5..=0.5),
            2.0 + rng.gen_range(-0.3..=0.3),
        ];
        let center = [
            rng.gen_range(0.3 * d..=0.7 * d),
            rng.gen_range(0.3 * h..=0.7 * h),
            rng.gen_range(2.5..=(DISTRACTOR_ZONE - 2.5)),
        ];
        let intensity = 1.0 + rng.gen_range(-0.1..=0.1) as f32;
        stamp_ellipsoid(&mut volume, None, center, r, intensity);
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("valid sigma");
        for v in volume.data_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
    }

    let bbox = BoundingBox3D::tight_box(&labels)
        .expect("a stamped stack always labels at least one voxel");
    Ok((volume, labels, bbox))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_spec_is_bit_identical() {
        let spec = PhantomSpec {
            seed: 42,
            ..PhantomSpec::default()
        };
        let (v1, l1, b1) = gen_phantom(&spec).unwrap();
        let (v2, l2, b2) = gen_phantom(&spec).unwrap();
        assert_eq!(l1.data(), l2.data());
        assert_eq!(b1, b2);
        for (a, b) in v1.data().iter().zip(v2.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let (v1, _, _) = gen_phantom(&PhantomSpec {
            seed: 1,
            ..PhantomSpec::default()
        })
        .unwrap();
        let (v2, _, _) = gen_phantom(&PhantomSpec {
            seed: 2,
            ..PhantomSpec::default()
        })
        .unwrap();
        assert_ne!(v1.data(), v2.data());
    }

    #[test]
    fn box_is_tight_over_labels() {
        let (_, labels, bbox) = gen_phantom(&PhantomSpec {
            seed: 3,
            ..PhantomSpec::default()
        })
        .unwrap();
        assert_eq!(BoundingBox3D::tight_box(&labels).unwrap(), bbox);
        let e = labels.extents();
        for z in 0..e.d {
            for y in 0..e.h {
                for x in 0..e.w {
                    if labels.get(z, y, x) != 0 {
                        assert!(bbox.contains_index(z, y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn all_vertebra_labels_present() {
        let (_, labels, _) = gen_phantom(&PhantomSpec {
            seed: 9,
            ..PhantomSpec::default()
        })
        .unwrap();
        assert_eq!(labels.present_labels(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn noiseless_labeled_voxels_outshine_plain_background() {
        // Without distractors, every labeled voxel must be strictly brighter
        // than every background voxel.
        let (volume, labels, _) = gen_phantom(&PhantomSpec {
            seed: 5,
            noise_sigma: 0.0,
            distractor_count: 0,
            ..PhantomSpec::default()
        })
        .unwrap();
        let mut min_labeled = f32::INFINITY;
        let mut max_background = f32::NEG_INFINITY;
        for (v, l) in volume.data().iter().zip(labels.data()) {
            if *l != 0 {
                min_labeled = min_labeled.min(*v);
            } else {
                max_background = max_background.max(*v);
            }
        }
        assert!(min_labeled > max_background);
    }

    #[test]
    fn distractors_are_bright_but_unlabeled() {
        let (volume, labels, _) = gen_phantom(&PhantomSpec {
            seed: 5,
            noise_sigma: 0.0,
            ..PhantomSpec::default()
        })
        .unwrap();
        // With distractors present there are bright background voxels, and
        // the intensity histogram stays bimodal: everything is either dim
        // background or bright tissue.
        let bright_background = volume
            .data()
            .iter()
            .zip(labels.data())
            .filter(|(v, l)| **l == 0 && **v > 0.5)
            .count();
        assert!(bright_background > 0);
        for v in volume.data() {
            assert!(*v < 0.15 || *v > 0.5, "unexpected mid intensity {v}");
        }
    }

    #[test]
    fn too_small_extents_are_rejected() {
        let spec = PhantomSpec {
            seed: 1,
            extents: Dims3::new(44, 44, 20),
            ..PhantomSpec::default()
        };
        assert!(gen_phantom(&spec).is_err());
        let flat = PhantomSpec {
            seed: 1,
            extents: Dims3::new(10, 44, 64),
            ..PhantomSpec::default()
        };
        assert!(gen_phantom(&flat).is_err());
    }

    #[test]
    fn spec_text_round_trip() {
        let spec = PhantomSpec {
            seed: 77,
            vertebra_count: 4,
            extents: Dims3::new(40, 48, 60),
            spacing_mm: [1.5, 0.75, 1.0],
            noise_sigma: 0.02,
            fov_jitter: 1.5,
            distractor_count: 1,
        };
        let parsed = PhantomSpec::from_text(&spec.to_text()).unwrap();
        assert_eq!(parsed, spec);
    }

    #[test]
    fn unknown_spec_key_is_rejected() {
        assert!(PhantomSpec::from_text("seed=1\nbogus=2\n").is_err());
        // `cases` is only valid in a generation request, not a bare spec.
        assert!(PhantomSpec::from_text("cases=3\n").is_err());
        let (_, cases) = parse_phantom_request("seed=1\ncases=3\n", true).unwrap();
        assert_eq!(cases, 3);
    }
}
