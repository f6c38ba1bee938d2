//! Voxel-overlap coefficients between two label volumes.

use super::MetricsError;
use crate::dataset::LabelVolume;

/// Per-label voxel counts for a prediction/truth pair on one pass:
/// `(predicted, truth, intersection)` indexed by label value.
pub(super) fn overlap_counts(
    predicted: &LabelVolume,
    truth: &LabelVolume,
) -> ([usize; 6], [usize; 6], [usize; 6]) {
    let mut count_p = [0usize; 6];
    let mut count_t = [0usize; 6];
    let mut inter = [0usize; 6];
    for (p, t) in predicted.data().iter().zip(truth.data()) {
        count_p[*p as usize] += 1;
        count_t[*t as usize] += 1;
        if p == t {
            inter[*p as usize] += 1;
        }
    }
    (count_p, count_t, inter)
}

fn label_counts_for(
    a: &LabelVolume,
    b: &LabelVolume,
    label: u8,
) -> Result<(usize, usize, usize), MetricsError> {
    if a.geometry() != b.geometry() {
        return Err(MetricsError::Geometry(format!(
            "label volumes disagree: {:?} vs {:?}",
            a.geometry(),
            b.geometry()
        )));
    }
    let mut na = 0;
    let mut nb = 0;
    let mut ni = 0;
    for (va, vb) in a.data().iter().zip(b.data()) {
        let in_a = *va == label;
        let in_b = *vb == label;
        na += usize::from(in_a);
        nb += usize::from(in_b);
        ni += usize::from(in_a && in_b);
    }
    Ok((na, nb, ni))
}

/// Dice coefficient `2|a∩b| / (|a|+|b|)` for one label. `None` when the
/// label is absent from both volumes (the coefficient is undefined there).
pub fn dice(a: &LabelVolume, b: &LabelVolume, label: u8) -> Result<Option<f64>, MetricsError> {
    let (na, nb, ni) = label_counts_for(a, b, label)?;
    if na + nb == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * ni as f64 / (na + nb) as f64))
}

/// Jaccard coefficient `|a∩b| / |a∪b|` for one label; `None` as [`dice`].
pub fn jaccard(a: &LabelVolume, b: &LabelVolume, label: u8) -> Result<Option<f64>, MetricsError> {
    let (na, nb, ni) = label_counts_for(a, b, label)?;
    let union = na + nb - ni;
    if union == 0 {
        return Ok(None);
    }
    Ok(Some(ni as f64 / union as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dims3;
    use crate::dataset::Geometry;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn geometry(d: usize, h: usize, w: usize) -> Geometry {
        Geometry::new(Dims3::new(d, h, w), [1.0; 3], [0.0; 3]).unwrap()
    }

    fn cube(g: Geometry, lo: [usize; 3], hi: [usize; 3], label: u8) -> LabelVolume {
        let mut v = LabelVolume::zeros(g);
        for z in lo[0]..hi[0] {
            for y in lo[1]..hi[1] {
                for x in lo[2]..hi[2] {
                    v.set(z, y, x, label);
                }
            }
        }
        v
    }

    #[test]
    fn identical_sets_score_one() {
        let g = geometry(5, 5, 5);
        let a = cube(g, [1, 1, 1], [4, 4, 4], 2);
        assert_eq!(dice(&a, &a, 2).unwrap(), Some(1.0));
        assert_eq!(jaccard(&a, &a, 2).unwrap(), Some(1.0));
    }

    #[test]
    fn disjoint_sets_score_zero() {
        let g = geometry(6, 4, 4);
        let a = cube(g, [0, 0, 0], [2, 4, 4], 1);
        let b = cube(g, [3, 0, 0], [5, 4, 4], 1);
        assert_eq!(dice(&a, &b, 1).unwrap(), Some(0.0));
        assert_eq!(jaccard(&a, &b, 1).unwrap(), Some(0.0));
    }

    #[test]
    fn offset_cubes_match_hand_counts() {
        // Two 2×2×2 cubes shifted by one voxel along x: overlap 4,
        // sizes 8+8, union 12.
        let g = geometry(4, 4, 5);
        let a = cube(g, [1, 1, 1], [3, 3, 3], 1);
        let b = cube(g, [1, 1, 2], [3, 3, 4], 1);
        assert_eq!(dice(&a, &b, 1).unwrap(), Some(0.5));
        let jc = jaccard(&a, &b, 1).unwrap().unwrap();
        assert!((jc - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_from_both_is_undefined() {
        let g = geometry(3, 3, 3);
        let a = LabelVolume::zeros(g);
        assert_eq!(dice(&a, &a, 4).unwrap(), None);
        assert_eq!(jaccard(&a, &a, 4).unwrap(), None);
        // Absent from only one side is a defined zero.
        let b = cube(g, [0, 0, 0], [1, 1, 1], 4);
        assert_eq!(dice(&a, &b, 4).unwrap(), Some(0.0));
    }

    #[test]
    fn geometry_mismatch_is_an_error() {
        let a = LabelVolume::zeros(geometry(3, 3, 3));
        let b = LabelVolume::zeros(geometry(3, 3, 4));
        assert!(dice(&a, &b, 1).is_err());
        assert!(jaccard(&a, &b, 1).is_err());
    }

    fn random_pair() -> impl Strategy<Value = (LabelVolume, LabelVolume)> {
        (2usize..6, 2usize..6, 2usize..6).prop_flat_map(|(d, h, w)| {
            let n = d * h * w;
            (
                proptest::collection::vec(0u8..2, n),
                proptest::collection::vec(0u8..2, n),
            )
                .prop_map(move |(da, db)| {
                    let g = geometry(d, h, w);
                    (
                        LabelVolume::new(g, da).unwrap(),
                        LabelVolume::new(g, db).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn jaccard_follows_from_dice((a, b) in random_pair()) {
            let dc = dice(&a, &b, 1).unwrap();
            let jc = jaccard(&a, &b, 1).unwrap();
            match (dc, jc) {
                (Some(dc), Some(jc)) => {
                    prop_assert!((jc - dc / (2.0 - dc)).abs() <= 1e-12);
                    prop_assert!(jc <= dc + 1e-15);
                }
                (None, None) => {}
                other => prop_assert!(false, "inconsistent definedness {other:?}"),
            }
        }

        #[test]
        fn overlap_is_symmetric_and_matches_set_arithmetic((a, b) in random_pair()) {
            prop_assert_eq!(dice(&a, &b, 1).unwrap(), dice(&b, &a, 1).unwrap());
            prop_assert_eq!(jaccard(&a, &b, 1).unwrap(), jaccard(&b, &a, 1).unwrap());
            // Independent set-based recomputation.
            let sa: HashSet<usize> = a.data().iter().enumerate()
                .filter(|(_, v)| **v == 1).map(|(i, _)| i).collect();
            let sb: HashSet<usize> = b.data().iter().enumerate()
                .filter(|(_, v)| **v == 1).map(|(i, _)| i).collect();
            if !sa.is_empty() || !sb.is_empty() {
                let inter = sa.intersection(&sb).count() as f64;
                let expect_dc = 2.0 * inter / (sa.len() + sb.len()) as f64;
                let expect_jc = inter / sa.union(&sb).count() as f64;
                prop_assert_eq!(dice(&a, &b, 1).unwrap(), Some(expect_dc));
                prop_assert_eq!(jaccard(&a, &b, 1).unwrap(), Some(expect_jc));
            }
        }
    }
}
