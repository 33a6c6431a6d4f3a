//! Node-relabeling augmentation: a uniformly random row permutation.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::features::GedfSample;
use crate::seed;

pub fn random_permutation(n: usize, rng: &mut seed::Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Row `i` of the result is row `perm[i]` of `m`.
pub fn permute_rows(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(perm[i], j)])
}

pub fn augment(sample: &GedfSample, rng: &mut seed::Rng) -> GedfSample {
    let perm = random_permutation(sample.matrix.nrows(), rng);
    GedfSample {
        matrix: permute_rows(&sample.matrix, &perm),
        ..sample.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Variant, Window};

    fn sample() -> GedfSample {
        GedfSample {
            matrix: DMatrix::from_fn(6, 3, |i, j| (i * 3 + j) as f64),
            label: 1,
            topology_id: "t".into(),
            scenario_id: "s".into(),
            window: Window {
                t_start: 0.205,
                dt: 0.005,
                columns: 3,
            },
            variant: Variant::Gedf,
        }
    }

    #[test]
    fn identity_permutation_is_noop() {
        let s = sample();
        assert_eq!(permute_rows(&s.matrix, &[0, 1, 2, 3, 4, 5]), s.matrix);
    }

    #[test]
    fn rows_are_preserved_and_seeded() {
        let s = sample();
        let a = augment(&s, &mut seed::rng(3));
        assert_eq!(a, augment(&s, &mut seed::rng(3)));
        assert_eq!((a.label, &a.scenario_id), (s.label, &s.scenario_id));
        let mut rows: Vec<Vec<u64>> = a.matrix.row_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        let mut orig: Vec<Vec<u64>> = s.matrix.row_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        rows.sort();
        orig.sort();
        assert_eq!(rows, orig);
    }
}
