//! In-house decompositions checked against nalgebra on random shapes.

use icl_core::linalg::{gaussian_matrix, lstsq, pinv, svd};
use icl_core::rng::derive_seed;
use icl_core::Matrix;
use nalgebra::DMatrix;

fn to_na(a: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice())
}

fn shapes() -> impl Iterator<Item = (usize, usize, u64)> {
    (0..60u64).map(|s| (1 + (s as usize * 7) % 11, 1 + (s as usize * 5) % 9, s))
}

#[test]
fn singular_values_match_nalgebra() {
    for (m, n, s) in shapes() {
        let a = gaussian_matrix(m, n, derive_seed(1, &[s]));
        let ours = svd(&a).unwrap().sigma;
        let mut theirs: Vec<f64> = to_na(&a).singular_values().iter().copied().collect();
        theirs.sort_by(|x, y| y.total_cmp(x));
        assert_eq!(ours.len(), theirs.len());
        for (x, y) in ours.iter().zip(&theirs) {
            assert!((x - y).abs() < 1e-10, "{m}x{n}: {x} vs {y}");
        }
    }
}

#[test]
fn pseudoinverse_and_least_squares_match_nalgebra() {
    for (m, n, s) in shapes() {
        let a = gaussian_matrix(m, n, derive_seed(2, &[s]));
        let theirs = to_na(&a).pseudo_inverse(1e-12).unwrap();
        let ours = to_na(&pinv(&a, None).unwrap());
        assert!((ours - &theirs).abs().max() < 1e-9, "{m}x{n}");
        let y = gaussian_matrix(m, 1, derive_seed(3, &[s])).into_vec();
        let beta = lstsq(&a, &y).unwrap();
        let expected = &theirs * nalgebra::DVector::from_vec(y);
        for (x, e) in beta.iter().zip(expected.iter()) {
            assert!((x - e).abs() < 1e-9, "{m}x{n}: {x} vs {e}");
        }
    }
}
