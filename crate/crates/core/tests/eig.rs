//! Jacobi eigensolver tests: hand-solvable matrices plus reconstruction and
//! orthonormality properties on random symmetric inputs.

use boltzgen_core::eig::symmetric_eig;
use boltzgen_core::rng::RngState;
use boltzgen_core::{CoreError, Tensor};

fn random_symmetric(seed: u64, n: usize) -> Tensor {
    let b = RngState::from_seed(seed).gaussian(&[n, n]);
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            a.set(i, j, 0.5 * (b.at(i, j) + b.at(j, i)));
        }
    }
    a
}

#[test]
fn identity_has_unit_eigenvalues() {
    let mut a = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        a.set(i, i, 1.0);
    }
    let (values, vectors) = symmetric_eig(&a).unwrap();
    for k in 0..3 {
        assert!((values.data()[k] - 1.0).abs() < 1e-12);
    }
    // Eigenvectors of the identity can be any orthonormal basis; check that.
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|r| vectors.at(r, i) * vectors.at(r, j)).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((dot - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn two_by_two_exchange_matrix_splits_zero_and_two() {
    let a = Tensor::from_vec(&[2, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap();
    let (values, vectors) = symmetric_eig(&a).unwrap();
    assert!(values.data()[0].abs() < 1e-12, "smallest eigenvalue should be 0");
    assert!((values.data()[1] - 2.0).abs() < 1e-12, "largest should be 2");
    // Eigenvector of 0 is (1, 1)/sqrt(2) up to sign.
    let inv_sqrt2 = 1.0 / libm::sqrt(2.0);
    let sign = if vectors.at(0, 0) >= 0.0 { 1.0 } else { -1.0 };
    assert!((vectors.at(0, 0) - sign * inv_sqrt2).abs() < 1e-12);
    assert!((vectors.at(1, 0) - sign * inv_sqrt2).abs() < 1e-12);
}

#[test]
fn diagonal_matrix_sorts_ascending() {
    let mut a = Tensor::zeros(&[3, 3]);
    a.set(0, 0, 3.0);
    a.set(1, 1, 1.0);
    a.set(2, 2, 2.0);
    let (values, vectors) = symmetric_eig(&a).unwrap();
    let expect = [1.0, 2.0, 3.0];
    for k in 0..3 {
        assert!((values.data()[k] - expect[k]).abs() < 1e-12);
    }
    // Eigenvalue 1 lives on axis 1, eigenvalue 2 on axis 2, eigenvalue 3 on axis 0.
    assert!(vectors.at(1, 0).abs() > 1.0 - 1e-12);
    assert!(vectors.at(2, 1).abs() > 1.0 - 1e-12);
    assert!(vectors.at(0, 2).abs() > 1.0 - 1e-12);
}

#[test]
fn one_by_one_matrix_is_its_own_eigenvalue() {
    let a = Tensor::from_vec(&[1, 1], vec![5.0]).unwrap();
    let (values, vectors) = symmetric_eig(&a).unwrap();
    assert!((values.data()[0] - 5.0).abs() < 1e-15);
    assert!((vectors.at(0, 0).abs() - 1.0).abs() < 1e-15);
}

#[test]
fn reconstruction_matches_input_for_random_matrices() {
    for (seed, n) in [(1u64, 2usize), (2, 3), (3, 5), (4, 8), (5, 16), (6, 32), (7, 32)] {
        let a = random_symmetric(seed, n);
        let (values, vectors) = symmetric_eig(&a).unwrap();
        // A_ij = sum_k lambda_k v_ik v_jk
        let mut max_err: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += values.data()[k] * vectors.at(i, k) * vectors.at(j, k);
                }
                max_err = max_err.max((s - a.at(i, j)).abs());
            }
        }
        assert!(max_err < 1e-8, "n={n} seed={seed}: reconstruction error {max_err}");
    }
}

#[test]
fn eigenvectors_are_orthonormal() {
    for (seed, n) in [(11u64, 4usize), (12, 9), (13, 20)] {
        let a = random_symmetric(seed, n);
        let (_, vectors) = symmetric_eig(&a).unwrap();
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|r| vectors.at(r, i) * vectors.at(r, j)).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (dot - expect).abs() < 1e-10,
                    "n={n} seed={seed}: columns {i},{j} dot {dot}"
                );
            }
        }
    }
}

#[test]
fn eigenvalues_are_sorted_ascending_for_random_matrices() {
    for seed in 20..30u64 {
        let a = random_symmetric(seed, 12);
        let (values, _) = symmetric_eig(&a).unwrap();
        for k in 1..12 {
            assert!(values.data()[k] >= values.data()[k - 1]);
        }
    }
}

#[test]
fn asymmetric_input_is_rejected_with_deviation() {
    let a = Tensor::from_vec(&[2, 2], vec![1.0, 0.5, 0.2, 1.0]).unwrap();
    match symmetric_eig(&a) {
        Err(CoreError::NotSymmetric { max_dev }) => {
            assert!((max_dev - 0.3).abs() < 1e-12, "deviation should be 0.3, got {max_dev}")
        }
        other => panic!("expected NotSymmetric, got {other:?}"),
    }
}

#[test]
fn non_square_input_is_rejected() {
    let a = Tensor::zeros(&[2, 3]);
    assert!(matches!(
        symmetric_eig(&a),
        Err(CoreError::ShapeMismatch { op: "symmetric_eig", .. })
    ));
}
