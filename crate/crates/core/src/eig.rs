//! Dense symmetric eigensolver: cyclic Jacobi rotations.
//!
//! Molecular graphs are tiny (n ≤ 256 by contract), where Jacobi is simple,
//! accurate, and has no convergence surprises. Eigenvalues are returned
//! ascending with a stable reordering of eigenvector columns, so degenerate
//! eigenvalues keep the solver's deterministic order.

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec;

/// Max accepted deviation from symmetry, |a_ij - a_ji|.
pub const SYMMETRY_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 64;
const MAX_N: usize = 256;

/// Eigendecomposition of a symmetric matrix.
///
/// Returns `(eigenvalues ascending, eigenvectors)` where column k of the
/// second tensor is the unit eigenvector of eigenvalue k.
pub fn symmetric_eig(matrix: &Tensor) -> Result<(Tensor, Tensor)> {
    let shape = matrix.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(CoreError::ShapeMismatch {
            op: "symmetric_eig",
            expected: "[n, n]".into(),
            got: matrix.shape_string(),
        });
    }
    let n = shape[0];
    if n > MAX_N {
        return Err(CoreError::InvalidConfig {
            reason: format!("eigensolver supports n <= {MAX_N}, got {n}"),
        });
    }
    matrix.check_finite("symmetric_eig")?;
    let mut max_dev: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            max_dev = max_dev.max((matrix.at(i, j) - matrix.at(j, i)).abs());
        }
    }
    if max_dev > SYMMETRY_TOL {
        return Err(CoreError::NotSymmetric { max_dev });
    }

    // Work on the symmetrized copy so the tolerance deviation cannot drift.
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (matrix.at(i, j) + matrix.at(j, i));
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    let off_tol = 1e-30 * scale; // squared off-diagonal tolerance

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let off: f64 = {
            let mut s = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    s += 2.0 * a[i * n + j] * a[i * n + j];
                }
            }
            s
        };
        if off <= off_tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(theta * theta + 1.0))
                } else {
                    -1.0 / (-theta + libm::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                // Rotate rows/cols p and q of A.
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                // Accumulate the rotation into V (columns p, q).
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        // One final check: the last sweep may have finished the job.
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * a[i * n + j] * a[i * n + j];
            }
        }
        if off > off_tol {
            return Err(CoreError::EigNoConvergence { sweeps: MAX_SWEEPS });
        }
    }

    // Stable ascending sort of (eigenvalue, original index).
    let mut order: vec::Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[i * n + i]
            .partial_cmp(&a[j * n + j])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });

    let mut values = Tensor::zeros(&[n]);
    let mut vectors = Tensor::zeros(&[n, n]);
    for (new_col, &old_col) in order.iter().enumerate() {
        values.data_mut()[new_col] = a[old_col * n + old_col];
        for r in 0..n {
            vectors.set(r, new_col, v[r * n + old_col]);
        }
    }
    Ok((values, vectors))
}
