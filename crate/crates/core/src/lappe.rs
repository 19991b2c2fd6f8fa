//! Laplacian positional encodings for the graph transformer.
//!
//! Columns are eigenvectors of the symmetric normalized Laplacian
//! `L = I - D^{-1/2} A D^{-1/2}` for the k smallest *non-zero* eigenvalues
//! (the constant-direction eigenvector carries no positional information).
//! Eigenvector sign is arbitrary, so columns are canonicalized — the entry of
//! largest magnitude is made positive — and training mode additionally flips
//! each column by a random ±1 so the encoder cannot overfit one sign choice.

use crate::eig::symmetric_eig;
use crate::error::Result;
use crate::graph::MolecularGraph;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Eigenvalues below this threshold count as the trivial zero mode.
pub const NONZERO_EIGENVALUE_TOL: f64 = 1e-8;

/// n x k positional-encoding matrix; zero-padded when the graph has fewer
/// than k non-trivial eigenvectors. `rng` enables the training-time random
/// sign flips (one fair coin per column).
pub fn laplacian_pe(graph: &MolecularGraph, k: usize, rng: Option<&RngState>) -> Result<Tensor> {
    let n = graph.n_atoms();
    let mut pe = Tensor::zeros(&[n, k]);
    if n == 1 {
        return Ok(pe);
    }

    let mut degree = alloc::vec![0.0f64; n];
    for bond in &graph.bonds {
        degree[bond.i] += 1.0;
        degree[bond.j] += 1.0;
    }
    // Connected graph with n > 1: every degree >= 1.
    let inv_sqrt: alloc::vec::Vec<f64> = degree.iter().map(|&d| 1.0 / libm::sqrt(d)).collect();
    let mut lap = Tensor::zeros(&[n, n]);
    for i in 0..n {
        lap.set(i, i, 1.0);
    }
    for bond in &graph.bonds {
        let w = inv_sqrt[bond.i] * inv_sqrt[bond.j];
        lap.set(bond.i, bond.j, -w);
        lap.set(bond.j, bond.i, -w);
    }

    let (values, vectors) = symmetric_eig(&lap)?;
    let mut col_out = 0;
    for ev in 0..n {
        if col_out >= k {
            break;
        }
        if values.data()[ev] <= NONZERO_EIGENVALUE_TOL {
            continue;
        }
        // Canonical sign: entry of largest magnitude (first on ties) positive.
        let mut best_row = 0;
        let mut best_abs = -1.0;
        for r in 0..n {
            let a = vectors.at(r, ev).abs();
            if a > best_abs {
                best_abs = a;
                best_row = r;
            }
        }
        let sign = if vectors.at(best_row, ev) < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            pe.set(r, col_out, sign * vectors.at(r, ev));
        }
        col_out += 1;
    }

    if let Some(state) = rng {
        let mut stream = state.stream();
        for c in 0..k {
            if stream.flip() {
                for r in 0..n {
                    let v = pe.at(r, c);
                    pe.set(r, c, -v);
                }
            }
        }
    }
    Ok(pe)
}
