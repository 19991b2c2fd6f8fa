//! Conditional noise-prediction network (SchNet-style) with an
//! SE(3)-equivariant output head.
//!
//! Per-atom features start from an atom-type embedding plus projections of
//! the encoder latent `h_v` and a sinusoidal time embedding. Interaction
//! blocks then run continuous-filter convolutions whose filters are generated
//! from radial basis expansions of interatomic distances concatenated with a
//! projection of the bond latent `h_e` (zero-padded on non-bonded pairs).
//! The head turns invariant edge scalars into vectors along normalized
//! coordinate differences, and the result is CoM-projected — rotation
//! equivariance and translation invariance hold by construction.
//!
//! Everything here operates on a *batch*: a disjoint union of items (each an
//! `n x 3` coordinate block referencing one encoded graph) evaluated on one
//! tape, which is what keeps desk-scale training throughput acceptable.

use crate::encoder::EncodedGraph;
use crate::error::{CoreError, Result};
use crate::graph::{MolecularGraph, DEFAULT_MAX_Z};
use crate::opt::{glorot_uniform, ParamSet};
use crate::rng::RngState;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

const LN2: f64 = core::f64::consts::LN_2;

#[derive(Debug, Clone, PartialEq)]
pub struct SchnetConfig {
    pub interaction_blocks: usize,
    pub feature_dim: usize,
    pub rbf_count: usize,
    /// Interaction cutoff and rbf grid end, Å.
    pub r_cut: f64,
    pub time_dim: usize,
    /// Distance floor guarding division by near-coincident atoms, Å.
    pub denom_floor: f64,
}

impl Default for SchnetConfig {
    fn default() -> Self {
        SchnetConfig {
            interaction_blocks: 3,
            feature_dim: 64,
            rbf_count: 50,
            r_cut: 10.0,
            time_dim: 64,
            denom_floor: 1e-6,
        }
    }
}

impl SchnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interaction_blocks < 1 || self.feature_dim < 1 {
            return Err(CoreError::InvalidConfig {
                reason: "score network needs >= 1 block and feature dims".into(),
            });
        }
        if self.rbf_count < 2 {
            return Err(CoreError::InvalidConfig {
                reason: "rbf_count must be >= 2".into(),
            });
        }
        if !(self.r_cut > 0.0) {
            return Err(CoreError::InvalidConfig {
                reason: format!("r_cut must be positive, got {}", self.r_cut),
            });
        }
        if !(self.denom_floor > 0.0) {
            return Err(CoreError::InvalidConfig {
                reason: format!("denom_floor must be positive, got {}", self.denom_floor),
            });
        }
        if self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(CoreError::InvalidConfig {
                reason: format!("time_dim must be even and >= 2, got {}", self.time_dim),
            });
        }
        Ok(())
    }

    fn rbf_spacing(&self) -> f64 {
        self.r_cut / (self.rbf_count as f64 - 1.0)
    }

    /// Gaussian width: gamma = 1 / (2 Δμ²).
    fn rbf_gamma(&self) -> f64 {
        let d = self.rbf_spacing();
        1.0 / (2.0 * d * d)
    }
}

/// Radial basis expansion of a distance: exp(-γ (d - μ_k)²) on an equally
/// spaced grid μ over [0, r_cut].
pub fn rbf_expand(d: f64, config: &SchnetConfig) -> Vec<f64> {
    let gamma = config.rbf_gamma();
    let spacing = config.rbf_spacing();
    (0..config.rbf_count)
        .map(|k| {
            let diff = d - k as f64 * spacing;
            libm::exp(-gamma * diff * diff)
        })
        .collect()
}

/// Sinusoidal time embedding: pairs (sin(t/ω_m), cos(t/ω_m)), ω geometric on
/// [1, 10000]. Distinct for every t in 1..=T at default dimensions.
pub fn time_embedding(t: usize, t_max: usize, dim: usize) -> Result<Vec<f64>> {
    if t < 1 || t > t_max {
        return Err(CoreError::TimeOutOfRange { t, t_max });
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for m in 0..half {
        let exponent = if half > 1 { m as f64 / (half as f64 - 1.0) } else { 0.0 };
        let omega = libm::pow(10000.0, exponent);
        out.push(libm::sin(t as f64 / omega));
    }
    for m in 0..half {
        let exponent = if half > 1 { m as f64 / (half as f64 - 1.0) } else { 0.0 };
        let omega = libm::pow(10000.0, exponent);
        out.push(libm::cos(t as f64 / omega));
    }
    Ok(out)
}

/// Initialize score-network parameters (prefix `score.`). `latent_dim` is the
/// encoder's model dimension (h_v / h_e width).
pub fn init_schnet(config: &SchnetConfig, latent_dim: usize, rng: &RngState) -> Result<ParamSet> {
    config.validate()?;
    let f = config.feature_dim;
    let k = config.rbf_count;
    let mut params = ParamSet::new();
    params.insert(
        "score.atom_embed",
        rng.child_tag("score.atom_embed").uniform_pm(0.1, &[DEFAULT_MAX_Z as usize, f]),
    )?;
    let mut linear = |name: String, fan_in: usize, fan_out: usize| -> Result<()> {
        params.insert(&format!("{name}.w"), glorot_uniform(&rng.child_tag(&format!("{name}.w")), fan_in, fan_out))?;
        params.insert(&format!("{name}.b"), Tensor::zeros(&[1, fan_out]))
    };
    linear("score.hv_proj".into(), latent_dim, f)?;
    linear("score.he_proj".into(), latent_dim, f)?;
    linear("score.time_proj".into(), config.time_dim, f)?;
    for b in 0..config.interaction_blocks {
        linear(format!("score.b{b}.f1"), k + f, f)?;
        linear(format!("score.b{b}.f2"), f, f)?;
        linear(format!("score.b{b}.u1"), f, f)?;
        linear(format!("score.b{b}.u2"), f, f)?;
    }
    linear("score.head1".into(), 2 * f + k, f)?;
    linear("score.head2".into(), f, 1)?;
    Ok(params)
}

/// One batch element: coordinates for an instance of graph `graph_ix` at
/// diffusion time `t`.
pub struct BatchItem {
    pub graph_ix: usize,
    /// Number of coordinate rows this item occupies in the stacked batch
    /// (must equal the referenced graph's atom count).
    pub coords_rows: usize,
    pub t: usize,
}

fn var(vars: &BTreeMap<String, Var>, name: &str) -> Var {
    *vars
        .get(name)
        .unwrap_or_else(|| panic!("parameter '{name}' missing from registered set"))
}

fn ssp(tape: &mut Tape, x: Var) -> Result<Var> {
    let s = tape.softplus(x)?;
    tape.add_const(s, -LN2)
}

/// Record the batched noise prediction on `tape`.
///
/// `coords` is the stacked `[Σn_i, 3]` coordinate variable (constant for
/// training, parameter for gradient checks). `graphs[g]` and `encoded[g]`
/// describe the distinct molecule topologies; each item references one.
/// Returns the stacked `[Σn_i, 3]` prediction, CoM-projected per item.
pub fn predict_noise_batch_on(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    config: &SchnetConfig,
    graphs: &[&MolecularGraph],
    encoded: &[EncodedGraph],
    items: &[BatchItem],
    coords: Var,
    t_max: usize,
) -> Result<Var> {
    if graphs.len() != encoded.len() {
        return Err(CoreError::ShapeMismatch {
            op: "predict_noise",
            expected: format!("{} encoded graphs", graphs.len()),
            got: format!("{}", encoded.len()),
        });
    }
    let total_atoms: usize = items.iter().map(|it| it.coords_rows).sum();
    {
        let cv = tape.value(coords);
        if cv.rows() != total_atoms || cv.cols() != 3 {
            return Err(CoreError::ShapeMismatch {
                op: "predict_noise",
                expected: format!("[{total_atoms}, 3] stacked coords"),
                got: cv.shape_string(),
            });
        }
    }
    for it in items {
        if it.graph_ix >= graphs.len() {
            return Err(CoreError::ShapeMismatch {
                op: "predict_noise",
                expected: format!("graph_ix < {}", graphs.len()),
                got: format!("{}", it.graph_ix),
            });
        }
        if graphs[it.graph_ix].n_atoms() != it.coords_rows {
            return Err(CoreError::ShapeMismatch {
                op: "predict_noise",
                expected: format!("{} atoms for graph {}", graphs[it.graph_ix].n_atoms(), it.graph_ix),
                got: format!("{}", it.coords_rows),
            });
        }
    }

    // --- shared conditioning projections (once per tape) ---
    // h_v of all distinct graphs, concatenated then projected.
    let mut hv_all: Option<Var> = None;
    let mut hv_offsets = Vec::with_capacity(encoded.len());
    let mut acc_rows = 0usize;
    for enc in encoded {
        hv_offsets.push(acc_rows);
        acc_rows += tape.value(enc.h_v).rows();
        hv_all = Some(match hv_all {
            Some(prev) => tape.concat(prev, enc.h_v, 0)?,
            None => enc.h_v,
        });
    }
    let hv_all = hv_all.ok_or(CoreError::EmptyData { what: "graph batch" })?;
    let hv_proj = tape.linear(hv_all, var(vars, "score.hv_proj.w"), var(vars, "score.hv_proj.b"))?;

    // h_e of all distinct graphs, projected, with a zero row appended for
    // non-bonded interaction pairs.
    let mut he_all: Option<Var> = None;
    let mut he_offsets = Vec::with_capacity(encoded.len());
    let mut acc_bonds = 0usize;
    for enc in encoded {
        he_offsets.push(acc_bonds);
        acc_bonds += tape.value(enc.h_e).rows();
        he_all = Some(match he_all {
            Some(prev) => tape.concat(prev, enc.h_e, 0)?,
            None => enc.h_e,
        });
    }
    let f_dim = config.feature_dim;
    let he_proj_padded = match he_all {
        Some(he) if acc_bonds > 0 => {
            let proj = tape.linear(he, var(vars, "score.he_proj.w"), var(vars, "score.he_proj.b"))?;
            let zero = tape.constant(Tensor::zeros(&[1, f_dim]));
            tape.concat(proj, zero, 0)?
        }
        _ => tape.constant(Tensor::zeros(&[1, f_dim])),
    };
    let zero_he_row = acc_bonds; // gather index of the zero padding row

    // --- per-atom initial features ---
    let mut z_ix = Vec::with_capacity(total_atoms);
    let mut hv_rows = Vec::with_capacity(total_atoms);
    let mut item_of_atom = Vec::with_capacity(total_atoms);
    let mut time_rows: Vec<f64> = Vec::with_capacity(total_atoms * config.time_dim);
    for (ix, it) in items.iter().enumerate() {
        let g = graphs[it.graph_ix];
        let emb = time_embedding(it.t, t_max, config.time_dim)?;
        for (a, atom) in g.atoms.iter().enumerate() {
            z_ix.push(atom.atomic_number as usize - 1);
            hv_rows.push(hv_offsets[it.graph_ix] + a);
            item_of_atom.push(ix);
            time_rows.extend_from_slice(&emb);
        }
    }
    let atom_e = tape.gather(var(vars, "score.atom_embed"), &z_ix)?;
    let hv_tiled = tape.gather(hv_proj, &hv_rows)?;
    let time_const = tape.constant(Tensor::from_vec(&[total_atoms, config.time_dim], time_rows)?);
    let time_proj = tape.linear(time_const, var(vars, "score.time_proj.w"), var(vars, "score.time_proj.b"))?;
    let xe = tape.add(atom_e, hv_tiled)?;
    let mut x = tape.add(xe, time_proj)?;

    // --- interaction edges: cutoff pairs ∪ bonds, directed both ways ---
    let coords_val = tape.value(coords).clone();
    let mut edge_dst: Vec<usize> = Vec::new();
    let mut edge_src: Vec<usize> = Vec::new();
    let mut edge_he: Vec<usize> = Vec::new();
    let mut atom_offset = 0usize;
    for it in items.iter() {
        let g = graphs[it.graph_ix];
        let n = g.n_atoms();
        let bond_rows = g.bond_index();
        for i in 0..n {
            for j in (i + 1)..n {
                let mut d_sq = 0.0;
                for c in 0..3 {
                    let diff = coords_val.at(atom_offset + i, c) - coords_val.at(atom_offset + j, c);
                    d_sq += diff * diff;
                }
                let bond_row = bond_rows
                    .iter()
                    .find(|(key, _)| *key == (i, j))
                    .map(|(_, row)| he_offsets[it.graph_ix] + row);
                if d_sq >= config.r_cut * config.r_cut && bond_row.is_none() {
                    continue;
                }
                let he_row = bond_row.unwrap_or(zero_he_row);
                edge_dst.push(atom_offset + i);
                edge_src.push(atom_offset + j);
                edge_he.push(he_row);
                edge_dst.push(atom_offset + j);
                edge_src.push(atom_offset + i);
                edge_he.push(he_row);
            }
        }
        atom_offset += n;
    }
    let n_edges = edge_dst.len();
    if n_edges == 0 {
        // Single-atom items only: the equivariant head has no terms and the
        // prediction is identically zero (already CoM-free).
        return Ok(tape.constant(Tensor::zeros(&[total_atoms, 3])));
    }

    // Distances with a clamped floor (guards coincident atoms; also the
    // division denominator below).
    let c_dst = tape.gather(coords, &edge_dst)?;
    let c_src = tape.gather(coords, &edge_src)?;
    let diff = tape.sub(c_dst, c_src)?;
    let diff_sq = tape.mul(diff, diff)?;
    let d_sq = tape.row_sum(diff_sq)?;
    let d_sq_floored = tape.clamp_min(d_sq, config.denom_floor * config.denom_floor)?;
    let d = tape.sqrt(d_sq_floored)?;

    // rbf(d): tile d to [E, K] with a ones matmul, subtract centers, square.
    let k_count = config.rbf_count;
    let ones_row = tape.constant(Tensor::from_vec(&[1, k_count], vec![1.0; k_count])?);
    let d_tiled = tape.matmul(d, ones_row)?;
    let spacing = config.rbf_spacing();
    let centers: Vec<f64> = (0..k_count).map(|k| k as f64 * spacing).collect();
    let mu_row = tape.constant(Tensor::from_vec(&[1, k_count], centers)?);
    let rbf_diff = tape.sub(d_tiled, mu_row)?;
    let rbf_sq = tape.mul(rbf_diff, rbf_diff)?;
    let rbf_scaled = tape.scale(rbf_sq, -config.rbf_gamma())?;
    let rbf = tape.exp(rbf_scaled)?;

    // Edge conditioning rows (zero for non-bonded pairs), shared by blocks.
    let he_rows = tape.gather(he_proj_padded, &edge_he)?;
    let filter_in = tape.concat(rbf, he_rows, 1)?;

    // --- interaction blocks ---
    for b in 0..config.interaction_blocks {
        let p = |s: &str| format!("score.b{b}.{s}");
        let f1 = tape.linear(filter_in, var(vars, &p("f1.w")), var(vars, &p("f1.b")))?;
        let f1 = ssp(tape, f1)?;
        let f2 = tape.linear(f1, var(vars, &p("f2.w")), var(vars, &p("f2.b")))?;
        let filt = ssp(tape, f2)?;
        let x_src = tape.gather(x, &edge_src)?;
        let msg = tape.mul(x_src, filt)?;
        let m = tape.segment_sum(msg, &edge_dst, total_atoms)?;
        let u1 = tape.linear(m, var(vars, &p("u1.w")), var(vars, &p("u1.b")))?;
        let u1 = ssp(tape, u1)?;
        let u2 = tape.linear(u1, var(vars, &p("u2.w")), var(vars, &p("u2.b")))?;
        x = tape.add(x, u2)?;
    }

    // --- equivariant head: invariant edge scalars times unit differences ---
    let x_dst = tape.gather(x, &edge_dst)?;
    let x_src = tape.gather(x, &edge_src)?;
    let pair = tape.concat(x_dst, x_src, 1)?;
    let head_in = tape.concat(pair, rbf, 1)?;
    let h1 = tape.linear(head_in, var(vars, "score.head1.w"), var(vars, "score.head1.b"))?;
    let h1 = ssp(tape, h1)?;
    let s = tape.linear(h1, var(vars, "score.head2.w"), var(vars, "score.head2.b"))?;
    let w = tape.div(s, d)?;
    let contrib = tape.mul(diff, w)?;
    let r = tape.segment_sum(contrib, &edge_dst, total_atoms)?;

    // --- per-item CoM projection ---
    let n_items = items.len();
    let sums = tape.segment_sum(r, &item_of_atom, n_items)?;
    let counts: Vec<f64> = items.iter().map(|it| it.coords_rows as f64).collect();
    let counts_col = tape.constant(Tensor::from_vec(&[n_items, 1], counts)?);
    let means = tape.div(sums, counts_col)?;
    let means_tiled = tape.gather(means, &item_of_atom)?;
    tape.sub(r, means_tiled)
}

/// Single-conformation noise prediction with a fixed (pre-computed) latent;
/// no gradients. This is the plain `predict_noise` operation.
pub fn predict_noise(
    params: &ParamSet,
    config: &SchnetConfig,
    graph: &MolecularGraph,
    latent: &crate::encoder::LatentCode,
    coords: &Tensor,
    t: usize,
    t_max: usize,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params.register_frozen_on(&mut tape);
    let encoded = EncodedGraph {
        h_v: tape.constant(latent.h_v.clone()),
        h_e: tape.constant(latent.h_e.clone()),
        bonds: latent.bonds.clone(),
    };
    let coords_var = tape.constant(coords.clone());
    let items = [BatchItem {
        graph_ix: 0,
        coords_rows: graph.n_atoms(),
        t,
    }];
    let out = predict_noise_batch_on(
        &mut tape,
        &vars,
        config,
        &[graph],
        &[encoded],
        &items,
        coords_var,
        t_max,
    )?;
    Ok(tape.value(out).clone())
}
