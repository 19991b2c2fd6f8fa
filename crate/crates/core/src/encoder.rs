//! Graph-transformer encoder producing the conditioning latent.
//!
//! The latent has two channels: per-atom vectors `h_v` (n x D) and per-bond
//! vectors `h_e` (one row per *unordered* bond, which makes the required
//! (i,j)/(j,i) symmetry hold bit-identically by storage). Attention is
//! restricted to bonded neighbors plus a self-loop; the pre-softmax score of
//! a bonded pair is additively modulated by a per-head projection of the
//! current edge latent (self-loops get no modulation), and the edge channel
//! is updated from direction-symmetrized pre-softmax scores.

use crate::error::{CoreError, Result};
use crate::graph::{MolecularGraph, BOND_ORDER_COUNT, CHARGE_RANGE, DEFAULT_MAX_Z};
use crate::opt::{glorot_uniform, ParamSet};
use crate::rng::RngState;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GtnConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub pe_dim: usize,
    pub feedforward_dim: usize,
    pub dropout: f64,
}

impl Default for GtnConfig {
    fn default() -> Self {
        GtnConfig {
            layers: 4,
            heads: 4,
            model_dim: 64,
            pe_dim: 8,
            feedforward_dim: 128,
            dropout: 0.1,
        }
    }
}

impl GtnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 || self.heads < 1 || self.model_dim < 1 || self.feedforward_dim < 1 {
            return Err(CoreError::InvalidConfig {
                reason: "encoder layers/heads/dims must be >= 1".into(),
            });
        }
        if self.model_dim % self.heads != 0 {
            return Err(CoreError::InvalidConfig {
                reason: format!(
                    "model_dim {} not divisible by heads {}",
                    self.model_dim, self.heads
                ),
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::InvalidConfig {
                reason: format!("dropout {} outside [0, 1)", self.dropout),
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// Conditioning latent: per-atom rows plus one row per unordered bond.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub h_v: Tensor,
    pub h_e: Tensor,
    /// Canonical (min, max) endpoint pairs, aligned with `h_e` rows.
    pub bonds: Vec<(usize, usize)>,
}

impl LatentCode {
    /// Latent of the bond between `i` and `j` (order-insensitive).
    pub fn h_e_for(&self, i: usize, j: usize) -> Option<&[f64]> {
        let key = (i.min(j), i.max(j));
        self.bonds
            .iter()
            .position(|&b| b == key)
            .map(|row| self.h_e.row(row))
    }
}

/// Latent still on a tape, used when gradients must flow through it.
#[derive(Debug, Clone)]
pub struct EncodedGraph {
    pub h_v: Var,
    pub h_e: Var,
    pub bonds: Vec<(usize, usize)>,
}

/// Initialize encoder parameters (prefix `enc.`).
///
/// Linear weights are Glorot-uniform, embedding tables uniform(-0.1, 0.1),
/// layer-norm gains 1 and biases 0; every tensor is drawn from an rng stream
/// derived from its own name, so the result is order-independent and
/// deterministic given the seed.
pub fn init_gtn(config: &GtnConfig, rng: &RngState) -> Result<ParamSet> {
    config.validate()?;
    let d = config.model_dim;
    let dh = config.head_dim();
    let ff = config.feedforward_dim;
    let mut params = ParamSet::new();

    let embed = |name: &str, rows: usize, cols: usize| -> Tensor {
        rng.child_tag(name).uniform_pm(0.1, &[rows, cols])
    };
    params.insert("enc.atom_embed", embed("enc.atom_embed", DEFAULT_MAX_Z as usize, d))?;
    params.insert(
        "enc.charge_embed",
        embed("enc.charge_embed", 2 * CHARGE_RANGE as usize + 1, d),
    )?;
    params.insert("enc.bond_embed", embed("enc.bond_embed", BOND_ORDER_COUNT, d))?;
    params.insert(
        "enc.pe_proj.w",
        glorot_uniform(&rng.child_tag("enc.pe_proj.w"), config.pe_dim, d),
    )?;
    params.insert("enc.pe_proj.b", Tensor::zeros(&[1, d]))?;

    for l in 0..config.layers {
        for h in 0..config.heads {
            for (suffix, fan_out) in [("wq", dh), ("wk", dh), ("wv", dh), ("we", 1)] {
                let name = format!("enc.l{l}.h{h}.{suffix}");
                params.insert(&name, glorot_uniform(&rng.child_tag(&name), d, fan_out))?;
            }
        }
        let linear = |params: &mut ParamSet, name: String, fan_in: usize, fan_out: usize| -> Result<()> {
            params.insert(&format!("{name}.w"), glorot_uniform(&rng.child_tag(&format!("{name}.w")), fan_in, fan_out))?;
            params.insert(&format!("{name}.b"), Tensor::zeros(&[1, fan_out]))
        };
        linear(&mut params, format!("enc.l{l}.wo"), d, d)?;
        linear(&mut params, format!("enc.l{l}.ff1"), d, ff)?;
        linear(&mut params, format!("enc.l{l}.ff2"), ff, d)?;
        linear(&mut params, format!("enc.l{l}.eu1"), config.heads, d)?;
        linear(&mut params, format!("enc.l{l}.eu2"), d, d)?;
        linear(&mut params, format!("enc.l{l}.eff1"), d, ff)?;
        linear(&mut params, format!("enc.l{l}.eff2"), ff, d)?;
        for ln in ["ln1", "ln2", "eln1", "eln2"] {
            params.insert(&format!("enc.l{l}.{ln}.g"), Tensor::zeros(&[1, d]).map(|_| 1.0))?;
            params.insert(&format!("enc.l{l}.{ln}.b"), Tensor::zeros(&[1, d]))?;
        }
    }
    Ok(params)
}

/// Inverted-dropout mask source; `None` state means dropout disabled.
pub(crate) struct DropoutCtx {
    state: Option<RngState>,
    rate: f64,
    counter: u64,
}

impl DropoutCtx {
    pub(crate) fn new(state: Option<RngState>, rate: f64) -> Self {
        DropoutCtx {
            state: if rate > 0.0 { state } else { None },
            rate,
            counter: 0,
        }
    }

    pub(crate) fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let state = match &self.state {
            Some(s) => s,
            None => return Ok(x),
        };
        let keep = 1.0 - self.rate;
        let shape = tape.value(x).shape().to_vec();
        let mut stream = state.child(self.counter).stream();
        self.counter += 1;
        let mut mask = Tensor::zeros(&shape);
        for v in mask.data_mut() {
            *v = if stream.uniform() < keep { 1.0 / keep } else { 0.0 };
        }
        let mask_var = tape.constant(mask);
        tape.mul(x, mask_var)
    }
}

fn var(vars: &BTreeMap<String, Var>, name: &str) -> Var {
    *vars
        .get(name)
        .unwrap_or_else(|| panic!("parameter '{name}' missing from registered set"))
}

/// Record the encoder forward pass on `tape`.
///
/// `vars` must contain the `enc.*` parameters (registered trainable or
/// frozen). `pe` is the positional-encoding matrix for `graph`. Dropout is
/// active only when `train_mode` and a dropout rng is supplied.
pub fn encode_on(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    config: &GtnConfig,
    graph: &MolecularGraph,
    pe: &Tensor,
    train_mode: bool,
    dropout_rng: Option<&RngState>,
) -> Result<EncodedGraph> {
    let n = graph.n_atoms();
    let n_bonds = graph.bonds.len();
    if pe.rows() != n || pe.cols() != config.pe_dim {
        return Err(CoreError::ShapeMismatch {
            op: "encode",
            expected: format!("[{n}, {}] positional encoding", config.pe_dim),
            got: pe.shape_string(),
        });
    }
    let mut dropout = DropoutCtx::new(
        if train_mode { dropout_rng.cloned() } else { None },
        config.dropout,
    );

    // Atom features: type embedding + charge embedding + projected PE.
    let z_ix: Vec<usize> = graph.atoms.iter().map(|a| a.atomic_number as usize - 1).collect();
    let q_ix: Vec<usize> = graph
        .atoms
        .iter()
        .map(|a| (a.formal_charge + CHARGE_RANGE) as usize)
        .collect();
    let atom_e = tape.gather(var(vars, "enc.atom_embed"), &z_ix)?;
    let charge_e = tape.gather(var(vars, "enc.charge_embed"), &q_ix)?;
    let pe_const = tape.constant(pe.clone());
    let pe_proj = tape.linear(pe_const, var(vars, "enc.pe_proj.w"), var(vars, "enc.pe_proj.b"))?;
    let sum = tape.add(atom_e, charge_e)?;
    let mut x = tape.add(sum, pe_proj)?;

    // Edge latents: one row per unordered bond.
    let order_ix: Vec<usize> = graph.bonds.iter().map(|b| b.order.index()).collect();
    let mut e = tape.gather(var(vars, "enc.bond_embed"), &order_ix)?;

    // Directed attention edges: (i<-j, i<-j reversed) per bond, then self-loops.
    // Bond-derived edges come in pairs (2b, 2b+1) so symmetrization is a
    // stride-2 gather.
    let mut dst: Vec<usize> = Vec::with_capacity(2 * n_bonds + n);
    let mut src: Vec<usize> = Vec::with_capacity(2 * n_bonds + n);
    let mut bond_row: Vec<usize> = Vec::with_capacity(2 * n_bonds + n);
    for (b, bond) in graph.bonds.iter().enumerate() {
        dst.push(bond.i);
        src.push(bond.j);
        bond_row.push(b);
        dst.push(bond.j);
        src.push(bond.i);
        bond_row.push(b);
    }
    for i in 0..n {
        dst.push(i);
        src.push(i);
        bond_row.push(n_bonds); // row index of the zero padding below
    }
    let even_ix: Vec<usize> = (0..n_bonds).map(|b| 2 * b).collect();
    let odd_ix: Vec<usize> = (0..n_bonds).map(|b| 2 * b + 1).collect();

    let dh = config.head_dim();
    let inv_sqrt_dh = 1.0 / libm::sqrt(dh as f64);

    for l in 0..config.layers {
        let p = |suffix: &str| format!("enc.l{l}.{suffix}");
        // Edge bias rows: bonded edges read proj(e), self-loops read a zero row.
        let zero_row = tape.constant(Tensor::zeros(&[1, 1]));

        let mut head_outs: Option<Var> = None;
        let mut sym_scores: Option<Var> = None;
        for h in 0..config.heads {
            let hq = tape.matmul(x, var(vars, &format!("enc.l{l}.h{h}.wq")))?;
            let hk = tape.matmul(x, var(vars, &format!("enc.l{l}.h{h}.wk")))?;
            let hv = tape.matmul(x, var(vars, &format!("enc.l{l}.h{h}.wv")))?;
            let q_d = tape.gather(hq, &dst)?;
            let k_s = tape.gather(hk, &src)?;
            let prod = tape.mul(q_d, k_s)?;
            let dots = tape.row_sum(prod)?;
            let scaled = tape.scale(dots, inv_sqrt_dh)?;

            let e_bias = tape.matmul(e, var(vars, &format!("enc.l{l}.h{h}.we")))?;
            let e_bias_pad = tape.concat(e_bias, zero_row, 0)?;
            let e_rows = tape.gather(e_bias_pad, &bond_row)?;
            let score = tape.add(scaled, e_rows)?;

            let alpha = tape.segment_softmax(score, &dst, n)?;
            let v_s = tape.gather(hv, &src)?;
            let weighted = tape.mul(v_s, alpha)?;
            let head_out = tape.segment_sum(weighted, &dst, n)?;
            head_outs = Some(match head_outs {
                Some(acc) => tape.concat(acc, head_out, 1)?,
                None => head_out,
            });

            // Direction-symmetrized pre-softmax scores per bond.
            if n_bonds > 0 {
                let s_fwd = tape.gather(score, &even_ix)?;
                let s_rev = tape.gather(score, &odd_ix)?;
                let s_sum = tape.add(s_fwd, s_rev)?;
                let s_sym = tape.scale(s_sum, 0.5)?;
                sym_scores = Some(match sym_scores {
                    Some(acc) => tape.concat(acc, s_sym, 1)?,
                    None => s_sym,
                });
            }
        }

        // Node channel: projected attention + residual + LN + FFN + LN.
        let concat = head_outs.expect("heads >= 1");
        let attn = tape.linear(concat, var(vars, &p("wo.w")), var(vars, &p("wo.b")))?;
        let attn = dropout.apply(tape, attn)?;
        let res1 = tape.add(x, attn)?;
        let x1 = tape.layer_norm(res1, var(vars, &p("ln1.g")), var(vars, &p("ln1.b")), LN_EPS)?;
        let ff_h = tape.linear(x1, var(vars, &p("ff1.w")), var(vars, &p("ff1.b")))?;
        let ff_h = tape.relu(ff_h)?;
        let ff_o = tape.linear(ff_h, var(vars, &p("ff2.w")), var(vars, &p("ff2.b")))?;
        let ff_o = dropout.apply(tape, ff_o)?;
        let res2 = tape.add(x1, ff_o)?;
        x = tape.layer_norm(res2, var(vars, &p("ln2.g")), var(vars, &p("ln2.b")), LN_EPS)?;

        // Edge channel: feedforward of symmetrized scores + residual + LN + FFN + LN.
        if n_bonds > 0 {
            let scores = sym_scores.expect("bonds present");
            let eu_h = tape.linear(scores, var(vars, &p("eu1.w")), var(vars, &p("eu1.b")))?;
            let eu_h = tape.relu(eu_h)?;
            let eu_o = tape.linear(eu_h, var(vars, &p("eu2.w")), var(vars, &p("eu2.b")))?;
            let eu_o = dropout.apply(tape, eu_o)?;
            let eres1 = tape.add(e, eu_o)?;
            let e1 = tape.layer_norm(eres1, var(vars, &p("eln1.g")), var(vars, &p("eln1.b")), LN_EPS)?;
            let eff_h = tape.linear(e1, var(vars, &p("eff1.w")), var(vars, &p("eff1.b")))?;
            let eff_h = tape.relu(eff_h)?;
            let eff_o = tape.linear(eff_h, var(vars, &p("eff2.w")), var(vars, &p("eff2.b")))?;
            let eff_o = dropout.apply(tape, eff_o)?;
            let eres2 = tape.add(e1, eff_o)?;
            e = tape.layer_norm(eres2, var(vars, &p("eln2.g")), var(vars, &p("eln2.b")), LN_EPS)?;
        }
    }

    Ok(EncodedGraph {
        h_v: x,
        h_e: e,
        bonds: graph
            .bonds
            .iter()
            .map(|b| (b.i.min(b.j), b.i.max(b.j)))
            .collect(),
    })
}

/// Plain-tensor encoding (no gradients): the `encode` operation.
pub fn encode(
    params: &ParamSet,
    config: &GtnConfig,
    graph: &MolecularGraph,
    pe: &Tensor,
    train_mode: bool,
    dropout_rng: Option<&RngState>,
) -> Result<LatentCode> {
    let mut tape = Tape::new();
    let vars = params.register_frozen_on(&mut tape);
    let encoded = encode_on(&mut tape, &vars, config, graph, pe, train_mode, dropout_rng)?;
    Ok(LatentCode {
        h_v: tape.value(encoded.h_v).clone(),
        h_e: tape.value(encoded.h_e).clone(),
        bonds: encoded.bonds,
    })
}
