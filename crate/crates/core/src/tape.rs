//! Reverse-mode autodiff on a Wengert tape.
//!
//! Model code records rank-2 tensor operations through [`Tape`] handles and
//! gets gradients for every named parameter from one [`Tape::backward`] pass.
//! The op set is deliberately small; attention softmax, layer norm, CoM
//! projection and friends are composed from it (see the helper methods at the
//! bottom).
//!
//! Contracts enforced here:
//! - every forward result is checked for NaN/Inf and aborts with the op name;
//! - `backward` consumes the tape, so "one backward per recording" holds at
//!   compile time;
//! - broadcasting is limited and explicit: the *second* operand of a binary
//!   op may be a scalar `[1,1]`, a row `[1,n]`, or a column `[m,1]`.

use crate::error::{CoreError, Result};
use crate::tensor::{matmul_into, Tensor};
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

/// Handle to a node on a tape. Only meaningful for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BKind {
    Full,
    Row,
    Col,
    Scalar,
}

#[derive(Debug, Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(String),
    Bin(BinOp, usize, usize, BKind),
    Scale(usize, f64),
    AddConst(usize),
    Matmul(usize, usize),
    SumAll(usize),
    SumAxis0(usize),
    RowSum(usize),
    Exp(usize),
    Sqrt(usize),
    Sin(usize),
    Softplus(usize),
    Relu(usize),
    ClampMin(usize, f64),
    Gather(usize, Vec<usize>),
    SegmentSum(usize, Vec<usize>),
    Concat(usize, usize, u8),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients keyed by parameter name, as produced by [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Grads {
    by_name: BTreeMap<String, Tensor>,
}

impl Grads {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    /// Gradient for `name`, or zeros of the given shape if the parameter was
    /// never touched by the recorded computation.
    pub fn get_or_zeros(&self, name: &str, shape: &[usize]) -> Tensor {
        match self.by_name.get(name) {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.by_name.iter()
    }

    /// In-place `self += other`, used when accumulating over batch chunks.
    pub fn accumulate(&mut self, other: &Grads) -> Result<()> {
        for (name, g) in &other.by_name {
            match self.by_name.get_mut(name) {
                Some(acc) => *acc = acc.add_scaled(g, 1.0)?,
                None => {
                    self.by_name.insert(name.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, alpha: f64) {
        for g in self.by_name.values_mut() {
            *g = g.scale(alpha);
        }
    }
}

/// A recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_ix: BTreeMap<String, usize>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, opname: &'static str) -> Result<Var> {
        value.check_finite(opname)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf with no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Const,
        });
        Var(self.nodes.len() - 1)
    }

    /// Named leaf whose gradient is reported by `backward`.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<Var> {
        if self.param_ix.contains_key(name) {
            return Err(CoreError::DuplicateParam {
                name: name.to_string(),
            });
        }
        value.check_finite("param")?;
        self.nodes.push(Node {
            value,
            op: Op::Param(name.to_string()),
        });
        let ix = self.nodes.len() - 1;
        self.param_ix.insert(name.to_string(), ix);
        Ok(Var(ix))
    }

    // ----- binary elementwise with limited broadcasting -----

    fn bkind(&self, a: Var, b: Var, op: &'static str) -> Result<BKind> {
        let (ar, ac) = (self.value(a).rows(), self.value(a).cols());
        let (br, bc) = (self.value(b).rows(), self.value(b).cols());
        if (br, bc) == (ar, ac) {
            Ok(BKind::Full)
        } else if (br, bc) == (1, ac) {
            Ok(BKind::Row)
        } else if (br, bc) == (ar, 1) {
            Ok(BKind::Col)
        } else if (br, bc) == (1, 1) {
            Ok(BKind::Scalar)
        } else {
            Err(CoreError::ShapeMismatch {
                op,
                expected: format!("[{ar}, {ac}] or broadcastable row/col/scalar"),
                got: self.value(b).shape_string(),
            })
        }
    }

    fn bin(&mut self, op: BinOp, a: Var, b: Var) -> Result<Var> {
        let kind = self.bkind(a, b, op.name())?;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let (m, n) = (av.rows(), av.cols());
        let mut out = vec![0.0; m * n];
        let ad = av.data();
        let bd = bv.data();
        for i in 0..m {
            for j in 0..n {
                let bvij = match kind {
                    BKind::Full => bd[i * n + j],
                    BKind::Row => bd[j],
                    BKind::Col => bd[i],
                    BKind::Scalar => bd[0],
                };
                let aij = ad[i * n + j];
                out[i * n + j] = match op {
                    BinOp::Add => aij + bvij,
                    BinOp::Sub => aij - bvij,
                    BinOp::Mul => aij * bvij,
                    BinOp::Div => aij / bvij,
                };
            }
        }
        let t = Tensor::from_vec(&[m, n], out)?;
        self.push(t, Op::Bin(op, a.0, b.0, kind), op.name())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(BinOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(BinOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(BinOp::Div, a, b)
    }

    // ----- unary -----

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.nodes[a.0].value.scale(c);
        self.push(t, Op::Scale(a.0, c), "scale")
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.nodes[a.0].value.map(|v| v + c);
        self.push(t, Op::AddConst(a.0), "add_const")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = self.nodes[a.0].value.map(libm::exp);
        self.push(t, Op::Exp(a.0), "exp")
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let t = self.nodes[a.0].value.map(libm::sqrt);
        self.push(t, Op::Sqrt(a.0), "sqrt")
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        let t = self.nodes[a.0].value.map(libm::sin);
        self.push(t, Op::Sin(a.0), "sin")
    }

    /// ln(1 + e^x), evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let t = self.nodes[a.0].value.map(|x| {
            if x > 30.0 {
                x
            } else if x < -30.0 {
                libm::exp(x)
            } else {
                libm::log1p(libm::exp(x))
            }
        });
        self.push(t, Op::Softplus(a.0), "softplus")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.nodes[a.0].value.map(|x| x.max(0.0));
        self.push(t, Op::Relu(a.0), "relu")
    }

    pub fn clamp_min(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.nodes[a.0].value.map(|x| x.max(c));
        self.push(t, Op::ClampMin(a.0, c), "clamp_min")
    }

    // ----- structure -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                expected: format!("[m, k] x [k, n], k = {}", av.cols()),
                got: format!("{:?} x {:?}", av.shape(), bv.shape()),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        matmul_into(av.data(), bv.data(), &mut out, m, k, n);
        let t = Tensor::from_vec(&[m, n], out)?;
        self.push(t, Op::Matmul(a.0, b.0), "matmul")
    }

    /// Sum of all elements; the only scalar-producing op.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.sum();
        self.push(Tensor::scalar(s), Op::SumAll(a.0), "sum_all")
    }

    /// Column sums: `[m, n] -> [1, n]`.
    pub fn sum_axis0(&mut self, a: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let (m, n) = (av.rows(), av.cols());
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += av.at(i, j);
            }
        }
        let t = Tensor::from_vec(&[1, n], out)?;
        self.push(t, Op::SumAxis0(a.0), "sum_axis0")
    }

    /// Row sums: `[m, n] -> [m, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let m = av.rows();
        let mut out = vec![0.0; m];
        for i in 0..m {
            out[i] = av.row(i).iter().sum();
        }
        let t = Tensor::from_vec(&[m, 1], out)?;
        self.push(t, Op::RowSum(a.0), "row_sum")
    }

    /// Row gather: `out[r] = a[indices[r]]`. Duplicated indices are allowed
    /// (the adjoint scatter-adds), which also makes this the embedding lookup
    /// and the "tile rows" primitive.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let (m, n) = (av.rows(), av.cols());
        for &ix in indices {
            if ix >= m {
                return Err(CoreError::ShapeMismatch {
                    op: "gather",
                    expected: format!("row indices < {m}"),
                    got: format!("{ix}"),
                });
            }
        }
        let mut out = vec![0.0; indices.len() * n];
        for (r, &ix) in indices.iter().enumerate() {
            out[r * n..(r + 1) * n].copy_from_slice(av.row(ix));
        }
        let t = Tensor::from_vec(&[indices.len(), n], out)?;
        self.push(t, Op::Gather(a.0, indices.to_vec()), "gather")
    }

    /// Sums rows of `a` into `n_segments` buckets: `out[seg[r]] += a[r]`.
    pub fn segment_sum(&mut self, a: Var, seg: &[usize], n_segments: usize) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let (m, n) = (av.rows(), av.cols());
        if seg.len() != m {
            return Err(CoreError::ShapeMismatch {
                op: "segment_sum",
                expected: format!("{m} segment ids"),
                got: format!("{}", seg.len()),
            });
        }
        for &s in seg {
            if s >= n_segments {
                return Err(CoreError::ShapeMismatch {
                    op: "segment_sum",
                    expected: format!("segment ids < {n_segments}"),
                    got: format!("{s}"),
                });
            }
        }
        let mut out = vec![0.0; n_segments * n];
        for (r, &s) in seg.iter().enumerate() {
            let src = av.row(r);
            let dst = &mut out[s * n..(s + 1) * n];
            for j in 0..n {
                dst[j] += src[j];
            }
        }
        let t = Tensor::from_vec(&[n_segments, n], out)?;
        self.push(t, Op::SegmentSum(a.0, seg.to_vec()), "segment_sum")
    }

    /// Concatenate along `axis` (0 = stack rows, 1 = widen rows).
    pub fn concat(&mut self, a: Var, b: Var, axis: u8) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let (am, an) = (av.rows(), av.cols());
        let (bm, bn) = (bv.rows(), bv.cols());
        let t = match axis {
            0 => {
                if an != bn {
                    return Err(CoreError::ShapeMismatch {
                        op: "concat",
                        expected: format!("[_, {an}]"),
                        got: bv.shape_string(),
                    });
                }
                let mut out = Vec::with_capacity((am + bm) * an);
                out.extend_from_slice(av.data());
                out.extend_from_slice(bv.data());
                Tensor::from_vec(&[am + bm, an], out)?
            }
            1 => {
                if am != bm {
                    return Err(CoreError::ShapeMismatch {
                        op: "concat",
                        expected: format!("[{am}, _]"),
                        got: bv.shape_string(),
                    });
                }
                let mut out = Vec::with_capacity(am * (an + bn));
                for i in 0..am {
                    out.extend_from_slice(av.row(i));
                    out.extend_from_slice(bv.row(i));
                }
                Tensor::from_vec(&[am, an + bn], out)?
            }
            _ => {
                return Err(CoreError::ShapeMismatch {
                    op: "concat",
                    expected: "axis 0 or 1".into(),
                    got: format!("{axis}"),
                })
            }
        };
        self.push(t, Op::Concat(a.0, b.0, axis), "concat")
    }

    // ----- composed helpers -----

    /// `x @ w + bias`, the everyday linear layer (`bias` is `[1, n]`).
    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add(xw, bias)
    }

    /// Column means: `[m, n] -> [1, n]`.
    pub fn mean_axis0(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a).rows() as f64;
        let s = self.sum_axis0(a)?;
        self.scale(s, 1.0 / m)
    }

    /// Subtract per-column means (projection onto the zero-CoM subspace).
    pub fn com_project(&mut self, a: Var) -> Result<Var> {
        let mean = self.mean_axis0(a)?;
        self.sub(a, mean)
    }

    /// Softmax over segments of rows: `x` is `[m, 1]`, rows with equal
    /// `seg[r]` form one softmax group. Stabilized by subtracting the
    /// (detached) per-segment maximum, which cancels exactly in the ratio.
    pub fn segment_softmax(&mut self, x: Var, seg: &[usize], n_segments: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.cols() != 1 || xv.rows() != seg.len() {
            return Err(CoreError::ShapeMismatch {
                op: "segment_softmax",
                expected: format!("[{}, 1]", seg.len()),
                got: xv.shape_string(),
            });
        }
        let mut seg_max = vec![f64::NEG_INFINITY; n_segments];
        for (r, &s) in seg.iter().enumerate() {
            seg_max[s] = seg_max[s].max(xv.at(r, 0));
        }
        let maxes: Vec<f64> = seg.iter().map(|&s| seg_max[s]).collect();
        let max_col = self.constant(Tensor::from_vec(&[seg.len(), 1], maxes)?);
        let shifted = self.sub(x, max_col)?;
        let e = self.exp(shifted)?;
        let denom = self.segment_sum(e, seg, n_segments)?;
        let denom_rows = self.gather(denom, seg)?;
        self.div(e, denom_rows)
    }

    /// Per-row layer normalization with learned gain/bias (`[1, n]` each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.value(x).cols() as f64;
        let rs = self.row_sum(x)?;
        let mean = self.scale(rs, 1.0 / n)?;
        let centered = self.sub(x, mean)?;
        let sq = self.mul(centered, centered)?;
        let var_sum = self.row_sum(sq)?;
        let var = self.scale(var_sum, 1.0 / n)?;
        let var_eps = self.add_const(var, eps)?;
        let std = self.sqrt(var_eps)?;
        let normed = self.div(centered, std)?;
        let gained = self.mul(normed, gain)?;
        self.add(gained, bias)
    }

    // ----- backward -----

    /// Reverse pass from a scalar `output`. Consumes the tape; gradients are
    /// reported for every named parameter that influenced the output.
    pub fn backward(self, output: Var) -> Result<Grads> {
        let out_node = &self.nodes[output.0];
        if !out_node.value.is_scalar() {
            return Err(CoreError::NonScalarOutput {
                shape: out_node.value.shape_string(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));

        let mut result = Grads::default();
        for ix in (0..self.nodes.len()).rev() {
            let g = match grads[ix].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[ix];
            match &node.op {
                Op::Const => {}
                Op::Param(name) => {
                    // A param node can appear once per tape, so no merge.
                    result.by_name.insert(name.clone(), g);
                }
                Op::Bin(op, a, b, kind) => {
                    let (ga, gb) = bin_backward(*op, *kind, &g, &self.nodes[*a].value, &self.nodes[*b].value);
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.scale(*c))?;
                }
                Op::AddConst(a) => {
                    accumulate(&mut grads, *a, g)?;
                }
                Op::Matmul(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    // dA = G @ B^T
                    let mut da = vec![0.0; m * k];
                    let bt = bv.transpose();
                    matmul_into(g.data(), bt.data(), &mut da, m, n, k);
                    // dB = A^T @ G
                    let mut db = vec![0.0; k * n];
                    let at = av.transpose();
                    matmul_into(at.data(), g.data(), &mut db, k, m, n);
                    accumulate(&mut grads, *a, Tensor::from_vec(&[m, k], da)?)?;
                    accumulate(&mut grads, *b, Tensor::from_vec(&[k, n], db)?)?;
                }
                Op::SumAll(a) => {
                    let av = &self.nodes[*a].value;
                    let gv = g.first();
                    accumulate(&mut grads, *a, av.map(|_| gv))?;
                }
                Op::SumAxis0(a) => {
                    let av = &self.nodes[*a].value;
                    let (m, n) = (av.rows(), av.cols());
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        da[i * n..(i + 1) * n].copy_from_slice(g.data());
                    }
                    accumulate(&mut grads, *a, Tensor::from_vec(&[m, n], da)?)?;
                }
                Op::RowSum(a) => {
                    let av = &self.nodes[*a].value;
                    let (m, n) = (av.rows(), av.cols());
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        let gi = g.data()[i];
                        for j in 0..n {
                            da[i * n + j] = gi;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::from_vec(&[m, n], da)?)?;
                }
                Op::Exp(a) => {
                    let out = &node.value;
                    let da = elementwise2(&g, out, |gv, ov| gv * ov);
                    accumulate(&mut grads, *a, da)?;
                }
                Op::Sqrt(a) => {
                    let out = &node.value;
                    let da = elementwise2(&g, out, |gv, ov| 0.5 * gv / ov);
                    accumulate(&mut grads, *a, da)?;
                }
                Op::Sin(a) => {
                    let av = &self.nodes[*a].value;
                    let da = elementwise2(&g, av, |gv, x| gv * libm::cos(x));
                    accumulate(&mut grads, *a, da)?;
                }
                Op::Softplus(a) => {
                    let av = &self.nodes[*a].value;
                    let da = elementwise2(&g, av, |gv, x| gv / (1.0 + libm::exp(-x)));
                    accumulate(&mut grads, *a, da)?;
                }
                Op::Relu(a) => {
                    let av = &self.nodes[*a].value;
                    let da = elementwise2(&g, av, |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, da)?;
                }
                Op::ClampMin(a, c) => {
                    let av = &self.nodes[*a].value;
                    let c = *c;
                    let da = elementwise2(&g, av, |gv, x| if x >= c { gv } else { 0.0 });
                    accumulate(&mut grads, *a, da)?;
                }
                Op::Gather(a, indices) => {
                    let av = &self.nodes[*a].value;
                    let (m, n) = (av.rows(), av.cols());
                    let mut da = vec![0.0; m * n];
                    for (r, &ix) in indices.iter().enumerate() {
                        let src = g.row(r);
                        let dst = &mut da[ix * n..(ix + 1) * n];
                        for j in 0..n {
                            dst[j] += src[j];
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::from_vec(&[m, n], da)?)?;
                }
                Op::SegmentSum(a, seg) => {
                    let av = &self.nodes[*a].value;
                    let (m, n) = (av.rows(), av.cols());
                    let mut da = vec![0.0; m * n];
                    for (r, &s) in seg.iter().enumerate() {
                        da[r * n..(r + 1) * n].copy_from_slice(g.row(s));
                    }
                    accumulate(&mut grads, *a, Tensor::from_vec(&[m, n], da)?)?;
                }
                Op::Concat(a, b, axis) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let (am, an) = (av.rows(), av.cols());
                    let (bm, bn) = (bv.rows(), bv.cols());
                    match axis {
                        0 => {
                            let ga = Tensor::from_vec(&[am, an], g.data()[..am * an].to_vec())?;
                            let gb = Tensor::from_vec(&[bm, bn], g.data()[am * an..].to_vec())?;
                            accumulate(&mut grads, *a, ga)?;
                            accumulate(&mut grads, *b, gb)?;
                        }
                        _ => {
                            let mut ga = vec![0.0; am * an];
                            let mut gb = vec![0.0; bm * bn];
                            for i in 0..am {
                                let row = g.row(i);
                                ga[i * an..(i + 1) * an].copy_from_slice(&row[..an]);
                                gb[i * bn..(i + 1) * bn].copy_from_slice(&row[an..]);
                            }
                            accumulate(&mut grads, *a, Tensor::from_vec(&[am, an], ga)?)?;
                            accumulate(&mut grads, *b, Tensor::from_vec(&[bm, bn], gb)?)?;
                        }
                    }
                }
            }
        }
        Ok(result)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], ix: usize, g: Tensor) -> Result<()> {
    match &mut grads[ix] {
        Some(acc) => {
            *acc = acc.add_scaled(&g, 1.0)?;
        }
        slot @ None => {
            *slot = Some(g);
        }
    }
    Ok(())
}

fn elementwise2(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = g.clone();
    for (o, &xv) in out.data_mut().iter_mut().zip(x.data()) {
        *o = f(*o, xv);
    }
    out
}

/// Gradients of `a op b` where `b` may be broadcast. Returns `(da, db)` with
/// `db` reduced over the broadcast axes.
fn bin_backward(op: BinOp, kind: BKind, g: &Tensor, av: &Tensor, bv: &Tensor) -> (Tensor, Tensor) {
    let (m, n) = (av.rows(), av.cols());
    let bd = bv.data();
    let bget = |i: usize, j: usize| -> f64 {
        match kind {
            BKind::Full => bd[i * n + j],
            BKind::Row => bd[j],
            BKind::Col => bd[i],
            BKind::Scalar => bd[0],
        }
    };
    let mut da = vec![0.0; m * n];
    let mut db = vec![0.0; bd.len()];
    for i in 0..m {
        for j in 0..n {
            let gij = g.at(i, j);
            let (da_ij, db_contrib) = match op {
                BinOp::Add => (gij, gij),
                BinOp::Sub => (gij, -gij),
                BinOp::Mul => (gij * bget(i, j), gij * av.at(i, j)),
                BinOp::Div => {
                    let b = bget(i, j);
                    (gij / b, -gij * av.at(i, j) / (b * b))
                }
            };
            da[i * n + j] = da_ij;
            let bix = match kind {
                BKind::Full => i * n + j,
                BKind::Row => j,
                BKind::Col => i,
                BKind::Scalar => 0,
            };
            db[bix] += db_contrib;
        }
    }
    let da_t = Tensor::from_vec(&[m, n], da).expect("shape by construction");
    let mut db_t = Tensor::zeros(bv.shape());
    db_t.data_mut().copy_from_slice(&db);
    (da_t, db_t)
}
