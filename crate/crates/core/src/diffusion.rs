//! Denoising diffusion over conformations restricted to the zero
//! center-of-mass subspace.
//!
//! Forward process: `C_t = sqrt(1 - beta_t) C_{t-1} + sqrt(beta_t) eps_t`
//! with CoM-projected Gaussian noise, equivalently in closed form
//! `C_t = sqrt(abar_t) C_0 + sqrt(1 - abar_t) eps` where
//! `abar_t = prod_{s<=t} (1 - beta_s)`. The training loss regresses the
//! injected noise; ancestral sampling inverts the chain with
//! `sigma_t = sqrt(beta_t)` for `t > 1` and a noiseless final step.
//!
//! Keeping every state CoM-free removes the translational zero mode: the
//! noise is projected at initialization, in `q_sample`/`q_step`, and on each
//! reverse step, and the score network projects its own output.

use crate::encoder::{EncodedGraph, LatentCode};
use crate::error::{CoreError, Result};
use crate::exec::Executor;
use crate::graph::MolecularGraph;
use crate::opt::ParamSet;
use crate::rng::RngState;
use crate::score::{predict_noise_batch_on, BatchItem, SchnetConfig};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Largest admissible terminal signal fraction: `abar_T` must fall below
/// this so the sampler's initial Gaussian matches the forward terminal.
pub const ALPHA_BAR_TERMINAL_MAX: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Betas equally spaced on `[beta_start, beta_end]`.
    Linear,
    /// `beta_t = beta_start + (beta_end - beta_start) * logistic(12 t/T - 6)`.
    Sigmoid,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(ScheduleKind::Linear),
            "sigmoid" => Some(ScheduleKind::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Build a beta schedule over `t = 1..=t_max` and verify that the terminal
/// `abar` is small enough for sampling to start from pure noise.
pub fn make_schedule(
    kind: ScheduleKind,
    t_max: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule> {
    if t_max < 1 {
        return Err(CoreError::InvalidSchedule {
            reason: "need at least 1 step".into(),
        });
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(CoreError::InvalidSchedule {
            reason: format!("betas must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"),
        });
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            if t_max == 1 {
                vec![beta_start]
            } else {
                let step = (beta_end - beta_start) / (t_max as f64 - 1.0);
                (0..t_max).map(|i| beta_start + step * i as f64).collect()
            }
        }
        ScheduleKind::Sigmoid => (1..=t_max)
            .map(|t| {
                let x = 12.0 * t as f64 / t_max as f64 - 6.0;
                let sig = 1.0 / (1.0 + libm::exp(-x));
                beta_start + (beta_end - beta_start) * sig
            })
            .collect(),
    };
    let schedule = NoiseSchedule::from_betas(betas)?;
    let terminal = schedule.alpha_bar(t_max)?;
    if terminal >= ALPHA_BAR_TERMINAL_MAX {
        return Err(CoreError::InvalidSchedule {
            reason: format!(
                "terminal signal fraction {terminal:.3e} >= {ALPHA_BAR_TERMINAL_MAX:.0e}; \
                 lengthen the schedule or raise the betas"
            ),
        });
    }
    Ok(schedule)
}

impl NoiseSchedule {
    /// Wrap an explicit beta sequence. Checks bounds but not the terminal
    /// `abar` invariant — short test schedules are allowed here.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(CoreError::InvalidSchedule {
                reason: "empty beta sequence".into(),
            });
        }
        for (i, b) in betas.iter().enumerate() {
            if !(b.is_finite() && *b > 0.0 && *b < 1.0) {
                return Err(CoreError::InvalidSchedule {
                    reason: format!("beta[{}] = {} outside (0, 1)", i + 1, b),
                });
            }
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn t_max(&self) -> usize {
        self.betas.len()
    }

    /// The full beta sequence (1-indexed externally; `betas()[t-1]` is
    /// `beta(t)`). Hosts serialize schedules through this.
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    fn check_t(&self, t: usize) -> Result<usize> {
        if t < 1 || t > self.t_max() {
            Err(CoreError::TimeOutOfRange {
                t,
                t_max: self.t_max(),
            })
        } else {
            Ok(t - 1)
        }
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.check_t(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.check_t(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.check_t(t)?])
    }
}

/// Project each column to zero mean: removes the center of mass when rows
/// are atoms and columns are x/y/z.
pub fn com_project(x: &Tensor) -> Tensor {
    let (n, m) = (x.rows(), x.cols());
    let mut out = x.clone();
    if n == 0 {
        return out;
    }
    for c in 0..m {
        let mut mean = 0.0;
        for r in 0..n {
            mean += x.at(r, c);
        }
        mean /= n as f64;
        for r in 0..n {
            out.set(r, c, x.at(r, c) - mean);
        }
    }
    out
}

/// Draw CoM-projected standard Gaussian noise of the given shape.
pub fn com_noise(rng: &RngState, rows: usize, cols: usize) -> Tensor {
    com_project(&rng.gaussian(&[rows, cols]))
}

/// One forward step: `sqrt(1 - beta_t) c_prev + sqrt(beta_t) eps`.
pub fn q_step(schedule: &NoiseSchedule, c_prev: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
    if c_prev.shape() != eps.shape() {
        return Err(CoreError::ShapeMismatch {
            op: "q_step",
            expected: c_prev.shape_string(),
            got: eps.shape_string(),
        });
    }
    let beta = schedule.beta(t)?;
    c_prev.scale(libm::sqrt(1.0 - beta)).add_scaled(eps, libm::sqrt(beta))
}

/// Closed-form forward sample at time `t` with explicit noise:
/// `sqrt(abar_t) c0 + sqrt(1 - abar_t) eps`.
pub fn q_sample(schedule: &NoiseSchedule, c0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
    if c0.shape() != eps.shape() {
        return Err(CoreError::ShapeMismatch {
            op: "q_sample",
            expected: c0.shape_string(),
            got: eps.shape_string(),
        });
    }
    let abar = schedule.alpha_bar(t)?;
    c0.scale(libm::sqrt(abar)).add_scaled(eps, libm::sqrt(1.0 - abar))
}

/// Record the denoising loss on `tape`: total squared error between the
/// prediction and the injected noise, divided by `n_items`.
pub fn squared_error_on(
    tape: &mut Tape,
    eps_hat: Var,
    eps_tilde: &Tensor,
    n_items: usize,
) -> Result<Var> {
    let target = tape.constant(eps_tilde.clone());
    let diff = tape.sub(eps_hat, target)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum_all(sq)?;
    tape.scale(total, 1.0 / n_items.max(1) as f64)
}

/// Single-conformation denoising loss recorded on `tape` with explicit raw
/// noise: projects both the noise and `c0` to the zero-CoM subspace, forms
/// the closed-form noised state, runs the score network at time `t`, and
/// returns the total squared error against the projected noise.
#[allow(clippy::too_many_arguments)]
pub fn loss_term_with_eps(
    tape: &mut Tape,
    vars: &alloc::collections::BTreeMap<alloc::string::String, Var>,
    config: &SchnetConfig,
    graph: &MolecularGraph,
    encoded: &EncodedGraph,
    schedule: &NoiseSchedule,
    c0: &Tensor,
    t: usize,
    eps: &Tensor,
) -> Result<Var> {
    let eps_tilde = com_project(eps);
    let c0p = com_project(c0);
    let c_t = q_sample(schedule, &c0p, t, &eps_tilde)?;
    let coords = tape.constant(c_t);
    let items = [BatchItem {
        graph_ix: 0,
        coords_rows: graph.n_atoms(),
        t,
    }];
    let encoded_refs = [encoded.clone()];
    let eps_hat = predict_noise_batch_on(
        tape,
        vars,
        config,
        &[graph],
        &encoded_refs,
        &items,
        coords,
        schedule.t_max(),
    )?;
    squared_error_on(tape, eps_hat, &eps_tilde, 1)
}

/// Single-conformation denoising loss with noise drawn from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn loss_term(
    tape: &mut Tape,
    vars: &alloc::collections::BTreeMap<alloc::string::String, Var>,
    config: &SchnetConfig,
    graph: &MolecularGraph,
    encoded: &EncodedGraph,
    schedule: &NoiseSchedule,
    c0: &Tensor,
    t: usize,
    rng: &RngState,
) -> Result<Var> {
    let eps = rng.gaussian(&[c0.rows(), c0.cols()]);
    loss_term_with_eps(tape, vars, config, graph, encoded, schedule, c0, t, &eps)
}

/// Plain-value squared-error loss (sum over all entries).
pub fn squared_error(eps_hat: &Tensor, eps_tilde: &Tensor) -> Result<f64> {
    if eps_hat.shape() != eps_tilde.shape() {
        return Err(CoreError::ShapeMismatch {
            op: "squared_error",
            expected: eps_tilde.shape_string(),
            got: eps_hat.shape_string(),
        });
    }
    let mut total = 0.0;
    for (a, b) in eps_hat.data().iter().zip(eps_tilde.data().iter()) {
        let d = a - b;
        total += d * d;
    }
    Ok(total)
}

/// Anything that can predict the injected noise for a stacked batch of
/// same-topology conformations at one diffusion time.
pub trait Denoiser {
    fn n_atoms(&self) -> usize;
    /// `coords` is `[n_items * n_atoms, 3]`; returns the same shape.
    fn predict(&self, coords: &Tensor, n_items: usize, t: usize) -> Result<Tensor>;
}

/// Exact denoiser for an isotropic Gaussian target `N(0, sigma^2 I)` on the
/// zero-CoM subspace. The posterior mean of the injected noise given
/// `c_t` is `sqrt(1 - abar_t) / (abar_t sigma^2 + 1 - abar_t) * c_t`,
/// so sampling against it must reproduce the target — the statistical
/// reference for sampler correctness.
pub struct GaussianOracle {
    pub sigma: f64,
    pub n_atoms: usize,
    pub schedule: NoiseSchedule,
}

impl Denoiser for GaussianOracle {
    fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    fn predict(&self, coords: &Tensor, _n_items: usize, t: usize) -> Result<Tensor> {
        let abar = self.schedule.alpha_bar(t)?;
        let s2 = self.sigma * self.sigma;
        let coeff = libm::sqrt(1.0 - abar) / (abar * s2 + 1.0 - abar);
        Ok(coords.scale(coeff))
    }
}

/// Trained-network denoiser: fixed parameters, one graph, one latent code.
/// Splits the batch into chunks and evaluates them through `executor`;
/// chunking does not change any output row, so results are identical no
/// matter how work is divided.
pub struct NetworkDenoiser<'a> {
    pub params: &'a ParamSet,
    pub config: &'a SchnetConfig,
    pub graph: &'a MolecularGraph,
    pub latent: &'a LatentCode,
    pub t_max: usize,
    pub executor: &'a dyn Executor,
    pub chunk_items: usize,
}

impl<'a> NetworkDenoiser<'a> {
    fn predict_chunk(&self, coords: &Tensor, n_items: usize, t: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.register_frozen_on(&mut tape);
        let encoded = EncodedGraph {
            h_v: tape.constant(self.latent.h_v.clone()),
            h_e: tape.constant(self.latent.h_e.clone()),
            bonds: self.latent.bonds.clone(),
        };
        let coords_var = tape.constant(coords.clone());
        let items: Vec<BatchItem> = (0..n_items)
            .map(|_| BatchItem {
                graph_ix: 0,
                coords_rows: self.graph.n_atoms(),
                t,
            })
            .collect();
        let out = predict_noise_batch_on(
            &mut tape,
            &vars,
            self.config,
            &[self.graph],
            &[encoded],
            &items,
            coords_var,
            self.t_max,
        )?;
        Ok(tape.value(out).clone())
    }
}

impl<'a> Denoiser for NetworkDenoiser<'a> {
    fn n_atoms(&self) -> usize {
        self.graph.n_atoms()
    }

    fn predict(&self, coords: &Tensor, n_items: usize, t: usize) -> Result<Tensor> {
        let n = self.graph.n_atoms();
        let chunk = self.chunk_items.max(1);
        let n_chunks = n_items.div_ceil(chunk);
        if n_chunks <= 1 {
            return self.predict_chunk(coords, n_items, t);
        }
        let results = self.executor.map_tensors(n_chunks, &|ci| {
            let start = ci * chunk;
            let count = chunk.min(n_items - start);
            let block = coords.row_block(start * n, count * n)?;
            self.predict_chunk(&block, count, t)
        });
        let mut out = Tensor::zeros(&[n_items * n, 3]);
        let mut row = 0;
        for r in results {
            let block = r?;
            for i in 0..block.rows() {
                for c in 0..3 {
                    out.set(row, c, block.at(i, c));
                }
                row += 1;
            }
        }
        Ok(out)
    }
}

/// Generate `n_items` conformations by ancestral sampling, stacked as
/// `[n_items * n_atoms, 3]`. Per-item noise streams are derived from
/// `rng.child(item).child(t)`, so results do not depend on batching.
/// `on_step(t, state)` observes every intermediate state.
pub fn ancestral_sample_batch(
    schedule: &NoiseSchedule,
    denoiser: &dyn Denoiser,
    n_items: usize,
    rng: &RngState,
    mut on_step: impl FnMut(usize, &Tensor),
) -> Result<Tensor> {
    let n = denoiser.n_atoms();
    if n_items == 0 || n == 0 {
        return Err(CoreError::EmptyData {
            what: "sampling batch",
        });
    }
    let mut c = Tensor::zeros(&[n_items * n, 3]);
    for s in 0..n_items {
        let init = com_noise(&rng.child(s as u64).child_tag("init"), n, 3);
        for i in 0..n {
            for col in 0..3 {
                c.set(s * n + i, col, init.at(i, col));
            }
        }
    }
    for t in (1..=schedule.t_max()).rev() {
        let eps_hat = denoiser.predict(&c, n_items, t)?;
        if eps_hat.shape() != c.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "ancestral_sample",
                expected: c.shape_string(),
                got: eps_hat.shape_string(),
            });
        }
        if eps_hat.check_finite("ancestral_sample").is_err() {
            return Err(CoreError::NonFiniteAtStep {
                op: "ancestral_sample",
                t,
            });
        }
        let beta = schedule.beta(t)?;
        let alpha = schedule.alpha(t)?;
        let abar = schedule.alpha_bar(t)?;
        let noise_coeff = beta / libm::sqrt(1.0 - abar);
        let inv_sqrt_alpha = 1.0 / libm::sqrt(alpha);
        let mut next = c.add_scaled(&eps_hat, -noise_coeff)?.scale(inv_sqrt_alpha);
        if t > 1 {
            let sigma = libm::sqrt(beta);
            for s in 0..n_items {
                let z = com_noise(&rng.child(s as u64).child(t as u64), n, 3);
                for i in 0..n {
                    for col in 0..3 {
                        let v = next.at(s * n + i, col) + sigma * z.at(i, col);
                        next.set(s * n + i, col, v);
                    }
                }
            }
        }
        if next.check_finite("ancestral_sample").is_err() {
            return Err(CoreError::NonFiniteAtStep {
                op: "ancestral_sample",
                t,
            });
        }
        c = next;
        on_step(t, &c);
    }
    Ok(c)
}

/// Generate a single conformation (`[n_atoms, 3]`).
pub fn ancestral_sample(
    schedule: &NoiseSchedule,
    denoiser: &dyn Denoiser,
    rng: &RngState,
) -> Result<Tensor> {
    ancestral_sample_batch(schedule, denoiser, 1, rng, |_, _| {})
}
