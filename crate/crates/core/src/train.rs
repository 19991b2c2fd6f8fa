//! Pre-training of the joint encoder + noise-prediction model, downstream
//! regression fine-tuning, and the checkpoint data carrier.
//!
//! Determinism contract: given a seed, every random decision (parameter
//! init, shuffling, per-item diffusion time and noise, positional-encoding
//! sign flips, dropout masks) is derived from a hierarchical rng stream keyed
//! by stable identifiers — never by worker scheduling. Batches are split into
//! fixed chunks whose gradients are accumulated in chunk order, so a run is
//! bit-reproducible single-threaded and chunk-order-reproducible under any
//! worker count.

use crate::diffusion::{com_noise, com_project, q_sample, squared_error_on, NoiseSchedule};
use crate::encoder::{encode_on, init_gtn, EncodedGraph, GtnConfig};
use crate::error::{CoreError, Result};
use crate::exec::Executor;
use crate::graph::{DatasetRecord, MolecularGraph};
use crate::lappe::laplacian_pe;
use crate::opt::{glorot_uniform, AdamState, ParamSet};
use crate::rng::RngState;
use crate::score::{init_schnet, predict_noise_batch_on, BatchItem, SchnetConfig};
use crate::split::{assign_buckets, split_dataset};
use crate::tape::{Grads, Tape, Var};
use crate::tensor::Tensor;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

pub const CHECKPOINT_VERSION: u32 = 1;

/// How fine-tuning treats the pre-trained encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinetuneMode {
    /// Update encoder and regression head jointly.
    Full,
    /// Update only the regression head; encoder weights stay bit-identical.
    FrozenEncoder,
}

impl FinetuneMode {
    pub fn name(self) -> &'static str {
        match self {
            FinetuneMode::Full => "full",
            FinetuneMode::FrozenEncoder => "frozen_encoder",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "full" => Some(FinetuneMode::Full),
            "frozen_encoder" => Some(FinetuneMode::FrozenEncoder),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub finetune_mode: FinetuneMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: 10.0,
            seed: 0,
            valid_fraction: 0.2,
            test_fraction: 0.0,
            finetune_mode: FinetuneMode::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::InvalidConfig {
                reason: format!("learning_rate must be positive, got {}", self.learning_rate),
            });
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(CoreError::InvalidConfig {
                reason: format!("adam betas must lie in [0, 1), got ({}, {})", self.beta1, self.beta2),
            });
        }
        if self.batch_size < 1 {
            return Err(CoreError::InvalidConfig {
                reason: "batch_size must be >= 1".into(),
            });
        }
        if !(self.adam_eps > 0.0) {
            return Err(CoreError::InvalidConfig {
                reason: format!("adam_eps must be positive, got {}", self.adam_eps),
            });
        }
        if !(0.0..1.0).contains(&self.valid_fraction)
            || !(0.0..1.0).contains(&self.test_fraction)
            || self.valid_fraction + self.test_fraction >= 1.0
        {
            return Err(CoreError::InvalidConfig {
                reason: format!(
                    "valid/test fractions must lie in [0, 1) and leave a training share, got ({}, {})",
                    self.valid_fraction, self.test_fraction
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub seed: u64,
}

/// Everything needed to resume or deploy a model. Serialization lives in the
/// host crate; this is the in-memory carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub gtn: GtnConfig,
    pub schnet: SchnetConfig,
    pub schedule: NoiseSchedule,
    pub params: ParamSet,
    pub meta: TrainMeta,
}

impl Checkpoint {
    /// Fresh random initialization (no training).
    pub fn init(
        gtn: &GtnConfig,
        schnet: &SchnetConfig,
        schedule: &NoiseSchedule,
        seed: u64,
    ) -> Result<Self> {
        let rng = RngState::from_seed(seed).child_tag("init");
        let mut params = init_gtn(gtn, &rng)?;
        params.extend(init_schnet(schnet, gtn.model_dim, &rng)?)?;
        Ok(Checkpoint {
            version: CHECKPOINT_VERSION,
            gtn: gtn.clone(),
            schnet: schnet.clone(),
            schedule: schedule.clone(),
            params,
            meta: TrainMeta {
                best_epoch: 0,
                best_valid_loss: f64::INFINITY,
                seed,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// `None` for the epoch-0 entry (initialization, no training yet).
    pub train_loss: Option<f64>,
    pub valid_loss: f64,
}

#[derive(Debug)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

#[derive(Debug)]
pub struct FinetuneOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub test_mse: f64,
}

/// One (graph, conformation) training item. Items sharing `id` must share
/// the graph — they are conformers of the same record.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a> {
    pub id: &'a str,
    pub graph: &'a MolecularGraph,
    pub conformation: &'a Tensor,
}

struct PreparedItem<'a> {
    id: &'a str,
    graph: &'a MolecularGraph,
    c_t: Tensor,
    eps: Tensor,
    t: usize,
}

/// Draw (t, eps) for one item and form the noised coordinates. The stream is
/// keyed per item position, so draws are independent of chunking.
fn prepare_item<'a>(
    item: &TrainItem<'a>,
    schedule: &NoiseSchedule,
    stream: &RngState,
) -> Result<PreparedItem<'a>> {
    let n = item.graph.n_atoms();
    if item.conformation.rows() != n || item.conformation.cols() != 3 {
        return Err(CoreError::WrongAtomCount {
            expected: n,
            got: item.conformation.rows(),
        });
    }
    let t = stream.child_tag("t").stream().u64_below(schedule.t_max() as u64) as usize + 1;
    let eps = com_noise(&stream.child_tag("eps"), n, 3);
    let c0 = com_project(item.conformation);
    let c_t = q_sample(schedule, &c0, t, &eps)?;
    Ok(PreparedItem {
        id: item.id,
        graph: item.graph,
        c_t,
        eps,
        t,
    })
}

struct ChunkContext<'a> {
    params: &'a ParamSet,
    gtn: &'a GtnConfig,
    schnet: &'a SchnetConfig,
    t_max: usize,
    train_mode: bool,
    /// Source for PE sign flips and dropout; keyed per graph id inside, so a
    /// graph split across chunks sees one consistent augmentation.
    aug_rng: Option<&'a RngState>,
}

/// Forward (and optionally backward) for a chunk of prepared items on one
/// tape. Returns the summed (not averaged) squared-error loss.
fn chunk_loss(ctx: &ChunkContext, chunk: &[PreparedItem], want_grads: bool) -> Result<(f64, Grads)> {
    let mut tape = Tape::new();
    let vars = if want_grads {
        ctx.params.register_on(&mut tape)?
    } else {
        ctx.params.register_frozen_on(&mut tape)
    };

    // Distinct graphs, first-appearance order; encode each once.
    let mut slot_of_id: BTreeMap<&str, usize> = BTreeMap::new();
    let mut graphs: Vec<&MolecularGraph> = Vec::new();
    let mut ids_by_slot: Vec<&str> = Vec::new();
    for it in chunk {
        slot_of_id.entry(it.id).or_insert_with(|| {
            graphs.push(it.graph);
            ids_by_slot.push(it.id);
            graphs.len() - 1
        });
    }
    let mut encoded: Vec<EncodedGraph> = Vec::with_capacity(graphs.len());
    for (slot, &g) in graphs.iter().enumerate() {
        let id = ids_by_slot[slot];
        let pe_rng = ctx
            .aug_rng
            .filter(|_| ctx.train_mode)
            .map(|r| r.child_tag("pe").child_tag(id));
        let pe = laplacian_pe(g, ctx.gtn.pe_dim, pe_rng.as_ref())?;
        let drop_rng = ctx.aug_rng.map(|r| r.child_tag("drop").child_tag(id));
        encoded.push(encode_on(
            &mut tape,
            &vars,
            ctx.gtn,
            g,
            &pe,
            ctx.train_mode,
            drop_rng.as_ref(),
        )?);
    }

    let total_rows: usize = chunk.iter().map(|it| it.graph.n_atoms()).sum();
    let mut coords = Tensor::zeros(&[total_rows, 3]);
    let mut eps_stack = Tensor::zeros(&[total_rows, 3]);
    let mut items = Vec::with_capacity(chunk.len());
    let mut row = 0;
    for it in chunk {
        let n = it.graph.n_atoms();
        for i in 0..n {
            for c in 0..3 {
                coords.set(row + i, c, it.c_t.at(i, c));
                eps_stack.set(row + i, c, it.eps.at(i, c));
            }
        }
        row += n;
        items.push(BatchItem {
            graph_ix: slot_of_id[it.id],
            coords_rows: n,
            t: it.t,
        });
    }
    let coords_var = tape.constant(coords);
    let eps_hat = predict_noise_batch_on(
        &mut tape,
        &vars,
        ctx.schnet,
        &graphs,
        &encoded,
        &items,
        coords_var,
        ctx.t_max,
    )?;
    let loss = squared_error_on(&mut tape, eps_hat, &eps_stack, 1)?;
    let loss_val = tape.value(loss).first();
    if want_grads {
        let grads = tape.backward(loss)?;
        Ok((loss_val, grads))
    } else {
        Ok((loss_val, Grads::default()))
    }
}

/// When a batched step fails with a non-finite value, rerun items one by one
/// (forward only) to name the culprit.
fn attribute_nonfinite(ctx: &ChunkContext, prepared: &[PreparedItem], original: CoreError) -> CoreError {
    if !matches!(
        original,
        CoreError::NonFinite { .. } | CoreError::NonFiniteAtStep { .. }
    ) {
        return original;
    }
    for it in prepared {
        let single = core::slice::from_ref(it);
        match chunk_loss(ctx, single, false) {
            Ok((l, _)) if l.is_finite() => continue,
            _ => {
                return CoreError::InvalidRecord {
                    id: it.id.to_string(),
                    reason: format!("non-finite loss at diffusion time t={}", it.t),
                }
            }
        }
    }
    original
}

fn chunk_ranges(len: usize, chunk: usize) -> Vec<(usize, usize)> {
    let chunk = chunk.max(1);
    let mut out = Vec::new();
    let mut lo = 0;
    while lo < len {
        let hi = (lo + chunk).min(len);
        out.push((lo, hi));
        lo = hi;
    }
    out
}

/// One joint optimization step of encoder and score parameters on a batch of
/// (graph, conformation) items. Per item an independent diffusion time and
/// noise draw are taken from `rng.child(i)`; the batch-mean loss is returned
/// and a single clipped Adam update is applied.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_step(
    params: &mut ParamSet,
    gtn: &GtnConfig,
    schnet: &SchnetConfig,
    batch: &[TrainItem],
    schedule: &NoiseSchedule,
    optim: &mut AdamState,
    cfg: &TrainConfig,
    rng: &RngState,
    executor: &dyn Executor,
    chunk_items: usize,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(CoreError::EmptyData {
            what: "training batch",
        });
    }
    let prepared: Vec<PreparedItem> = batch
        .iter()
        .enumerate()
        .map(|(i, it)| prepare_item(it, schedule, &rng.child(i as u64)))
        .collect::<Result<_>>()?;

    let (mut total_loss, mut grads) = {
        let ctx = ChunkContext {
            params,
            gtn,
            schnet,
            t_max: schedule.t_max(),
            train_mode: true,
            aug_rng: Some(rng),
        };
        let ranges = chunk_ranges(prepared.len(), chunk_items);
        let results = executor.map_grads(ranges.len(), &|ci| {
            let (lo, hi) = ranges[ci];
            chunk_loss(&ctx, &prepared[lo..hi], true)
        });
        let mut total = 0.0;
        let mut grads = Grads::default();
        for r in results {
            match r {
                Ok((l, g)) => {
                    total += l;
                    grads.accumulate(&g)?;
                }
                Err(e) => return Err(attribute_nonfinite(&ctx, &prepared, e)),
            }
        }
        if !total.is_finite() {
            return Err(attribute_nonfinite(
                &ctx,
                &prepared,
                CoreError::NonFinite { op: "batch loss" },
            ));
        }
        (total, grads)
    };
    let inv_n = 1.0 / batch.len() as f64;
    total_loss *= inv_n;
    grads.scale_in_place(inv_n);
    optim.update(
        params,
        &grads,
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.adam_eps,
        cfg.grad_clip_norm,
    )?;
    Ok(total_loss)
}

/// Mean loss over items with a frozen evaluation stream: item `i` always
/// sees the same (t, eps) draw, so the curve is comparable across epochs.
fn eval_loss(
    params: &ParamSet,
    gtn: &GtnConfig,
    schnet: &SchnetConfig,
    schedule: &NoiseSchedule,
    items: &[TrainItem],
    eval_rng: &RngState,
    executor: &dyn Executor,
    chunk_items: usize,
) -> Result<f64> {
    let prepared: Vec<PreparedItem> = items
        .iter()
        .enumerate()
        .map(|(i, it)| prepare_item(it, schedule, &eval_rng.child(i as u64)))
        .collect::<Result<_>>()?;
    let ctx = ChunkContext {
        params,
        gtn,
        schnet,
        t_max: schedule.t_max(),
        train_mode: false,
        aug_rng: None,
    };
    let ranges = chunk_ranges(prepared.len(), chunk_items);
    let results = executor.map_grads(ranges.len(), &|ci| {
        let (lo, hi) = ranges[ci];
        chunk_loss(&ctx, &prepared[lo..hi], false)
    });
    let mut total = 0.0;
    for r in results {
        total += r?.0;
    }
    Ok(total / items.len() as f64)
}

fn shuffled_indices(n: usize, rng: &RngState) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    let mut s = rng.stream();
    for i in (1..n).rev() {
        let j = s.u64_below(i as u64 + 1) as usize;
        v.swap(i, j);
    }
    v
}

/// Pre-train encoder and score network jointly on conformer ensembles.
///
/// Every (record, conformer) pair is one training item; items are split
/// into train/validation by `valid_fraction` (deterministic hash on
/// `"<id>#<conformer>"`). Validation loss is logged at epoch 0 (initialized
/// weights) and after every epoch; the checkpoint with the lowest validation
/// loss is returned, ties broken by the earliest epoch. With an empty
/// validation split (fraction 0), selection falls back to the training
/// items under the frozen evaluation stream.
///
/// `on_epoch` fires after each log entry is recorded (including the
/// epoch-0 baseline) so hosts can report progress.
#[allow(clippy::too_many_arguments)]
pub fn pretrain(
    records: &[DatasetRecord],
    gtn: &GtnConfig,
    schnet: &SchnetConfig,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    executor: &dyn Executor,
    chunk_items: usize,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    gtn.validate()?;
    schnet.validate()?;
    if records.is_empty() {
        return Err(CoreError::EmptyData {
            what: "pre-training dataset",
        });
    }
    let mut seen = BTreeSet::new();
    for r in records {
        r.validate()?;
        if !seen.insert(r.id.as_str()) {
            return Err(CoreError::DuplicateId { id: r.id.clone() });
        }
    }

    let mut items: Vec<TrainItem> = Vec::new();
    let mut keys: Vec<String> = Vec::new();
    for r in records {
        for (ci, conf) in r.ensemble.conformations.iter().enumerate() {
            items.push(TrainItem {
                id: &r.id,
                graph: &r.graph,
                conformation: &conf.coords,
            });
            keys.push(format!("{}#{}", r.id, ci));
        }
    }
    let (train_ix, valid_ix): (Vec<usize>, Vec<usize>) = if cfg.valid_fraction > 0.0 {
        let buckets = assign_buckets(&keys, &[1.0 - cfg.valid_fraction, cfg.valid_fraction], cfg.seed)?;
        let mut train = Vec::new();
        let mut valid = Vec::new();
        for (i, b) in buckets.iter().enumerate() {
            if *b == 0 {
                train.push(i);
            } else {
                valid.push(i);
            }
        }
        (train, valid)
    } else {
        ((0..items.len()).collect(), Vec::new())
    };
    if train_ix.is_empty() {
        return Err(CoreError::EmptyData {
            what: "training split",
        });
    }
    let train_items: Vec<TrainItem> = train_ix.iter().map(|&i| items[i]).collect();
    let valid_items: Vec<TrainItem> = if valid_ix.is_empty() {
        train_items.clone()
    } else {
        valid_ix.iter().map(|&i| items[i]).collect()
    };

    let rng = RngState::from_seed(cfg.seed);
    let mut checkpoint = Checkpoint::init(gtn, schnet, schedule, cfg.seed)?;
    let mut params = checkpoint.params.clone();
    let mut optim = AdamState::new();
    let eval_rng = rng.child_tag("valid");

    let v0 = eval_loss(&params, gtn, schnet, schedule, &valid_items, &eval_rng, executor, chunk_items)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss: None,
        valid_loss: v0,
    }];
    on_epoch(&log[0]);
    let mut best_epoch = 0usize;
    let mut best_valid = v0;
    let mut best_params = params.clone();
    let mut step_counter = 0u64;

    for epoch in 1..=cfg.epochs {
        let order = shuffled_indices(train_items.len(), &rng.child_tag("shuffle").child(epoch as u64));
        let mut epoch_sum = 0.0;
        for block in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainItem> = block.iter().map(|&i| train_items[i]).collect();
            let step_rng = rng.child_tag("step").child(step_counter);
            let loss = pretrain_step(
                &mut params,
                gtn,
                schnet,
                &batch,
                schedule,
                &mut optim,
                cfg,
                &step_rng,
                executor,
                chunk_items,
            )?;
            epoch_sum += loss * batch.len() as f64;
            step_counter += 1;
        }
        let train_loss = epoch_sum / train_items.len() as f64;
        let valid_loss = eval_loss(&params, gtn, schnet, schedule, &valid_items, &eval_rng, executor, chunk_items)?;
        log.push(EpochLog {
            epoch,
            train_loss: Some(train_loss),
            valid_loss,
        });
        on_epoch(log.last().expect("just pushed"));
        if valid_loss < best_valid {
            best_valid = valid_loss;
            best_epoch = epoch;
            best_params = params.clone();
        }
    }

    checkpoint.params = best_params;
    checkpoint.meta = TrainMeta {
        best_epoch,
        best_valid_loss: best_valid,
        seed: cfg.seed,
    };
    Ok(PretrainOutcome {
        checkpoint,
        log,
        best_epoch,
    })
}

/// Two-layer regression head over the pooled latent (`mean(h_v) ++ mean(h_e)`,
/// width `2 * model_dim`).
pub fn init_regression_head(model_dim: usize, rng: &RngState) -> Result<ParamSet> {
    let mut p = ParamSet::new();
    p.insert(
        "head.l1.w",
        glorot_uniform(&rng.child_tag("head.l1.w"), 2 * model_dim, model_dim),
    )?;
    p.insert("head.l1.b", Tensor::zeros(&[1, model_dim]))?;
    p.insert(
        "head.l2.w",
        glorot_uniform(&rng.child_tag("head.l2.w"), model_dim, 1),
    )?;
    p.insert("head.l2.b", Tensor::zeros(&[1, 1]))?;
    Ok(p)
}

/// Pooled readout + head on the tape: `[1, 1]` prediction for one graph.
pub fn regression_forward_on(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    model_dim: usize,
    encoded: &EncodedGraph,
) -> Result<Var> {
    let hv_mean = tape.mean_axis0(encoded.h_v)?;
    let he_mean = if encoded.bonds.is_empty() {
        tape.constant(Tensor::zeros(&[1, model_dim]))
    } else {
        tape.mean_axis0(encoded.h_e)?
    };
    let pooled = tape.concat(hv_mean, he_mean, 1)?;
    let h = tape.linear(pooled, vars["head.l1.w"], vars["head.l1.b"])?;
    let h = tape.relu(h)?;
    tape.linear(h, vars["head.l2.w"], vars["head.l2.b"])
}

/// Forward (and optionally backward) of the regression MSE over a chunk of
/// labeled records. Returns the summed squared error.
fn mse_chunk(
    params: &ParamSet,
    gtn: &GtnConfig,
    mode: FinetuneMode,
    chunk: &[&DatasetRecord],
    train_mode: bool,
    aug_rng: Option<&RngState>,
    want_grads: bool,
) -> Result<(f64, Grads)> {
    let mut tape = Tape::new();
    let vars = if want_grads {
        match mode {
            FinetuneMode::Full => params.register_on(&mut tape)?,
            FinetuneMode::FrozenEncoder => {
                params.register_split_on(&mut tape, &["enc.", "score."])?
            }
        }
    } else {
        params.register_frozen_on(&mut tape)
    };
    let mut preds: Option<Var> = None;
    let mut labels = Vec::with_capacity(chunk.len());
    for r in chunk {
        let pe_rng = aug_rng
            .filter(|_| train_mode)
            .map(|a| a.child_tag("pe").child_tag(&r.id));
        let pe = laplacian_pe(&r.graph, gtn.pe_dim, pe_rng.as_ref())?;
        let drop_rng = aug_rng.map(|a| a.child_tag("drop").child_tag(&r.id));
        let encoded = encode_on(&mut tape, &vars, gtn, &r.graph, &pe, train_mode, drop_rng.as_ref())?;
        let pred = regression_forward_on(&mut tape, &vars, gtn.model_dim, &encoded)?;
        preds = Some(match preds {
            Some(prev) => tape.concat(prev, pred, 0)?,
            None => pred,
        });
        labels.push(r.label.ok_or_else(|| CoreError::MissingLabel { id: r.id.clone() })?);
    }
    let preds = preds.ok_or(CoreError::EmptyData {
        what: "regression chunk",
    })?;
    let n = labels.len();
    let label_col = tape.constant(Tensor::from_vec(&[n, 1], labels)?);
    let diff = tape.sub(preds, label_col)?;
    let sq = tape.mul(diff, diff)?;
    let loss = tape.sum_all(sq)?;
    let loss_val = tape.value(loss).first();
    if want_grads {
        Ok((loss_val, tape.backward(loss)?))
    } else {
        Ok((loss_val, Grads::default()))
    }
}

fn eval_mse(
    params: &ParamSet,
    gtn: &GtnConfig,
    mode: FinetuneMode,
    records: &[&DatasetRecord],
    executor: &dyn Executor,
    chunk_records: usize,
) -> Result<f64> {
    let ranges = chunk_ranges(records.len(), chunk_records);
    let results = executor.map_grads(ranges.len(), &|ci| {
        let (lo, hi) = ranges[ci];
        mse_chunk(params, gtn, mode, &records[lo..hi], false, None, false)
    });
    let mut total = 0.0;
    for r in results {
        total += r?.0;
    }
    Ok(total / records.len() as f64)
}

/// Fine-tune a regression head (optionally the encoder too) on labeled
/// records. Records are hash-split into train/validation/test by
/// `valid_fraction`/`test_fraction` (all three splits must be nonempty).
/// Selects the best epoch by validation MSE and reports test MSE at that
/// epoch. The returned checkpoint carries `head.*` parameters alongside the
/// (possibly updated) encoder and untouched score parameters.
///
/// `on_epoch` fires after each log entry is recorded (including the
/// epoch-0 baseline) so hosts can report progress.
pub fn finetune(
    checkpoint: &Checkpoint,
    records: &[DatasetRecord],
    cfg: &TrainConfig,
    executor: &dyn Executor,
    chunk_records: usize,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(CoreError::EmptyData {
            what: "fine-tuning dataset",
        });
    }
    for r in records {
        r.validate()?;
        if r.label.is_none() {
            return Err(CoreError::MissingLabel { id: r.id.clone() });
        }
    }
    if cfg.valid_fraction <= 0.0 || cfg.test_fraction <= 0.0 {
        return Err(CoreError::InvalidConfig {
            reason: "fine-tuning needs valid_fraction > 0 and test_fraction > 0".into(),
        });
    }
    let train_fraction = 1.0 - cfg.valid_fraction - cfg.test_fraction;
    let (train, valid, test) = split_dataset(
        records,
        (train_fraction, cfg.valid_fraction, cfg.test_fraction),
        cfg.seed,
    )?;
    for (split, name) in [(&train, "train"), (&valid, "validation"), (&test, "test")] {
        if split.is_empty() {
            return Err(CoreError::EmptyData {
                what: match name {
                    "train" => "fine-tuning train split",
                    "validation" => "fine-tuning validation split",
                    _ => "fine-tuning test split",
                },
            });
        }
    }

    let rng = RngState::from_seed(cfg.seed).child_tag("finetune");
    let mut params = ParamSet::new();
    for (name, value) in checkpoint.params.iter() {
        if !name.starts_with("head.") {
            params.insert(name, value.clone())?;
        }
    }
    params.extend(init_regression_head(checkpoint.gtn.model_dim, &rng.child_tag("init"))?)?;
    let mut optim = AdamState::new();
    let gtn = &checkpoint.gtn;
    let mode = cfg.finetune_mode;

    let v0 = eval_mse(&params, gtn, mode, &valid, executor, chunk_records)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss: None,
        valid_loss: v0,
    }];
    on_epoch(&log[0]);
    let mut best_epoch = 0usize;
    let mut best_valid = v0;
    let mut best_params = params.clone();
    let mut step_counter = 0u64;

    for epoch in 1..=cfg.epochs {
        let order = shuffled_indices(train.len(), &rng.child_tag("shuffle").child(epoch as u64));
        let mut epoch_sum = 0.0;
        for block in order.chunks(cfg.batch_size) {
            let batch: Vec<&DatasetRecord> = block.iter().map(|&i| train[i]).collect();
            let step_rng = rng.child_tag("step").child(step_counter);
            let (mut loss, mut grads) = {
                let ranges = chunk_ranges(batch.len(), chunk_records);
                let results = executor.map_grads(ranges.len(), &|ci| {
                    let (lo, hi) = ranges[ci];
                    mse_chunk(&params, gtn, mode, &batch[lo..hi], true, Some(&step_rng), true)
                });
                let mut total = 0.0;
                let mut grads = Grads::default();
                for r in results {
                    let (l, g) = r?;
                    total += l;
                    grads.accumulate(&g)?;
                }
                (total, grads)
            };
            let inv_n = 1.0 / batch.len() as f64;
            loss *= inv_n;
            grads.scale_in_place(inv_n);
            optim.update(
                &mut params,
                &grads,
                cfg.learning_rate,
                cfg.beta1,
                cfg.beta2,
                cfg.adam_eps,
                cfg.grad_clip_norm,
            )?;
            epoch_sum += loss * batch.len() as f64;
            step_counter += 1;
        }
        let train_loss = epoch_sum / train.len() as f64;
        let valid_loss = eval_mse(&params, gtn, mode, &valid, executor, chunk_records)?;
        log.push(EpochLog {
            epoch,
            train_loss: Some(train_loss),
            valid_loss,
        });
        on_epoch(log.last().expect("just pushed"));
        if valid_loss < best_valid {
            best_valid = valid_loss;
            best_epoch = epoch;
            best_params = params.clone();
        }
    }

    let test_mse = eval_mse(&best_params, gtn, mode, &test, executor, chunk_records)?;
    let out_checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        gtn: checkpoint.gtn.clone(),
        schnet: checkpoint.schnet.clone(),
        schedule: checkpoint.schedule.clone(),
        params: best_params,
        meta: TrainMeta {
            best_epoch,
            best_valid_loss: best_valid,
            seed: cfg.seed,
        },
    };
    Ok(FinetuneOutcome {
        checkpoint: out_checkpoint,
        log,
        best_epoch,
        test_mse,
    })
}
