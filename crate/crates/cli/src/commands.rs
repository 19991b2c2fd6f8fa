//! Implementations behind the `boltzgen` subcommands. They live in the
//! library so integration tests can call them in-process; `main` only
//! parses flags and dispatches here.
//!
//! Conventions shared by every command: progress goes to standard error,
//! machine-readable results go to files under the output directory, inputs
//! are never modified, and configuration problems abort before anything is
//! written.

use crate::checkpoint::{describe_checkpoint, load_checkpoint, save_checkpoint};
use crate::config::{load_config, RunConfig};
use crate::error::{CliError, Result};
use crate::exec::ThreadPool;
use crate::jsonl::load_dataset;
use crate::metrics::{save_metrics, MetricsFile};
use crate::sdf::{parse_sdf, write_sd_file};
use boltzgen_core::boltzeval::{
    chain_coords, chain_graph, evaluate_generator, stacked_to_ensemble, BoltzEvalReport,
    EnsembleStats,
};
use boltzgen_core::diffusion::{
    ancestral_sample_batch, loss_term_with_eps, NetworkDenoiser, NoiseSchedule,
};
use boltzgen_core::encoder::{encode, encode_on, GtnConfig};
use boltzgen_core::gradcheck::grad_check;
use boltzgen_core::graph::{DatasetRecord, MolecularGraph};
use boltzgen_core::lappe::laplacian_pe;
use boltzgen_core::rng::RngState;
use boltzgen_core::score::SchnetConfig;
use boltzgen_core::train::{finetune, pretrain, Checkpoint, EpochLog};
use serde::Serialize;
use std::path::Path;
use std::time::Instant;

/// Flags shared by the training/sampling/evaluation commands.
pub struct RunOpts<'a> {
    pub config: &'a Path,
    pub seed: Option<u64>,
    pub threads: usize,
    pub out: Option<&'a Path>,
}

fn prepared_config(opts: &RunOpts<'_>) -> Result<RunConfig> {
    let mut cfg = load_config(opts.config)?;
    cfg.apply_overrides(opts.seed, opts.out);
    Ok(cfg)
}

fn epoch_progress(log: &EpochLog) {
    match log.train_loss {
        Some(t) => eprintln!(
            "epoch {:>4}: train_loss {:.6e}  valid_loss {:.6e}",
            log.epoch, t, log.valid_loss
        ),
        None => eprintln!(
            "epoch {:>4}: valid_loss {:.6e} (initialization)",
            log.epoch, log.valid_loss
        ),
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create output directory {}: {e}", dir.display())))
}

/// Pre-train the conditional denoiser; writes `checkpoint.bin` and
/// `metrics.json` to the output directory.
pub fn cmd_pretrain(opts: &RunOpts<'_>) -> Result<()> {
    let cfg = prepared_config(opts)?;
    let gtn = cfg.gtn()?;
    let schnet = cfg.schnet()?;
    let schedule = cfg.noise_schedule()?;
    let train_cfg = cfg.train_config()?;
    let chunk = cfg.chunk_items()?;
    let out_dir = cfg.out_dir()?.to_path_buf();
    let dataset_path = cfg.dataset_path()?.to_path_buf();

    let records = load_dataset(&dataset_path)?;
    ensure_out_dir(&out_dir)?;
    let pool = ThreadPool::new(opts.threads);
    eprintln!(
        "pretraining on {} records for {} epochs (seed {}, {} threads)",
        records.len(),
        train_cfg.epochs,
        train_cfg.seed,
        pool.workers()
    );
    let start = Instant::now();
    let outcome = pretrain(
        &records,
        &gtn,
        &schnet,
        &schedule,
        &train_cfg,
        &pool,
        chunk,
        &mut epoch_progress,
    )?;
    let wall = start.elapsed().as_secs_f64();

    let ckpt_path = out_dir.join("checkpoint.bin");
    save_checkpoint(&outcome.checkpoint, &ckpt_path)?;
    let metrics = MetricsFile::new(
        train_cfg.seed,
        &outcome.log,
        outcome.best_epoch,
        outcome.checkpoint.meta.best_valid_loss,
        None,
        wall,
    );
    let metrics_path = out_dir.join("metrics.json");
    save_metrics(&metrics, &metrics_path)?;
    eprintln!(
        "wrote {} and {} (best epoch {}, {:.1}s)",
        ckpt_path.display(),
        metrics_path.display(),
        outcome.best_epoch,
        wall
    );
    Ok(())
}

/// Fine-tune a regression head on labeled records; writes `checkpoint.bin`
/// and `metrics.json` (with test MSE) to the output directory.
pub fn cmd_finetune(opts: &RunOpts<'_>) -> Result<()> {
    let cfg = prepared_config(opts)?;
    let train_cfg = cfg.train_config()?;
    let chunk = cfg.chunk_items()?;
    let out_dir = cfg.out_dir()?.to_path_buf();
    let ckpt_in = cfg.checkpoint_path()?.to_path_buf();
    let dataset_path = cfg.dataset_path()?.to_path_buf();

    let base = load_checkpoint(&ckpt_in)?;
    let records = load_dataset(&dataset_path)?;
    ensure_out_dir(&out_dir)?;
    let pool = ThreadPool::new(opts.threads);
    eprintln!(
        "fine-tuning ({}) on {} labeled records for {} epochs (seed {}, {} threads)",
        train_cfg.finetune_mode.name(),
        records.len(),
        train_cfg.epochs,
        train_cfg.seed,
        pool.workers()
    );
    let start = Instant::now();
    let outcome = finetune(&base, &records, &train_cfg, &pool, chunk, &mut epoch_progress)?;
    let wall = start.elapsed().as_secs_f64();

    let ckpt_path = out_dir.join("checkpoint.bin");
    save_checkpoint(&outcome.checkpoint, &ckpt_path)?;
    let metrics = MetricsFile::new(
        train_cfg.seed,
        &outcome.log,
        outcome.best_epoch,
        outcome.checkpoint.meta.best_valid_loss,
        Some(outcome.test_mse),
        wall,
    );
    let metrics_path = out_dir.join("metrics.json");
    save_metrics(&metrics, &metrics_path)?;
    eprintln!(
        "wrote {} and {} (best epoch {}, test MSE {:.6e}, {:.1}s)",
        ckpt_path.display(),
        metrics_path.display(),
        outcome.best_epoch,
        outcome.test_mse,
        wall
    );
    Ok(())
}

#[derive(Serialize)]
struct SamplesJson<'a> {
    id: &'a str,
    n_samples: usize,
    n_atoms: usize,
    conformers: Vec<Vec<[f64; 3]>>,
}

/// Generate conformations conditioned on one molecule; writes
/// `samples.sdf` and `samples.json` to the output directory.
pub fn cmd_sample(opts: &RunOpts<'_>) -> Result<()> {
    let cfg = prepared_config(opts)?;
    let n = cfg.sample.n_samples;
    if n < 1 {
        return Err(CliError::Usage("sample.n_samples must be >= 1".into()));
    }
    let chunk = cfg.chunk_items()?;
    let out_dir = cfg.out_dir()?.to_path_buf();
    let ckpt_path = cfg.checkpoint_path()?.to_path_buf();

    let ckpt = load_checkpoint(&ckpt_path)?;
    let (graph, id) = conditioning_graph(&cfg)?;
    ensure_out_dir(&out_dir)?;

    let pool = ThreadPool::new(opts.threads);
    let rng = RngState::from_seed(cfg.train.seed).child_tag("sample");
    let pe = laplacian_pe(&graph, ckpt.gtn.pe_dim, None)?;
    let latent = encode(&ckpt.params, &ckpt.gtn, &graph, &pe, false, None)?;
    let denoiser = NetworkDenoiser {
        params: &ckpt.params,
        config: &ckpt.schnet,
        graph: &graph,
        latent: &latent,
        t_max: ckpt.schedule.t_max(),
        executor: &pool,
        chunk_items: chunk,
    };
    eprintln!(
        "sampling {n} conformations of '{id}' ({} atoms, T={}, seed {})",
        graph.n_atoms(),
        ckpt.schedule.t_max(),
        cfg.train.seed
    );
    let stacked = ancestral_sample_batch(&ckpt.schedule, &denoiser, n, &rng, |t, _| {
        if t % 200 == 0 {
            eprintln!("  denoising step t={t}");
        }
    })?;
    let ensemble = stacked_to_ensemble(&stacked, graph.n_atoms(), n)?;

    let sdf_path = out_dir.join("samples.sdf");
    let sd_text = write_sd_file(&graph, &ensemble.conformations, &id)?;
    std::fs::write(&sdf_path, sd_text.as_bytes())
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", sdf_path.display())))?;

    let json_path = out_dir.join("samples.json");
    let payload = SamplesJson {
        id: &id,
        n_samples: n,
        n_atoms: graph.n_atoms(),
        conformers: ensemble
            .conformations
            .iter()
            .map(|c| {
                (0..c.coords.rows())
                    .map(|r| [c.coords.at(r, 0), c.coords.at(r, 1), c.coords.at(r, 2)])
                    .collect()
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&payload)
        .map_err(|e| CliError::Data(format!("cannot serialize samples: {e}")))?;
    std::fs::write(&json_path, json.as_bytes())
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", json_path.display())))?;
    eprintln!("wrote {} and {}", sdf_path.display(), json_path.display());
    Ok(())
}

/// The molecule `sample` conditions on: an SDF file if configured, else a
/// record from the dataset (by id, or the first one).
fn conditioning_graph(cfg: &RunConfig) -> Result<(MolecularGraph, String)> {
    if let Some(sdf_path) = &cfg.sample.sdf {
        let text = std::fs::read_to_string(sdf_path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", sdf_path.display())))?;
        let (graph, _, title) = parse_sdf(&text)?;
        let id = if title.is_empty() {
            sdf_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "molecule".into())
        } else {
            title
        };
        return Ok((graph, id));
    }
    let dataset_path = cfg.data.dataset.as_deref().ok_or_else(|| {
        CliError::Usage("sample needs a molecule: set sample.sdf or data.dataset".into())
    })?;
    let records = load_dataset(dataset_path)?;
    let record: DatasetRecord = match &cfg.sample.record {
        Some(id) => records
            .into_iter()
            .find(|r| &r.id == id)
            .ok_or_else(|| {
                CliError::Data(format!(
                    "no record '{id}' in {}",
                    dataset_path.display()
                ))
            })?,
        None => records.into_iter().next().ok_or_else(|| {
            CliError::Data(format!("dataset {} is empty", dataset_path.display()))
        })?,
    };
    Ok((record.graph, record.id))
}

fn stats_json(stats: &EnsembleStats) -> serde_json::Value {
    serde_json::json!({
        "feature": stats.feature,
        "mean": stats.mean,
        "variance": stats.variance,
        "values": stats.values,
        "histogram": {
            "lo": stats.histogram.lo,
            "hi": stats.histogram.hi,
            "counts": stats.histogram.counts,
        },
    })
}

fn report_json(report: &BoltzEvalReport) -> serde_json::Value {
    serde_json::json!({
        "features": {
            "generated": stats_json(&report.generated),
            "oracle": stats_json(&report.oracle),
        },
        "w1": { report.feature: report.w1 },
        "mode_mass": report.mode_mass.map(|(a, b)| vec![a, b]),
        "oracle_acceptance_rate": report.oracle_acceptance_rate,
        "n_samples": report.n_samples,
    })
}

/// Compare the generator's ensemble against a fresh MCMC oracle of the
/// configured toy potential; writes `boltzeval.json`.
pub fn cmd_eval_boltzmann(opts: &RunOpts<'_>) -> Result<()> {
    let cfg = prepared_config(opts)?;
    let potential = cfg.potential()?;
    let graph = cfg.potential_graph()?;
    let mcmc = cfg.mcmc_params()?;
    let n = cfg.eval.n_samples;
    if n < 1 {
        return Err(CliError::Usage("eval.n_samples must be >= 1".into()));
    }
    let chunk = cfg.chunk_items()?;
    let out_dir = cfg.out_dir()?.to_path_buf();
    let ckpt_path = cfg.checkpoint_path()?.to_path_buf();

    let ckpt = load_checkpoint(&ckpt_path)?;
    ensure_out_dir(&out_dir)?;
    let pool = ThreadPool::new(opts.threads);
    let rng = RngState::from_seed(cfg.train.seed).child_tag("eval");
    eprintln!(
        "evaluating {n} generated vs oracle samples (seed {}, {} threads)",
        cfg.train.seed,
        pool.workers()
    );
    let start = Instant::now();
    let report = evaluate_generator(&ckpt, &graph, &potential, n, &mcmc, &rng, &pool, chunk)?;
    let wall = start.elapsed().as_secs_f64();

    let report_path = out_dir.join("boltzeval.json");
    let json = serde_json::to_string_pretty(&report_json(&report))
        .map_err(|e| CliError::Data(format!("cannot serialize report: {e}")))?;
    std::fs::write(&report_path, json.as_bytes())
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", report_path.display())))?;
    eprintln!(
        "wrote {} ({} W1 {:.4}, oracle acceptance {:.3}, {:.1}s)",
        report_path.display(),
        report.feature,
        report.w1,
        report.oracle_acceptance_rate,
        wall
    );
    Ok(())
}

/// Threshold above which `gradcheck` fails with a numerical exit code.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Verify autodiff gradients of the full training loss against central
/// differences on a small probe model (one encoder layer, one interaction
/// block, a 4-atom molecule). Prints the max relative error to stdout and
/// returns it.
pub fn cmd_gradcheck(seed: u64) -> Result<f64> {
    let gtn = GtnConfig {
        layers: 1,
        heads: 2,
        model_dim: 8,
        pe_dim: 2,
        feedforward_dim: 16,
        dropout: 0.0,
    };
    let schnet = SchnetConfig {
        interaction_blocks: 1,
        feature_dim: 8,
        rbf_count: 8,
        r_cut: 10.0,
        time_dim: 8,
        denom_floor: 1e-6,
    };
    // Short schedule: gradcheck only needs one valid diffusion time, not a
    // sampling-grade terminal signal-to-noise ratio.
    let schedule = NoiseSchedule::from_betas(vec![0.05, 0.1, 0.2, 0.3])?;
    let graph = chain_graph([6, 7, 8, 6])?;
    let coords = chain_coords(1.5, 1.9, 1.0)?;
    let pe = laplacian_pe(&graph, gtn.pe_dim, None)?;
    let rng = RngState::from_seed(seed).child_tag("gradcheck");
    let eps = rng.gaussian(&[graph.n_atoms(), 3]);
    let t = 3usize;
    let params = Checkpoint::init(&gtn, &schnet, &schedule, seed)?.params;

    eprintln!(
        "checking {} parameters against central differences (seed {seed})",
        params.len()
    );
    let max_rel = grad_check(
        |p, tape| {
            let vars = p.register_on(tape)?;
            let encoded = encode_on(tape, &vars, &gtn, &graph, &pe, false, None)?;
            loss_term_with_eps(
                tape, &vars, &schnet, &graph, &encoded, &schedule, &coords, t, &eps,
            )
        },
        &params,
        1e-5,
    )?;
    println!("max relative gradient error: {max_rel:.3e}");
    if max_rel >= GRADCHECK_TOLERANCE {
        return Err(CliError::Numeric(format!(
            "gradient check failed: max relative error {max_rel:.3e} >= {GRADCHECK_TOLERANCE:.0e}"
        )));
    }
    Ok(max_rel)
}

/// Print a checkpoint's configuration and tensor manifest to stdout.
pub fn cmd_inspect(path: &Path) -> Result<()> {
    print!("{}", describe_checkpoint(path)?);
    Ok(())
}
