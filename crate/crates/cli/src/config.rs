//! Run configuration: a single TOML file with documented keys, fully
//! validated before any computation, plus a small set of command-line
//! overrides (`--seed`, `--out`). Unknown keys are rejected so that a typo
//! cannot silently fall back to a default.

use crate::error::{CliError, Result};
use boltzgen_core::boltzeval::{chain_graph, diatomic_graph, McmcParams, ToyPotential};
use boltzgen_core::diffusion::{make_schedule, NoiseSchedule, ScheduleKind};
use boltzgen_core::encoder::GtnConfig;
use boltzgen_core::graph::MolecularGraph;
use boltzgen_core::score::SchnetConfig;
use boltzgen_core::train::{FinetuneMode, TrainConfig};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Everything a run needs, straight from one TOML file. Every section is
/// optional and falls back to the engine defaults documented per field.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub score: ScoreSection,
    pub schedule: ScheduleSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub sample: SampleSection,
    pub eval: EvalSection,
}

/// Graph-transformer encoder hyperparameters (`[model]`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub pe_dim: usize,
    pub feedforward_dim: usize,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = GtnConfig::default();
        ModelSection {
            layers: d.layers,
            heads: d.heads,
            model_dim: d.model_dim,
            pe_dim: d.pe_dim,
            feedforward_dim: d.feedforward_dim,
            dropout: d.dropout,
        }
    }
}

/// Denoising network hyperparameters (`[score]`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreSection {
    pub interaction_blocks: usize,
    pub feature_dim: usize,
    pub rbf_count: usize,
    /// Interaction cutoff and radial-basis grid end, Å.
    pub r_cut: f64,
    pub time_dim: usize,
    /// Distance floor guarding division by near-coincident atoms, Å.
    pub denom_floor: f64,
}

impl Default for ScoreSection {
    fn default() -> Self {
        let d = SchnetConfig::default();
        ScoreSection {
            interaction_blocks: d.interaction_blocks,
            feature_dim: d.feature_dim,
            rbf_count: d.rbf_count,
            r_cut: d.r_cut,
            time_dim: d.time_dim,
            denom_floor: d.denom_floor,
        }
    }
}

/// Diffusion noise schedule (`[schedule]`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    /// "linear" or "sigmoid".
    pub kind: String,
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            kind: "linear".into(),
            t_max: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Optimization settings (`[train]`), shared by pre-training and
/// fine-tuning.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    /// "full" or "frozen_encoder".
    pub finetune_mode: String,
    /// Batch items per executor job. Fixed independently of the thread
    /// count so that gradient accumulation order — and hence the results —
    /// do not depend on `--threads`.
    pub chunk_items: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            adam_eps: d.adam_eps,
            grad_clip_norm: d.grad_clip_norm,
            seed: d.seed,
            valid_fraction: d.valid_fraction,
            test_fraction: d.test_fraction,
            finetune_mode: "full".into(),
            chunk_items: 8,
        }
    }
}

/// Input and output locations (`[data]`).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// JSON-Lines dataset for pretrain/finetune, and the record source for
    /// `sample` when no SDF file is given.
    pub dataset: Option<PathBuf>,
    /// Input checkpoint for finetune/sample/eval-boltzmann.
    pub checkpoint: Option<PathBuf>,
    /// Output directory; created on demand. Overridden by `--out`.
    pub out_dir: Option<PathBuf>,
}

/// Conformer generation settings (`[sample]`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub n_samples: usize,
    /// Conditioning molecule as an SDF file; takes precedence over
    /// `record`.
    pub sdf: Option<PathBuf>,
    /// Id of the dataset record to condition on; defaults to the first
    /// record when only a dataset is given.
    pub record: Option<String>,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection {
            n_samples: 10,
            sdf: None,
            record: None,
        }
    }
}

/// Boltzmann-recovery evaluation settings (`[eval]`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_samples: usize,
    /// Metropolis proposal standard deviation, Å.
    pub mcmc_step: f64,
    pub mcmc_burn_in: usize,
    pub mcmc_thin: usize,
    pub potential: PotentialSection,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = McmcParams::default();
        EvalSection {
            n_samples: 2000,
            mcmc_step: d.step_size,
            mcmc_burn_in: d.burn_in,
            mcmc_thin: d.thin,
            potential: PotentialSection::default(),
        }
    }
}

/// Toy potential (`[eval.potential]`). `kind` selects which of the
/// parameter fields apply; the rest are ignored.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialSection {
    /// "harmonic_diatomic" or "torsion_chain".
    pub kind: String,
    /// Diatomic: stiffness (k_BT/Å²) and rest length (Å).
    pub k: f64,
    pub d0: f64,
    /// Torsion chain: bond, angle, and torsion-barrier parameters.
    pub bond_k: f64,
    pub bond_d0: f64,
    pub angle_k: f64,
    pub angle_theta0: f64,
    pub torsion_a: f64,
    /// Atomic numbers of the conditioning graph; defaults to carbon/oxygen
    /// for the diatomic and an all-carbon chain.
    pub atoms: Vec<u32>,
}

impl Default for PotentialSection {
    fn default() -> Self {
        PotentialSection {
            kind: "harmonic_diatomic".into(),
            k: 10.0,
            d0: 1.5,
            bond_k: 20.0,
            bond_d0: 1.5,
            angle_k: 5.0,
            angle_theta0: 1.9,
            torsion_a: 0.8,
            atoms: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Apply command-line overrides on top of the file values.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<&Path>) {
        if let Some(s) = seed {
            self.train.seed = s;
        }
        if let Some(o) = out {
            self.data.out_dir = Some(o.to_path_buf());
        }
    }

    pub fn gtn(&self) -> Result<GtnConfig> {
        let cfg = GtnConfig {
            layers: self.model.layers,
            heads: self.model.heads,
            model_dim: self.model.model_dim,
            pe_dim: self.model.pe_dim,
            feedforward_dim: self.model.feedforward_dim,
            dropout: self.model.dropout,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schnet(&self) -> Result<SchnetConfig> {
        let cfg = SchnetConfig {
            interaction_blocks: self.score.interaction_blocks,
            feature_dim: self.score.feature_dim,
            rbf_count: self.score.rbf_count,
            r_cut: self.score.r_cut,
            time_dim: self.score.time_dim,
            denom_floor: self.score.denom_floor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        let kind = ScheduleKind::from_name(&self.schedule.kind).ok_or_else(|| {
            CliError::Usage(format!(
                "schedule.kind must be \"linear\" or \"sigmoid\", got \"{}\"",
                self.schedule.kind
            ))
        })?;
        Ok(make_schedule(
            kind,
            self.schedule.t_max,
            self.schedule.beta_start,
            self.schedule.beta_end,
        )?)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mode = FinetuneMode::from_name(&self.train.finetune_mode).ok_or_else(|| {
            CliError::Usage(format!(
                "train.finetune_mode must be \"full\" or \"frozen_encoder\", got \"{}\"",
                self.train.finetune_mode
            ))
        })?;
        let cfg = TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            adam_eps: self.train.adam_eps,
            grad_clip_norm: self.train.grad_clip_norm,
            seed: self.train.seed,
            valid_fraction: self.train.valid_fraction,
            test_fraction: self.train.test_fraction,
            finetune_mode: mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn chunk_items(&self) -> Result<usize> {
        if self.train.chunk_items < 1 {
            return Err(CliError::Usage("train.chunk_items must be >= 1".into()));
        }
        Ok(self.train.chunk_items)
    }

    pub fn mcmc_params(&self) -> Result<McmcParams> {
        if self.eval.mcmc_thin < 1 {
            return Err(CliError::Usage("eval.mcmc_thin must be >= 1".into()));
        }
        Ok(McmcParams {
            step_size: self.eval.mcmc_step,
            burn_in: self.eval.mcmc_burn_in,
            thin: self.eval.mcmc_thin,
        })
    }

    pub fn potential(&self) -> Result<ToyPotential> {
        let p = &self.eval.potential;
        let pot = match p.kind.as_str() {
            "harmonic_diatomic" => ToyPotential::HarmonicDiatomic { k: p.k, d0: p.d0 },
            "torsion_chain" => ToyPotential::TorsionChain {
                bond_k: p.bond_k,
                bond_d0: p.bond_d0,
                angle_k: p.angle_k,
                angle_theta0: p.angle_theta0,
                torsion_a: p.torsion_a,
            },
            other => {
                return Err(CliError::Usage(format!(
                    "eval.potential.kind must be \"harmonic_diatomic\" or \"torsion_chain\", got \"{other}\""
                )))
            }
        };
        pot.validate()?;
        Ok(pot)
    }

    /// Conditioning graph for the configured potential, built from
    /// `eval.potential.atoms` (or the per-kind default species).
    pub fn potential_graph(&self) -> Result<MolecularGraph> {
        let p = &self.eval.potential;
        match self.potential()? {
            ToyPotential::HarmonicDiatomic { .. } => {
                let atoms = if p.atoms.is_empty() {
                    vec![6, 8]
                } else {
                    p.atoms.clone()
                };
                if atoms.len() != 2 {
                    return Err(CliError::Usage(format!(
                        "harmonic_diatomic needs 2 atoms in eval.potential.atoms, got {}",
                        atoms.len()
                    )));
                }
                Ok(diatomic_graph(atoms[0], atoms[1])?)
            }
            ToyPotential::TorsionChain { .. } => {
                let atoms = if p.atoms.is_empty() {
                    vec![6, 6, 6, 6]
                } else {
                    p.atoms.clone()
                };
                if atoms.len() != 4 {
                    return Err(CliError::Usage(format!(
                        "torsion_chain needs 4 atoms in eval.potential.atoms, got {}",
                        atoms.len()
                    )));
                }
                Ok(chain_graph([atoms[0], atoms[1], atoms[2], atoms[3]])?)
            }
        }
    }

    /// Output directory; `[data].out_dir` or `--out` must provide it for
    /// commands that write files.
    pub fn out_dir(&self) -> Result<&Path> {
        self.data.out_dir.as_deref().ok_or_else(|| {
            CliError::Usage("no output directory: set data.out_dir or pass --out".into())
        })
    }

    /// Dataset path for commands that need one.
    pub fn dataset_path(&self) -> Result<&Path> {
        self.data.dataset.as_deref().ok_or_else(|| {
            CliError::Usage("no dataset: set data.dataset in the config".into())
        })
    }

    /// Input checkpoint path for commands that need one.
    pub fn checkpoint_path(&self) -> Result<&Path> {
        self.data.checkpoint.as_deref().ok_or_else(|| {
            CliError::Usage("no input checkpoint: set data.checkpoint in the config".into())
        })
    }
}

/// Read and parse a TOML run configuration.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Usage(format!("cannot read config {}: {e}", path.display()))
    })?;
    toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}
