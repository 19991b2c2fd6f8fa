//! Checkpoint files: an 8-byte little-endian header length, a JSON header
//! (configs, schedule, metadata, and a manifest of named tensors with dtype,
//! shape, and byte offsets), then raw little-endian tensor blobs in manifest
//! order.
//!
//! The manifest must tile the blob region exactly — byte for byte — so a
//! truncated or padded file is rejected before any tensor is built, and
//! `load(save(x)) == x` bit-exactly, including storage dtype. Writes go
//! through a temporary file renamed into place, so a crash mid-write never
//! leaves a half-written checkpoint behind.

use crate::error::{CliError, Result};
use boltzgen_core::diffusion::NoiseSchedule;
use boltzgen_core::encoder::GtnConfig;
use boltzgen_core::opt::ParamSet;
use boltzgen_core::score::SchnetConfig;
use boltzgen_core::train::{Checkpoint, TrainMeta, CHECKPOINT_VERSION};
use boltzgen_core::{Dtype, Tensor};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

const FORMAT_TAG: &str = "boltzgen-checkpoint";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    encoder: EncoderJson,
    score: ScoreJson,
    schedule: ScheduleJson,
    meta: MetaJson,
    manifest: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderJson {
    layers: usize,
    heads: usize,
    model_dim: usize,
    pe_dim: usize,
    feedforward_dim: usize,
    dropout: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreJson {
    interaction_blocks: usize,
    feature_dim: usize,
    rbf_count: usize,
    r_cut: f64,
    time_dim: usize,
    denom_floor: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleJson {
    betas: Vec<f64>,
}

/// Validation loss is stored as raw f64 bits: a freshly initialized
/// checkpoint carries +inf, which plain JSON numbers cannot represent.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaJson {
    best_epoch: usize,
    best_valid_loss_bits: u64,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    len_bytes: usize,
}

fn element_bytes(dtype: Dtype) -> usize {
    match dtype {
        Dtype::F64 => 8,
        Dtype::F32 => 4,
    }
}

fn dtype_from_name(name: &str) -> Option<Dtype> {
    match name {
        "f64" => Some(Dtype::F64),
        "f32" => Some(Dtype::F32),
        _ => None,
    }
}

fn integrity(path: &Path, msg: String) -> CliError {
    CliError::Data(format!("checkpoint {}: {msg}", path.display()))
}

/// Serialize and atomically write a checkpoint.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut manifest = Vec::with_capacity(ckpt.params.len());
    let mut offset = 0usize;
    for (name, tensor) in ckpt.params.iter() {
        let len_bytes = tensor.len() * element_bytes(tensor.dtype());
        manifest.push(ManifestEntry {
            name: name.clone(),
            dtype: tensor.dtype().name().to_string(),
            shape: tensor.shape().to_vec(),
            offset,
            len_bytes,
        });
        offset += len_bytes;
    }
    let header = Header {
        format: FORMAT_TAG.to_string(),
        version: ckpt.version,
        encoder: EncoderJson {
            layers: ckpt.gtn.layers,
            heads: ckpt.gtn.heads,
            model_dim: ckpt.gtn.model_dim,
            pe_dim: ckpt.gtn.pe_dim,
            feedforward_dim: ckpt.gtn.feedforward_dim,
            dropout: ckpt.gtn.dropout,
        },
        score: ScoreJson {
            interaction_blocks: ckpt.schnet.interaction_blocks,
            feature_dim: ckpt.schnet.feature_dim,
            rbf_count: ckpt.schnet.rbf_count,
            r_cut: ckpt.schnet.r_cut,
            time_dim: ckpt.schnet.time_dim,
            denom_floor: ckpt.schnet.denom_floor,
        },
        schedule: ScheduleJson {
            betas: ckpt.schedule.betas().to_vec(),
        },
        meta: MetaJson {
            best_epoch: ckpt.meta.best_epoch,
            best_valid_loss_bits: ckpt.meta.best_valid_loss.to_bits(),
            seed: ckpt.meta.seed,
        },
        manifest,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| CliError::Data(format!("cannot serialize checkpoint header: {e}")))?;

    let mut bytes = Vec::with_capacity(8 + header_json.len() + offset);
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, tensor) in ckpt.params.iter() {
        match tensor.dtype() {
            Dtype::F64 => {
                for &v in tensor.data() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            Dtype::F32 => {
                for &v in tensor.data() {
                    bytes.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
    }

    let io_err =
        |e: std::io::Error| CliError::Data(format!("cannot write {}: {e}", path.display()));
    let tmp = path.with_extension("tmp");
    let mut file = std::fs::File::create(&tmp).map_err(io_err)?;
    file.write_all(&bytes).map_err(io_err)?;
    file.sync_all().map_err(io_err)?;
    drop(file);
    std::fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

/// Read the file, parse and verify the header, and return it with the blob
/// region. Every manifest entry is checked against dtype/shape arithmetic
/// and the region must be tiled exactly.
fn load_verified(path: &Path) -> Result<(Header, Vec<u8>)> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    if bytes.len() < 8 {
        return Err(integrity(path, format!("{} bytes, too short for a header", bytes.len())));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 8 + header_len {
        return Err(integrity(
            path,
            format!(
                "truncated: header claims {header_len} bytes, file has {} after the length field",
                bytes.len() - 8
            ),
        ));
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| integrity(path, format!("bad header: {e}")))?;
    if header.format != FORMAT_TAG {
        return Err(integrity(path, format!("not a checkpoint (format tag \"{}\")", header.format)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(integrity(
            path,
            format!(
                "unsupported version {} (this build reads version {CHECKPOINT_VERSION})",
                header.version
            ),
        ));
    }
    let blobs = bytes[8 + header_len..].to_vec();
    let mut expected = 0usize;
    for entry in &header.manifest {
        let dtype = dtype_from_name(&entry.dtype)
            .ok_or_else(|| integrity(path, format!("tensor '{}': unknown dtype \"{}\"", entry.name, entry.dtype)))?;
        let count: usize = entry.shape.iter().product();
        if entry.len_bytes != count * element_bytes(dtype) {
            return Err(integrity(
                path,
                format!(
                    "tensor '{}': {} bytes inconsistent with shape {:?} of {}",
                    entry.name, entry.len_bytes, entry.shape, entry.dtype
                ),
            ));
        }
        if entry.offset != expected {
            return Err(integrity(
                path,
                format!("tensor '{}': offset {} does not follow the previous blob", entry.name, entry.offset),
            ));
        }
        expected += entry.len_bytes;
    }
    if expected != blobs.len() {
        return Err(integrity(
            path,
            format!(
                "length mismatch: manifest describes {expected} blob bytes, file carries {}",
                blobs.len()
            ),
        ));
    }
    Ok((header, blobs))
}

/// Load a checkpoint, verifying integrity before any tensor is built.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (header, blobs) = load_verified(path)?;
    let mut params = ParamSet::new();
    for entry in &header.manifest {
        let dtype = dtype_from_name(&entry.dtype).expect("verified above");
        let region = &blobs[entry.offset..entry.offset + entry.len_bytes];
        let data: Vec<f64> = match dtype {
            Dtype::F64 => region
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
            Dtype::F32 => region
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
                .collect(),
        };
        let tensor = Tensor::from_vec(&entry.shape, data).map_err(CliError::from)?;
        let tensor = match dtype {
            Dtype::F64 => tensor,
            Dtype::F32 => tensor.to_f32_storage(),
        };
        params
            .insert(&entry.name, tensor)
            .map_err(|e| integrity(path, e.to_string()))?;
    }
    let gtn = GtnConfig {
        layers: header.encoder.layers,
        heads: header.encoder.heads,
        model_dim: header.encoder.model_dim,
        pe_dim: header.encoder.pe_dim,
        feedforward_dim: header.encoder.feedforward_dim,
        dropout: header.encoder.dropout,
    };
    gtn.validate()?;
    let schnet = SchnetConfig {
        interaction_blocks: header.score.interaction_blocks,
        feature_dim: header.score.feature_dim,
        rbf_count: header.score.rbf_count,
        r_cut: header.score.r_cut,
        time_dim: header.score.time_dim,
        denom_floor: header.score.denom_floor,
    };
    schnet.validate()?;
    let schedule = NoiseSchedule::from_betas(header.schedule.betas.clone())?;
    Ok(Checkpoint {
        version: header.version,
        gtn,
        schnet,
        schedule,
        params,
        meta: TrainMeta {
            best_epoch: header.meta.best_epoch,
            best_valid_loss: f64::from_bits(header.meta.best_valid_loss_bits),
            seed: header.meta.seed,
        },
    })
}

/// Human-readable description of a checkpoint file: configs, metadata, and
/// the full tensor manifest. Verifies integrity the same way loading does.
pub fn describe_checkpoint(path: &Path) -> Result<String> {
    let (header, blobs) = load_verified(path)?;
    let mut out = String::new();
    let _ = writeln!(out, "checkpoint version {}", header.version);
    let _ = writeln!(
        out,
        "encoder: layers={} heads={} model_dim={} pe_dim={} feedforward_dim={} dropout={}",
        header.encoder.layers,
        header.encoder.heads,
        header.encoder.model_dim,
        header.encoder.pe_dim,
        header.encoder.feedforward_dim,
        header.encoder.dropout
    );
    let _ = writeln!(
        out,
        "score: blocks={} feature_dim={} rbf_count={} r_cut={} time_dim={}",
        header.score.interaction_blocks,
        header.score.feature_dim,
        header.score.rbf_count,
        header.score.r_cut,
        header.score.time_dim
    );
    let betas = &header.schedule.betas;
    let _ = writeln!(
        out,
        "schedule: T={} beta_1={:.3e} beta_T={:.3e}",
        betas.len(),
        betas.first().copied().unwrap_or(f64::NAN),
        betas.last().copied().unwrap_or(f64::NAN)
    );
    let _ = writeln!(
        out,
        "meta: best_epoch={} best_valid_loss={} seed={}",
        header.meta.best_epoch,
        f64::from_bits(header.meta.best_valid_loss_bits),
        header.meta.seed
    );
    let _ = writeln!(
        out,
        "tensors: {} entries, {} blob bytes",
        header.manifest.len(),
        blobs.len()
    );
    for entry in &header.manifest {
        let _ = writeln!(
            out,
            "  {:<40} {:<4} {:>12} offset {:>9} ({} bytes)",
            entry.name,
            entry.dtype,
            format!("{:?}", entry.shape),
            entry.offset,
            entry.len_bytes
        );
    }
    Ok(out)
}
