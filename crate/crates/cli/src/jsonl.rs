//! JSON-Lines dataset files: one record per line,
//!
//! ```text
//! {"id": str,
//!  "graph": {"atoms": [{"z": int, "q": int}, ...],
//!            "bonds": [[i, j, "single|double|triple|aromatic"], ...]},
//!  "conformers": [[[x, y, z], ...], ...],
//!  "label": float | null}
//! ```
//!
//! Coordinates are in Å. Loading validates every record against the data
//! model (graph connectivity, atom counts, finite coordinates) and reports
//! errors with the file line number. Saving writes the same schema back, so
//! load → save → load is the identity.

use crate::error::{CliError, Result};
use boltzgen_core::graph::{
    Atom, Bond, BondOrder, Conformation, ConformerEnsemble, DatasetRecord, MolecularGraph,
};
use boltzgen_core::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    graph: GraphJson,
    conformers: Vec<Vec<[f64; 3]>>,
    label: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphJson {
    atoms: Vec<AtomJson>,
    bonds: Vec<(usize, usize, String)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomJson {
    z: u32,
    q: i32,
}

fn record_from_line(line: &RecordLine) -> std::result::Result<DatasetRecord, String> {
    let atoms: Vec<Atom> = line
        .graph
        .atoms
        .iter()
        .map(|a| Atom {
            atomic_number: a.z,
            formal_charge: a.q,
        })
        .collect();
    let mut bonds = Vec::with_capacity(line.graph.bonds.len());
    for (i, j, order) in &line.graph.bonds {
        let order = BondOrder::from_name(order)
            .ok_or_else(|| format!("record '{}': unknown bond order \"{order}\"", line.id))?;
        bonds.push(Bond { i: *i, j: *j, order });
    }
    let graph = MolecularGraph::new(atoms, bonds)
        .map_err(|e| format!("record '{}': {e}", line.id))?;
    let mut conformations = Vec::with_capacity(line.conformers.len());
    for rows in &line.conformers {
        let c = Conformation::new(Tensor::from_rows3(rows))
            .map_err(|e| format!("record '{}': {e}", line.id))?;
        conformations.push(c);
    }
    let record = DatasetRecord {
        id: line.id.clone(),
        graph,
        ensemble: ConformerEnsemble { conformations },
        label: line.label,
    };
    record.validate().map_err(|e| e.to_string())?;
    Ok(record)
}

fn line_from_record(record: &DatasetRecord) -> RecordLine {
    RecordLine {
        id: record.id.clone(),
        graph: GraphJson {
            atoms: record
                .graph
                .atoms
                .iter()
                .map(|a| AtomJson {
                    z: a.atomic_number,
                    q: a.formal_charge,
                })
                .collect(),
            bonds: record
                .graph
                .bonds
                .iter()
                .map(|b| (b.i, b.j, b.order.name().to_string()))
                .collect(),
        },
        conformers: record
            .ensemble
            .conformations
            .iter()
            .map(|c| {
                (0..c.coords.rows())
                    .map(|r| [c.coords.at(r, 0), c.coords.at(r, 1), c.coords.at(r, 2)])
                    .collect()
            })
            .collect(),
        label: record.label,
    }
}

/// Load a dataset, validating every record. Blank lines are ignored; an
/// empty file yields an empty list. Errors name the file and 1-based line.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read dataset {}: {e}", path.display())))?;
    parse_dataset(&text).map_err(|(line_no, msg)| {
        CliError::Data(format!("{}:{line_no}: {msg}", path.display()))
    })
}

/// Parse JSON-Lines text; errors carry the 1-based line number.
pub fn parse_dataset(text: &str) -> std::result::Result<Vec<DatasetRecord>, (usize, String)> {
    let mut records = Vec::new();
    for (ix, raw) in text.lines().enumerate() {
        let line_no = ix + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine =
            serde_json::from_str(raw).map_err(|e| (line_no, e.to_string()))?;
        let record = record_from_line(&parsed).map_err(|msg| (line_no, msg))?;
        records.push(record);
    }
    Ok(records)
}

/// Serialize records to JSON-Lines text, one record per line.
pub fn dataset_to_string(records: &[DatasetRecord]) -> Result<String> {
    let mut out = String::new();
    for record in records {
        let line = serde_json::to_string(&line_from_record(record))
            .map_err(|e| CliError::Data(format!("cannot serialize record '{}': {e}", record.id)))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Write records to a JSON-Lines file.
pub fn save_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let text = dataset_to_string(records)?;
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::Data(format!("cannot write dataset {}: {e}", path.display())))?;
    file.write_all(text.as_bytes())
        .map_err(|e| CliError::Data(format!("cannot write dataset {}: {e}", path.display())))?;
    Ok(())
}
