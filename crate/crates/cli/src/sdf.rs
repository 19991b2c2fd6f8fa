//! V2000 molfile / SD-file subset.
//!
//! Supported per record: the three header lines, the counts line, an atom
//! block (`x y z symbol`, whitespace-separated), a bond block (`i j order`,
//! 1-based indices, order codes 1–3 plus 4 = aromatic), optional `M  CHG`
//! property lines, and the `M  END` terminator. Anything between `M  END`
//! and the `$$$$` record separator (SD data items) is ignored. The old-style
//! charge column of the atom line is ignored; charges travel via `M  CHG`
//! only.
//!
//! parse → serialize → parse is the identity: coordinates are written with
//! four decimals, which reproduces any valid input (the format itself
//! carries four decimals).

use crate::error::{CliError, Result};
use boltzgen_core::graph::{Atom, Bond, BondOrder, Conformation, MolecularGraph};
use boltzgen_core::Tensor;
use std::fmt::Write as _;

/// Element symbols for atomic numbers 1..=53 (the supported set).
const ELEMENTS: [&str; 53] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I",
];

/// Symbol for an atomic number in the supported range.
pub fn element_symbol(z: u32) -> Option<&'static str> {
    if (1..=ELEMENTS.len() as u32).contains(&z) {
        Some(ELEMENTS[z as usize - 1])
    } else {
        None
    }
}

/// Atomic number for an element symbol (exact case).
pub fn atomic_number(symbol: &str) -> Option<u32> {
    ELEMENTS
        .iter()
        .position(|s| *s == symbol)
        .map(|ix| ix as u32 + 1)
}

fn bond_order_code(order: BondOrder) -> usize {
    match order {
        BondOrder::Single => 1,
        BondOrder::Double => 2,
        BondOrder::Triple => 3,
        BondOrder::Aromatic => 4,
    }
}

fn bond_order_from_code(code: usize) -> Option<BondOrder> {
    match code {
        1 => Some(BondOrder::Single),
        2 => Some(BondOrder::Double),
        3 => Some(BondOrder::Triple),
        4 => Some(BondOrder::Aromatic),
        _ => None,
    }
}

fn data_err(msg: String) -> CliError {
    CliError::Data(msg)
}

/// Parse a single molfile. Returns the graph, the conformation, and the
/// title line.
pub fn parse_sdf(text: &str) -> Result<(MolecularGraph, Conformation, String)> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 4 {
        return Err(data_err(format!(
            "molfile too short: {} lines, need header + counts",
            lines.len()
        )));
    }
    let title = lines[0].trim().to_string();
    let counts = lines[3];
    if !counts.contains("V2000") {
        return Err(data_err(format!(
            "malformed counts line (missing V2000 tag): \"{counts}\""
        )));
    }
    let fields: Vec<&str> = counts.split_whitespace().collect();
    if fields.len() < 2 {
        return Err(data_err(format!("malformed counts line: \"{counts}\"")));
    }
    let n_atoms: usize = fields[0]
        .parse()
        .map_err(|_| data_err(format!("malformed counts line (atom count): \"{counts}\"")))?;
    let n_bonds: usize = fields[1]
        .parse()
        .map_err(|_| data_err(format!("malformed counts line (bond count): \"{counts}\"")))?;
    if n_atoms == 0 {
        return Err(data_err("counts line declares zero atoms".into()));
    }
    let atoms_end = 4 + n_atoms;
    let bonds_end = atoms_end + n_bonds;
    if lines.len() < bonds_end {
        return Err(data_err(format!(
            "molfile truncated: counts promise {n_atoms} atoms and {n_bonds} bonds, \
             only {} lines follow the header",
            lines.len().saturating_sub(4)
        )));
    }

    let mut coords = Vec::with_capacity(n_atoms);
    let mut atoms = Vec::with_capacity(n_atoms);
    for (ix, line) in lines[4..atoms_end].iter().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 4 {
            return Err(data_err(format!("atom line {}: \"{line}\"", ix + 1)));
        }
        let mut xyz = [0.0f64; 3];
        for (k, v) in xyz.iter_mut().enumerate() {
            *v = f[k].parse().map_err(|_| {
                data_err(format!("atom line {}: bad coordinate \"{}\"", ix + 1, f[k]))
            })?;
        }
        let z = atomic_number(f[3]).ok_or_else(|| {
            data_err(format!("atom line {}: unknown element symbol \"{}\"", ix + 1, f[3]))
        })?;
        coords.push(xyz);
        atoms.push(Atom {
            atomic_number: z,
            formal_charge: 0,
        });
    }

    let mut bonds = Vec::with_capacity(n_bonds);
    for (ix, line) in lines[atoms_end..bonds_end].iter().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 3 {
            return Err(data_err(format!("bond line {}: \"{line}\"", ix + 1)));
        }
        let i: usize = f[0]
            .parse()
            .map_err(|_| data_err(format!("bond line {}: bad atom index \"{}\"", ix + 1, f[0])))?;
        let j: usize = f[1]
            .parse()
            .map_err(|_| data_err(format!("bond line {}: bad atom index \"{}\"", ix + 1, f[1])))?;
        let code: usize = f[2]
            .parse()
            .map_err(|_| data_err(format!("bond line {}: bad order \"{}\"", ix + 1, f[2])))?;
        if i < 1 || i > n_atoms || j < 1 || j > n_atoms {
            return Err(data_err(format!(
                "bond line {}: atom index out of range ({i}, {j}) with {n_atoms} atoms",
                ix + 1
            )));
        }
        let order = bond_order_from_code(code).ok_or_else(|| {
            data_err(format!("bond line {}: unsupported bond order code {code}", ix + 1))
        })?;
        bonds.push(Bond {
            i: i - 1,
            j: j - 1,
            order,
        });
    }

    // Property block: only "M  CHG" and "M  END" belong to the subset.
    let mut saw_end = false;
    for line in &lines[bonds_end..] {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["M", "END", ..] => {
                saw_end = true;
                break;
            }
            ["M", "CHG", rest @ ..] => {
                if rest.is_empty() {
                    return Err(data_err(format!("malformed charge line: \"{line}\"")));
                }
                let count: usize = rest[0]
                    .parse()
                    .map_err(|_| data_err(format!("malformed charge line: \"{line}\"")))?;
                if rest.len() != 1 + 2 * count {
                    return Err(data_err(format!(
                        "charge line declares {count} pairs but carries {}: \"{line}\"",
                        (rest.len() - 1) / 2
                    )));
                }
                for pair in rest[1..].chunks(2) {
                    let ix: usize = pair[0].parse().map_err(|_| {
                        data_err(format!("malformed charge line: \"{line}\""))
                    })?;
                    let q: i32 = pair[1].parse().map_err(|_| {
                        data_err(format!("malformed charge line: \"{line}\""))
                    })?;
                    if ix < 1 || ix > n_atoms {
                        return Err(data_err(format!(
                            "charge line: atom index {ix} out of range with {n_atoms} atoms"
                        )));
                    }
                    atoms[ix - 1].formal_charge = q;
                }
            }
            [] => {}
            _ => {
                return Err(data_err(format!(
                    "unsupported property line before M  END: \"{line}\""
                )))
            }
        }
    }
    if !saw_end {
        return Err(data_err("molfile missing M  END terminator".into()));
    }

    let graph = MolecularGraph::new(atoms, bonds).map_err(CliError::from)?;
    let conformation = Conformation::new(Tensor::from_rows3(&coords)).map_err(CliError::from)?;
    Ok((graph, conformation, title))
}

/// Serialize one molecule + conformation as a molfile (without the `$$$$`
/// separator).
pub fn write_sdf(graph: &MolecularGraph, conformation: &Conformation, title: &str) -> Result<String> {
    if conformation.n_atoms() != graph.n_atoms() {
        return Err(data_err(format!(
            "conformation has {} atoms, graph has {}",
            conformation.n_atoms(),
            graph.n_atoms()
        )));
    }
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "  boltzgen");
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:3}{:3}  0  0  0  0  0  0  0  0999 V2000",
        graph.n_atoms(),
        graph.bonds.len()
    );
    for (ix, atom) in graph.atoms.iter().enumerate() {
        let symbol = element_symbol(atom.atomic_number).ok_or_else(|| {
            data_err(format!(
                "atom {ix}: atomic number {} has no symbol in the supported set",
                atom.atomic_number
            ))
        })?;
        let _ = writeln!(
            out,
            "{:10.4}{:10.4}{:10.4} {:<3} 0  0  0  0  0  0  0  0  0  0  0  0",
            conformation.coords.at(ix, 0),
            conformation.coords.at(ix, 1),
            conformation.coords.at(ix, 2),
            symbol
        );
    }
    for bond in &graph.bonds {
        let _ = writeln!(
            out,
            "{:3}{:3}{:3}  0",
            bond.i + 1,
            bond.j + 1,
            bond_order_code(bond.order)
        );
    }
    let charged: Vec<(usize, i32)> = graph
        .atoms
        .iter()
        .enumerate()
        .filter(|(_, a)| a.formal_charge != 0)
        .map(|(ix, a)| (ix + 1, a.formal_charge))
        .collect();
    // Up to 8 atom/charge pairs per property line, per the format.
    for chunk in charged.chunks(8) {
        let mut line = format!("M  CHG{:3}", chunk.len());
        for (ix, q) in chunk {
            let _ = write!(line, "{ix:4}{q:4}");
        }
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "M  END");
    Ok(out)
}

/// Parse a multi-record SD file (records separated by `$$$$` lines).
pub fn parse_sd_file(text: &str) -> Result<Vec<(MolecularGraph, Conformation, String)>> {
    let mut records = Vec::new();
    let mut chunk = String::new();
    for line in text.lines() {
        if line.trim() == "$$$$" {
            if !chunk.trim().is_empty() {
                records.push(parse_sdf(&chunk)?);
            }
            chunk.clear();
        } else {
            chunk.push_str(line);
            chunk.push('\n');
        }
    }
    if !chunk.trim().is_empty() {
        records.push(parse_sdf(&chunk)?);
    }
    Ok(records)
}

/// Serialize conformers of one molecule as an SD file.
pub fn write_sd_file(
    graph: &MolecularGraph,
    conformations: &[Conformation],
    title_prefix: &str,
) -> Result<String> {
    let mut out = String::new();
    for (ix, conf) in conformations.iter().enumerate() {
        let title = format!("{title_prefix} {ix}");
        out.push_str(&write_sdf(graph, conf, &title)?);
        out.push_str("$$$$\n");
    }
    Ok(out)
}
