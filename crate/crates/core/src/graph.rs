//! Molecular data model: graphs, conformations, dataset records.

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Highest atomic number accepted by default (H through I).
pub const DEFAULT_MAX_Z: u32 = 53;

/// Formal charges are embedded from a small table centered on zero.
pub const CHARGE_RANGE: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Atom {
    pub atomic_number: u32,
    pub formal_charge: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn name(self) -> &'static str {
        match self {
            BondOrder::Single => "single",
            BondOrder::Double => "double",
            BondOrder::Triple => "triple",
            BondOrder::Aromatic => "aromatic",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "single" => Some(BondOrder::Single),
            "double" => Some(BondOrder::Double),
            "triple" => Some(BondOrder::Triple),
            "aromatic" => Some(BondOrder::Aromatic),
            _ => None,
        }
    }

    /// Embedding-table row.
    pub fn index(self) -> usize {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        }
    }
}

pub const BOND_ORDER_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: BondOrder,
}

/// A single connected molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl MolecularGraph {
    /// Build and validate in one step.
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self> {
        let g = MolecularGraph { atoms, bonds };
        g.validate(DEFAULT_MAX_Z)?;
        Ok(g)
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn validate(&self, max_z: u32) -> Result<()> {
        let n = self.atoms.len();
        if n == 0 {
            return Err(CoreError::InvalidGraph {
                reason: "no atoms".into(),
            });
        }
        for (ix, atom) in self.atoms.iter().enumerate() {
            if atom.atomic_number < 1 || atom.atomic_number > max_z {
                return Err(CoreError::InvalidGraph {
                    reason: format!(
                        "atom {ix}: atomic number {} outside supported 1..={max_z}",
                        atom.atomic_number
                    ),
                });
            }
            if atom.formal_charge.abs() > CHARGE_RANGE {
                return Err(CoreError::InvalidGraph {
                    reason: format!(
                        "atom {ix}: formal charge {} outside supported ±{CHARGE_RANGE}",
                        atom.formal_charge
                    ),
                });
            }
        }
        let mut seen: Vec<(usize, usize)> = Vec::with_capacity(self.bonds.len());
        for bond in &self.bonds {
            if bond.i == bond.j {
                return Err(CoreError::InvalidGraph {
                    reason: format!("self-bond on atom {}", bond.i),
                });
            }
            if bond.i >= n || bond.j >= n {
                return Err(CoreError::InvalidGraph {
                    reason: format!("bond ({}, {}) references atom >= {n}", bond.i, bond.j),
                });
            }
            let key = (bond.i.min(bond.j), bond.i.max(bond.j));
            if seen.contains(&key) {
                return Err(CoreError::InvalidGraph {
                    reason: format!("duplicate bond between atoms {} and {}", key.0, key.1),
                });
            }
            seen.push(key);
        }
        // Connectivity (single molecule) by BFS from atom 0.
        if n > 1 {
            let mut visited = vec![false; n];
            let mut queue = vec![0usize];
            visited[0] = true;
            while let Some(u) = queue.pop() {
                for bond in &self.bonds {
                    let v = if bond.i == u {
                        bond.j
                    } else if bond.j == u {
                        bond.i
                    } else {
                        continue;
                    };
                    if !visited[v] {
                        visited[v] = true;
                        queue.push(v);
                    }
                }
            }
            if visited.iter().any(|&v| !v) {
                return Err(CoreError::InvalidGraph {
                    reason: "graph is disconnected (multiple fragments)".into(),
                });
            }
        }
        Ok(())
    }

    /// Unordered adjacency lists in ascending neighbor order.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for bond in &self.bonds {
            adj[bond.i].push(bond.j);
            adj[bond.j].push(bond.i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Bond lookup: canonical (min, max) pair -> index into `bonds`.
    pub fn bond_index(&self) -> Vec<((usize, usize), usize)> {
        self.bonds
            .iter()
            .enumerate()
            .map(|(ix, b)| ((b.i.min(b.j), b.i.max(b.j)), ix))
            .collect()
    }

    /// Apply a relabeling `perm` where new index `perm[old]` (used in
    /// symmetry tests). Bond endpoint order and bond list order follow the
    /// original list.
    pub fn permuted(&self, perm: &[usize]) -> MolecularGraph {
        let mut atoms = vec![
            Atom {
                atomic_number: 1,
                formal_charge: 0
            };
            self.atoms.len()
        ];
        for (old, atom) in self.atoms.iter().enumerate() {
            atoms[perm[old]] = *atom;
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                i: perm[b.i],
                j: perm[b.j],
                order: b.order,
            })
            .collect();
        MolecularGraph { atoms, bonds }
    }
}

/// One 3-D arrangement of a molecule's atoms (n x 3, Å).
#[derive(Debug, Clone, PartialEq)]
pub struct Conformation {
    pub coords: Tensor,
}

impl Conformation {
    pub fn new(coords: Tensor) -> Result<Self> {
        if coords.shape().len() != 2 || coords.cols() != 3 {
            return Err(CoreError::ShapeMismatch {
                op: "Conformation::new",
                expected: "[n, 3]".into(),
                got: coords.shape_string(),
            });
        }
        coords.check_finite("Conformation::new")?;
        Ok(Conformation { coords })
    }

    pub fn n_atoms(&self) -> usize {
        self.coords.rows()
    }
}

/// All conformations of one molecule.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConformerEnsemble {
    pub conformations: Vec<Conformation>,
}

impl ConformerEnsemble {
    pub fn len(&self) -> usize {
        self.conformations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conformations.is_empty()
    }
}

/// A molecule, its conformer ensemble, and an optional regression label.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub graph: MolecularGraph,
    pub ensemble: ConformerEnsemble,
    pub label: Option<f64>,
}

impl DatasetRecord {
    pub fn validate(&self) -> Result<()> {
        self.graph
            .validate(DEFAULT_MAX_Z)
            .map_err(|e| CoreError::InvalidRecord {
                id: self.id.clone(),
                reason: format!("{e}"),
            })?;
        if self.ensemble.is_empty() {
            return Err(CoreError::InvalidRecord {
                id: self.id.clone(),
                reason: "empty conformer ensemble".into(),
            });
        }
        let n = self.graph.n_atoms();
        for (ix, c) in self.ensemble.conformations.iter().enumerate() {
            if c.n_atoms() != n {
                return Err(CoreError::InvalidRecord {
                    id: self.id.clone(),
                    reason: format!(
                        "conformer {ix} has {} atoms, graph has {n}",
                        c.n_atoms()
                    ),
                });
            }
        }
        Ok(())
    }
}
