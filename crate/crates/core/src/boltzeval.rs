//! Desk-scale verification that a trained generator reproduces Boltzmann
//! ensembles of known toy potentials.
//!
//! Energies are in units of k_BT, so the target density is exp(-E) with no
//! temperature anywhere. A Metropolis random walk provides oracle ensembles;
//! comparisons use the 1-D Wasserstein distance on rigid-motion-invariant
//! features (bond length for diatomics, dihedral angle for 4-atom chains)
//! plus mode-mass fractions for multimodal targets.

use crate::diffusion::{ancestral_sample_batch, NetworkDenoiser};
use crate::encoder::encode;
use crate::error::{CoreError, Result};
use crate::exec::Executor;
use crate::graph::{
    Atom, Bond, BondOrder, Conformation, ConformerEnsemble, DatasetRecord, MolecularGraph,
};
use crate::lappe::laplacian_pe;
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::train::Checkpoint;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use core::f64::consts::PI;

/// Acceptance range outside which a chain is flagged as poorly tuned.
pub const MCMC_HEALTHY_ACCEPTANCE: (f64, f64) = (0.1, 0.7);

#[derive(Debug, Clone, PartialEq)]
pub enum ToyPotential {
    /// `(k/2) (|c1 - c0| - d0)^2`.
    HarmonicDiatomic { k: f64, d0: f64 },
    /// 4-atom chain 0-1-2-3: three bond harmonics, two angle harmonics, and
    /// a double-well torsion `A (1 + cos 2phi)` with minima at phi = ±pi/2.
    TorsionChain {
        bond_k: f64,
        bond_d0: f64,
        angle_k: f64,
        angle_theta0: f64,
        torsion_a: f64,
    },
}

impl ToyPotential {
    pub fn n_atoms(&self) -> usize {
        match self {
            ToyPotential::HarmonicDiatomic { .. } => 2,
            ToyPotential::TorsionChain { .. } => 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ToyPotential::HarmonicDiatomic { k, d0 } => k > 0.0 && d0 > 0.0,
            ToyPotential::TorsionChain {
                bond_k,
                bond_d0,
                angle_k,
                angle_theta0,
                torsion_a,
            } => {
                bond_k > 0.0
                    && bond_d0 > 0.0
                    && angle_k > 0.0
                    && angle_theta0 > 0.0
                    && angle_theta0 < PI
                    && torsion_a > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidConfig {
                reason: "toy potential parameters must be positive (and 0 < theta0 < pi)".into(),
            })
        }
    }

    /// The invariant feature used for distribution comparison.
    pub fn feature_name(&self) -> &'static str {
        match self {
            ToyPotential::HarmonicDiatomic { .. } => "bond_length",
            ToyPotential::TorsionChain { .. } => "torsion_angle",
        }
    }
}

fn row3(c: &Tensor, i: usize) -> [f64; 3] {
    [c.at(i, 0), c.at(i, 1), c.at(i, 2)]
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: [f64; 3]) -> f64 {
    libm::sqrt(dot3(a, a))
}

/// Euclidean distance between atoms `i` and `j`, Å.
pub fn bond_length(coords: &Tensor, i: usize, j: usize) -> f64 {
    norm3(sub3(row3(coords, i), row3(coords, j)))
}

/// Bond angle at `j` in the triple `i-j-k`, in [0, pi].
pub fn bond_angle(coords: &Tensor, i: usize, j: usize, k: usize) -> f64 {
    let u = sub3(row3(coords, i), row3(coords, j));
    let v = sub3(row3(coords, k), row3(coords, j));
    let c = dot3(u, v) / (norm3(u) * norm3(v));
    libm::acos(c.clamp(-1.0, 1.0))
}

/// Signed dihedral of the chain `i-j-k-l` via the atan2 construction,
/// in (-pi, pi]. Errors when either inner triple is collinear.
pub fn dihedral(coords: &Tensor, i: usize, j: usize, k: usize, l: usize) -> Result<f64> {
    let b1 = sub3(row3(coords, j), row3(coords, i));
    let b2 = sub3(row3(coords, k), row3(coords, j));
    let b3 = sub3(row3(coords, l), row3(coords, k));
    let n1 = cross3(b1, b2);
    let n2 = cross3(b2, b3);
    let b2n = norm3(b2);
    if norm3(n1) < 1e-12 || norm3(n2) < 1e-12 || b2n < 1e-12 {
        return Err(CoreError::DegenerateDihedral);
    }
    let m1 = cross3(n1, [b2[0] / b2n, b2[1] / b2n, b2[2] / b2n]);
    let x = dot3(n1, n2);
    let y = dot3(m1, n2);
    let phi = libm::atan2(y, x);
    Ok(if phi == -PI { PI } else { phi })
}

/// Potential energy in k_BT units.
pub fn potential_energy(potential: &ToyPotential, coords: &Tensor) -> Result<f64> {
    let n = potential.n_atoms();
    if coords.rows() != n || coords.cols() != 3 {
        return Err(CoreError::WrongAtomCount {
            expected: n,
            got: coords.rows(),
        });
    }
    match *potential {
        ToyPotential::HarmonicDiatomic { k, d0 } => {
            let d = bond_length(coords, 0, 1);
            Ok(0.5 * k * (d - d0) * (d - d0))
        }
        ToyPotential::TorsionChain {
            bond_k,
            bond_d0,
            angle_k,
            angle_theta0,
            torsion_a,
        } => {
            let mut e = 0.0;
            for (i, j) in [(0, 1), (1, 2), (2, 3)] {
                let d = bond_length(coords, i, j);
                e += 0.5 * bond_k * (d - bond_d0) * (d - bond_d0);
            }
            for (i, j, k) in [(0, 1, 2), (1, 2, 3)] {
                let th = bond_angle(coords, i, j, k);
                e += 0.5 * angle_k * (th - angle_theta0) * (th - angle_theta0);
            }
            // Exactly collinear chains have an undefined dihedral but also
            // maximal angle energy; treat the torsion term there as its
            // worst case so the walk simply avoids the region.
            let tors = match dihedral(coords, 0, 1, 2, 3) {
                Ok(phi) => torsion_a * (1.0 + libm::cos(2.0 * phi)),
                Err(_) => 2.0 * torsion_a,
            };
            Ok(e + tors)
        }
    }
}

/// A minimum-energy starting geometry (torsion chains start in the
/// phi = +pi/2 well).
pub fn equilibrium_coords(potential: &ToyPotential) -> Result<Tensor> {
    match *potential {
        ToyPotential::HarmonicDiatomic { d0, .. } => Ok(Tensor::from_rows3(&[
            [-0.5 * d0, 0.0, 0.0],
            [0.5 * d0, 0.0, 0.0],
        ])),
        ToyPotential::TorsionChain {
            bond_d0,
            angle_theta0,
            ..
        } => chain_coords(bond_d0, angle_theta0, 0.5 * PI),
    }
}

/// Cartesian coordinates of the 4-atom chain with equal bond lengths `d0`,
/// equal bend angles `theta0`, and dihedral `phi` (standard internal-to-
/// cartesian placement).
pub fn chain_coords(d0: f64, theta0: f64, phi: f64) -> Result<Tensor> {
    let c0 = [0.0, 0.0, 0.0];
    let c1 = [d0, 0.0, 0.0];
    let c2 = [
        c1[0] - d0 * libm::cos(theta0),
        c1[1] + d0 * libm::sin(theta0),
        0.0,
    ];
    let bc = sub3(c2, c1);
    let bcn = norm3(bc);
    let bc = [bc[0] / bcn, bc[1] / bcn, bc[2] / bcn];
    let ab = sub3(c1, c0);
    let n = cross3(ab, bc);
    let nn = norm3(n);
    if nn < 1e-12 {
        return Err(CoreError::DegenerateDihedral);
    }
    let n = [n[0] / nn, n[1] / nn, n[2] / nn];
    let m = cross3(n, bc);
    // The minus sign on the out-of-plane term makes the placed dihedral agree
    // with the signed convention `dihedral` measures.
    let (s, c) = (libm::sin(phi), libm::cos(phi));
    let st = libm::sin(theta0);
    let d = [
        d0 * (-libm::cos(theta0) * bc[0] + st * c * m[0] - st * s * n[0]),
        d0 * (-libm::cos(theta0) * bc[1] + st * c * m[1] - st * s * n[1]),
        d0 * (-libm::cos(theta0) * bc[2] + st * c * m[2] - st * s * n[2]),
    ];
    let c3 = [c2[0] + d[0], c2[1] + d[1], c2[2] + d[2]];
    Ok(Tensor::from_rows3(&[c0, c1, c2, c3]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcParams {
    /// Proposal standard deviation per coordinate, Å.
    pub step_size: f64,
    pub burn_in: usize,
    /// Keep every `thin`-th state after burn-in.
    pub thin: usize,
}

impl Default for McmcParams {
    fn default() -> Self {
        McmcParams {
            step_size: 0.1,
            burn_in: 10_000,
            thin: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct McmcRun {
    pub ensemble: ConformerEnsemble,
    pub acceptance_rate: f64,
    pub warnings: Vec<String>,
}

/// Metropolis random walk in the full 3n coordinates with isotropic Gaussian
/// proposals; accepts with min(1, exp(E_old - E_new)).
pub fn mcmc_sample(
    potential: &ToyPotential,
    n_samples: usize,
    params: &McmcParams,
    rng: &RngState,
) -> Result<McmcRun> {
    potential.validate()?;
    if n_samples < 1 {
        return Err(CoreError::EmptyData {
            what: "mcmc sample request",
        });
    }
    if params.thin < 1 || !(params.step_size >= 0.0) {
        return Err(CoreError::InvalidConfig {
            reason: "mcmc needs thin >= 1 and step_size >= 0".into(),
        });
    }
    let n = potential.n_atoms();
    let mut coords = equilibrium_coords(potential)?;
    let mut energy = potential_energy(potential, &coords)?;
    let mut stream = rng.stream();
    let total_steps = params.burn_in + n_samples * params.thin;
    let mut accepted = 0usize;
    let mut kept = Vec::with_capacity(n_samples);
    for step in 1..=total_steps {
        let mut proposal = coords.clone();
        for r in 0..n {
            for c in 0..3 {
                let v = proposal.at(r, c) + params.step_size * stream.normal();
                proposal.set(r, c, v);
            }
        }
        let e_new = potential_energy(potential, &proposal)?;
        let delta = e_new - energy;
        let accept = if delta <= 0.0 {
            // Uniform draw still consumed so the stream advances identically
            // on both branches.
            let _ = stream.uniform();
            true
        } else {
            stream.uniform() < libm::exp(-delta)
        };
        if accept {
            coords = proposal;
            energy = e_new;
            accepted += 1;
        }
        if step > params.burn_in && (step - params.burn_in) % params.thin == 0 {
            kept.push(Conformation::new(coords.clone())?);
        }
    }
    let acceptance_rate = accepted as f64 / total_steps as f64;
    let mut warnings = Vec::new();
    if acceptance_rate < MCMC_HEALTHY_ACCEPTANCE.0 || acceptance_rate > MCMC_HEALTHY_ACCEPTANCE.1 {
        warnings.push(format!(
            "acceptance rate {acceptance_rate:.3} outside healthy range [{}, {}]",
            MCMC_HEALTHY_ACCEPTANCE.0, MCMC_HEALTHY_ACCEPTANCE.1
        ));
    }
    Ok(McmcRun {
        ensemble: ConformerEnsemble {
            conformations: kept,
        },
        acceptance_rate,
        warnings,
    })
}

/// 1-D Wasserstein distance between two sample sets: sorted-sample coupling
/// for equal sizes, otherwise mean absolute difference of linearly
/// interpolated empirical quantiles on a common grid of size max(|a|, |b|).
pub fn wasserstein1(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(CoreError::EmptyData {
            what: "wasserstein1 samples",
        });
    }
    let mut a = samples_a.to_vec();
    let mut b = samples_b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    b.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    if a.len() == b.len() {
        let total: f64 = a.iter().zip(&b).map(|(x, y)| libm::fabs(x - y)).sum();
        return Ok(total / a.len() as f64);
    }
    let m = a.len().max(b.len());
    let quantile = |sorted: &[f64], q: f64| -> f64 {
        let pos = q * (sorted.len() as f64 - 1.0);
        let lo = libm::floor(pos) as usize;
        let hi = (lo + 1).min(sorted.len() - 1);
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    };
    let mut total = 0.0;
    for i in 0..m {
        let q = (i as f64 + 0.5) / m as f64;
        total += libm::fabs(quantile(&a, q) - quantile(&b, q));
    }
    Ok(total / m as f64)
}

/// Fractions of angular samples on each side of the two boundary angles:
/// side A is the arc `(lo, hi]`, side B the complement. Fractions sum to 1.
pub fn mode_mass(samples: &[f64], boundary: (f64, f64)) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(CoreError::EmptyData {
            what: "mode_mass samples",
        });
    }
    let (lo, hi) = if boundary.0 <= boundary.1 {
        boundary
    } else {
        (boundary.1, boundary.0)
    };
    let in_a = samples.iter().filter(|&&x| x > lo && x <= hi).count();
    let frac_a = in_a as f64 / samples.len() as f64;
    Ok((frac_a, 1.0 - frac_a))
}

/// Extract the potential's comparison feature from every conformation.
pub fn feature_values(potential: &ToyPotential, ensemble: &ConformerEnsemble) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ensemble.len());
    for conf in &ensemble.conformations {
        let v = match potential {
            ToyPotential::HarmonicDiatomic { .. } => bond_length(&conf.coords, 0, 1),
            ToyPotential::TorsionChain { .. } => dihedral(&conf.coords, 0, 1, 2, 3)?,
        };
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Histogram {
    let mut counts = vec![0usize; bins.max(1)];
    let width = (hi - lo).max(f64::MIN_POSITIVE);
    for &v in values {
        let ix = ((v - lo) / width * counts.len() as f64) as isize;
        let ix = ix.clamp(0, counts.len() as isize - 1) as usize;
        counts[ix] += 1;
    }
    Histogram { lo, hi, counts }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub feature: &'static str,
    pub values: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub histogram: Histogram,
}

impl EnsembleStats {
    pub fn from_values(feature: &'static str, values: Vec<f64>, lo: f64, hi: f64) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let histogram = histogram(&values, lo, hi, 24);
        EnsembleStats {
            feature,
            values,
            mean,
            variance,
            histogram,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoltzEvalReport {
    pub feature: &'static str,
    pub generated: EnsembleStats,
    pub oracle: EnsembleStats,
    pub w1: f64,
    /// Present for torsion targets: fractions in the phi > 0 / phi <= 0 wells
    /// of the generated ensemble (boundaries at 0 and pi).
    pub mode_mass: Option<(f64, f64)>,
    pub oracle_acceptance_rate: f64,
    pub n_samples: usize,
}

/// Split a stacked `[count * n, 3]` tensor into an ensemble.
pub fn stacked_to_ensemble(stacked: &Tensor, n_atoms: usize, count: usize) -> Result<ConformerEnsemble> {
    let mut conformations = Vec::with_capacity(count);
    for s in 0..count {
        conformations.push(Conformation::new(stacked.row_block(s * n_atoms, n_atoms)?)?);
    }
    Ok(ConformerEnsemble { conformations })
}

/// End-to-end check: sample the trained generator conditioned on `graph`,
/// sample a fresh MCMC oracle of the potential, and compare feature
/// distributions.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_generator(
    checkpoint: &Checkpoint,
    graph: &MolecularGraph,
    potential: &ToyPotential,
    n_samples: usize,
    mcmc: &McmcParams,
    rng: &RngState,
    executor: &dyn Executor,
    chunk_items: usize,
) -> Result<BoltzEvalReport> {
    potential.validate()?;
    if graph.n_atoms() != potential.n_atoms() {
        return Err(CoreError::WrongAtomCount {
            expected: potential.n_atoms(),
            got: graph.n_atoms(),
        });
    }
    let pe = laplacian_pe(graph, checkpoint.gtn.pe_dim, None)?;
    let latent = encode(&checkpoint.params, &checkpoint.gtn, graph, &pe, false, None)?;
    let denoiser = NetworkDenoiser {
        params: &checkpoint.params,
        config: &checkpoint.schnet,
        graph,
        latent: &latent,
        t_max: checkpoint.schedule.t_max(),
        executor,
        chunk_items,
    };
    let stacked = ancestral_sample_batch(
        &checkpoint.schedule,
        &denoiser,
        n_samples,
        &rng.child_tag("gen"),
        |_, _| {},
    )?;
    let generated = stacked_to_ensemble(&stacked, graph.n_atoms(), n_samples)?;
    let oracle = mcmc_sample(potential, n_samples, mcmc, &rng.child_tag("oracle"))?;

    let gen_values = feature_values(potential, &generated)?;
    let ora_values = feature_values(potential, &oracle.ensemble)?;
    let lo = gen_values
        .iter()
        .chain(&ora_values)
        .fold(f64::INFINITY, |acc, &v| acc.min(v));
    let hi = gen_values
        .iter()
        .chain(&ora_values)
        .fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
    let w1 = wasserstein1(&gen_values, &ora_values)?;
    let feature = potential.feature_name();
    let mode = match potential {
        ToyPotential::TorsionChain { .. } => Some(mode_mass(&gen_values, (0.0, PI))?),
        _ => None,
    };
    let report = BoltzEvalReport {
        feature,
        generated: EnsembleStats::from_values(feature, gen_values, lo, hi),
        oracle: EnsembleStats::from_values(feature, ora_values, lo, hi),
        w1,
        mode_mass: mode,
        oracle_acceptance_rate: oracle.acceptance_rate,
        n_samples,
    };
    Ok(report)
}

/// Two-atom molecule with one bond — the conditioning graph for diatomic
/// potentials. Atom types carry the condition.
pub fn diatomic_graph(z0: u32, z1: u32) -> Result<MolecularGraph> {
    MolecularGraph::new(
        vec![
            Atom {
                atomic_number: z0,
                formal_charge: 0,
            },
            Atom {
                atomic_number: z1,
                formal_charge: 0,
            },
        ],
        vec![Bond {
            i: 0,
            j: 1,
            order: BondOrder::Single,
        }],
    )
}

/// Four-atom chain 0-1-2-3 with single bonds.
pub fn chain_graph(z: [u32; 4]) -> Result<MolecularGraph> {
    MolecularGraph::new(
        z.iter()
            .map(|&zi| Atom {
                atomic_number: zi,
                formal_charge: 0,
            })
            .collect(),
        vec![
            Bond {
                i: 0,
                j: 1,
                order: BondOrder::Single,
            },
            Bond {
                i: 1,
                j: 2,
                order: BondOrder::Single,
            },
            Bond {
                i: 2,
                j: 3,
                order: BondOrder::Single,
            },
        ],
    )
}

/// Build a dataset record whose ensemble is an MCMC sample of the potential.
/// The label, when requested, is the lowest energy among the conformers.
#[allow(clippy::too_many_arguments)]
pub fn mcmc_record(
    id: &str,
    graph: MolecularGraph,
    potential: &ToyPotential,
    n_conformers: usize,
    mcmc: &McmcParams,
    rng: &RngState,
    with_label: bool,
) -> Result<DatasetRecord> {
    let run = mcmc_sample(potential, n_conformers, mcmc, rng)?;
    let label = if with_label {
        let mut best = f64::INFINITY;
        for conf in &run.ensemble.conformations {
            best = best.min(potential_energy(potential, &conf.coords)?);
        }
        Some(best)
    } else {
        None
    };
    let record = DatasetRecord {
        id: id.into(),
        graph,
        ensemble: run.ensemble,
        label,
    };
    record.validate()?;
    Ok(record)
}
