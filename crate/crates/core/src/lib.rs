//! Core engine for a conditional Boltzmann generator over molecular
//! conformations: a graph-transformer encoder produces per-atom and per-bond
//! latents that condition a SchNet-style denoising-diffusion score network.
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation.
//! File formats, the CLI, and thread pools live in the companion `boltzgen`
//! crate.
//!
//! Layout:
//! - [`tensor`], [`tape`], [`opt`], [`eig`], [`rng`], [`gradcheck`] — numerical
//!   substrate: dense row-major tensors, reverse-mode autodiff on a Wengert
//!   tape, Adam, a Jacobi eigensolver, and counter-based reproducible RNG.
//! - [`graph`], [`lappe`], [`split`] — molecular data model, Laplacian
//!   positional encodings, deterministic dataset splitting.
//! - [`encoder`] — graph transformer producing the conditioning latent.
//! - [`score`] — SE(3)-equivariant conditional noise predictor.
//! - [`diffusion`] — noise schedule, forward process, loss terms, ancestral
//!   sampling.
//! - [`train`] — pre-training / fine-tuning loops and checkpoint data.
//! - [`boltzeval`] — toy potentials, Metropolis MCMC oracles, Wasserstein-1
//!   comparison of ensembles.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

pub mod boltzeval;
pub mod diffusion;
pub mod eig;
pub mod encoder;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod graph;
pub mod lappe;
pub mod opt;
pub mod rng;
pub mod score;
pub mod split;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::CoreError;
pub use tensor::{Dtype, Tensor};
