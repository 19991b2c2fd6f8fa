//! Named parameter sets and the Adam optimizer.
//!
//! Parameters live in a `BTreeMap` so every iteration order — updates, norm
//! reductions, checkpoint manifests — is the lexicographic name order,
//! independent of insertion order or thread scheduling.

use crate::error::{CoreError, Result};
use crate::rng::RngState;
use crate::tape::{Grads, Tape, Var};
use crate::tensor::Tensor;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

/// Glorot-uniform weight matrix: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(rng: &RngState, fan_in: usize, fan_out: usize) -> Tensor {
    let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    rng.uniform_pm(a, &[fan_in, fan_out])
}

/// Collection of named tensors (model weights).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(CoreError::DuplicateParam {
                name: name.to_string(),
            });
        }
        self.entries.insert(name.to_string(), value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Total number of scalar entries across all tensors.
    pub fn entry_count(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    /// Absorb all entries of `other`; duplicate names are an error.
    pub fn extend(&mut self, other: ParamSet) -> Result<()> {
        for (name, value) in other.entries {
            if self.entries.contains_key(&name) {
                return Err(CoreError::DuplicateParam { name });
            }
            self.entries.insert(name, value);
        }
        Ok(())
    }

    /// Register every parameter on `tape` as a differentiable leaf.
    pub fn register_on(&self, tape: &mut Tape) -> Result<BTreeMap<String, Var>> {
        let mut vars = BTreeMap::new();
        for (name, value) in &self.entries {
            vars.insert(name.clone(), tape.param(name, value.clone())?);
        }
        Ok(vars)
    }

    /// Register every parameter as a constant (frozen: no gradients).
    pub fn register_frozen_on(&self, tape: &mut Tape) -> BTreeMap<String, Var> {
        let mut vars = BTreeMap::new();
        for (name, value) in &self.entries {
            vars.insert(name.clone(), tape.constant(value.clone()));
        }
        vars
    }

    /// Register parameters, freezing those whose name starts with any of the
    /// given prefixes; the rest stay differentiable.
    pub fn register_split_on(
        &self,
        tape: &mut Tape,
        frozen_prefixes: &[&str],
    ) -> Result<BTreeMap<String, Var>> {
        let mut vars = BTreeMap::new();
        for (name, value) in &self.entries {
            let var = if frozen_prefixes.iter().any(|p| name.starts_with(p)) {
                tape.constant(value.clone())
            } else {
                tape.param(name, value.clone())?
            };
            vars.insert(name.clone(), var);
        }
        Ok(vars)
    }
}

/// Adam moment estimates plus the step counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update with global-norm clipping.
    ///
    /// Returns the pre-clip global gradient norm. Parameters without a
    /// gradient entry are treated as zero-gradient (their moments still
    /// decay, matching the reference recurrence).
    pub fn update(
        &mut self,
        params: &mut ParamSet,
        grads: &Grads,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        clip_norm: f64,
    ) -> Result<f64> {
        let mut norm_sq = 0.0;
        for (name, value) in params.iter() {
            let g = grads.get_or_zeros(name, value.shape());
            norm_sq += g.frobenius_sq();
        }
        let norm = libm::sqrt(norm_sq);
        if !norm.is_finite() {
            return Err(CoreError::NonFinite { op: "adam gradient norm" });
        }
        let scale = if clip_norm > 0.0 && norm > clip_norm {
            clip_norm / norm
        } else {
            1.0
        };

        self.step += 1;
        let t = self.step;
        let bc1 = 1.0 - libm::pow(beta1, t as f64);
        let bc2 = 1.0 - libm::pow(beta2, t as f64);

        let names: alloc::vec::Vec<String> = params.names().cloned().collect();
        for name in names {
            let value = params.get(&name).expect("name from iteration");
            let shape = value.shape().to_vec();
            let g = grads.get_or_zeros(&name, &shape).scale(scale);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&shape));
            *m = m.scale(beta1).add_scaled(&g, 1.0 - beta1)?;
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&shape));
            let g_sq = g.map(|x| x * x);
            *v = v.scale(beta2).add_scaled(&g_sq, 1.0 - beta2)?;

            let m_ref = &self.m[&name];
            let v_ref = &self.v[&name];
            let mut updated = value.clone();
            for ((p, &mi), &vi) in updated
                .data_mut()
                .iter_mut()
                .zip(m_ref.data())
                .zip(v_ref.data())
            {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
            updated.check_finite("adam update")?;
            *params.get_mut(&name).expect("name from iteration") = updated;
        }
        Ok(norm)
    }
}
