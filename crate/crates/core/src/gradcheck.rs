//! Central-difference verification of tape gradients.

use crate::error::{CoreError, Result};
use crate::opt::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use alloc::string::String;
use alloc::vec::Vec;

/// Max relative error between autodiff and central differences.
///
/// `build` must record the (deterministic) scalar function of interest on the
/// provided tape, registering whichever parameters from `params` it uses.
/// Every scalar entry of every parameter is probed with a ±`step` central
/// difference; the returned figure is
/// `max |autodiff - central| / max(1, |central|)`.
pub fn grad_check<F>(build: F, params: &ParamSet, step: f64) -> Result<f64>
where
    F: Fn(&ParamSet, &mut Tape) -> Result<Var>,
{
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let out = build(p, &mut tape)?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(CoreError::NonScalarOutput {
                shape: v.shape_string(),
            });
        }
        let x = v.first();
        if !x.is_finite() {
            return Err(CoreError::NonFinite { op: "grad_check probe" });
        }
        Ok(x)
    };

    // Autodiff pass.
    let mut tape = Tape::new();
    let out = build(params, &mut tape)?;
    let grads = tape.backward(out)?;

    let names: Vec<String> = params.names().cloned().collect();
    let mut max_rel = 0.0_f64;
    for name in names {
        let value = params.get(&name).expect("name from iteration");
        let shape = value.shape().to_vec();
        let ad = grads.get_or_zeros(&name, &shape);
        for ix in 0..value.len() {
            let plus = eval(&perturbed(params, &name, ix, step))?;
            let minus = eval(&perturbed(params, &name, ix, -step))?;
            let central = (plus - minus) / (2.0 * step);
            let rel = (ad.data()[ix] - central).abs() / central.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

fn perturbed(params: &ParamSet, name: &str, ix: usize, delta: f64) -> ParamSet {
    let mut copy = params.clone();
    let t: &mut Tensor = copy.get_mut(name).expect("perturbed name exists");
    t.data_mut()[ix] += delta;
    copy
}
