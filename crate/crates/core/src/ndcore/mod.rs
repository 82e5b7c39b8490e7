//! Dense tensors, a recorded graph with reverse and forward sweeps, and SGD.

pub mod checkpoint;
pub mod graph;
mod kernels;
pub mod optim;
pub mod tensor;

pub use graph::{Gradients, Graph, Tangents, Var, PROB_FLOOR};
pub use optim::{sgd_step, OptimState, SgdHyper};
pub use tensor::{Params, Tensor};

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Adds every tensor of `params` to `g` as a differentiable leaf.
pub fn param_leaves(g: &mut Graph, params: &Params) -> Vec<Var> {
    params.tensors().iter().map(|t| g.param(t.clone())).collect()
}

/// Collects the adjoints of `leaves` into a `Params` shaped like `params`.
pub fn collect_grads(grads: &Gradients, leaves: &[Var], params: &Params) -> Result<Params> {
    let tensors = leaves.iter().zip(params.tensors()).map(|(&v, t)| grads.get_or_zeros(v, t)).collect();
    Params::from_parts(params.names().to_vec(), tensors)
}

/// Value and gradient of a scalar-valued `f` with respect to every parameter.
pub fn value_and_grad<F>(params: &Params, f: F) -> Result<(f64, Params)>
where
    F: FnOnce(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let leaves = param_leaves(&mut g, params);
    let out = f(&mut g, &leaves)?;
    let value = g.value(out).item()?;
    let grads = g.backward_scalar(out)?;
    Ok((value, collect_grads(&grads, &leaves, params)?))
}

/// Gradient of a scalar-valued `f` with respect to every parameter.
pub fn grad<F>(params: &Params, f: F) -> Result<Params>
where
    F: FnOnce(&mut Graph, &[Var]) -> Result<Var>,
{
    value_and_grad(params, f).map(|(_, g)| g)
}

/// Directional derivative `J v` of `f` at `params` along `tangent`.
pub fn jvp<F>(params: &Params, tangent: &Params, f: F) -> Result<Tensor>
where
    F: FnOnce(&mut Graph, &[Var]) -> Result<Var>,
{
    params.check_congruent(tangent, "jvp").map_err(|e| Error::contract(format!("tangent does not mirror params: {e}")))?;
    let mut g = Graph::new();
    let leaves = param_leaves(&mut g, params);
    let out = f(&mut g, &leaves)?;
    let seeds: Vec<(Var, &Tensor)> = leaves.iter().copied().zip(tangent.tensors()).collect();
    g.jvp(out, &seeds)
}
