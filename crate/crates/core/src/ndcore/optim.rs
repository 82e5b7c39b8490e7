use alloc::vec::Vec;

use super::tensor::{Params, Tensor};
use crate::error::Result;

/// Step size, momentum and weight decay of the SGD update.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SgdHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Momentum buffers mirroring the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub velocity: Params,
    pub hyper: SgdHyper,
}

impl OptimState {
    pub fn new(params: &Params, hyper: SgdHyper) -> Self {
        OptimState { velocity: params.zeros_like(), hyper }
    }
}

/// One SGD update with momentum and decoupled-into-gradient weight decay:
///
/// ```text
/// velocity <- momentum * velocity + grad + weight_decay * param
/// param    <- param - lr * velocity
/// ```
pub fn sgd_step(params: &Params, grads: &Params, state: &OptimState) -> Result<(Params, OptimState)> {
    params.check_congruent(grads, "sgd_step")?;
    params.check_congruent(&state.velocity, "sgd_step")?;
    let SgdHyper { lr, momentum, weight_decay } = state.hyper;
    let mut new_params = Vec::with_capacity(params.len());
    let mut new_vel = Vec::with_capacity(params.len());
    for ((p, g), v) in params.tensors().iter().zip(grads.tensors()).zip(state.velocity.tensors()) {
        let vel: Vec<f64> = v
            .data()
            .iter()
            .zip(g.data())
            .zip(p.data())
            .map(|((&vv, &gv), &pv)| momentum * vv + gv + weight_decay * pv)
            .collect();
        let upd: Vec<f64> = p.data().iter().zip(&vel).map(|(&pv, &vv)| pv - lr * vv).collect();
        new_params.push(Tensor::new(p.shape().to_vec(), upd)?);
        new_vel.push(Tensor::new(p.shape().to_vec(), vel)?);
    }
    Ok((
        Params::from_parts(params.names().to_vec(), new_params)?,
        OptimState { velocity: Params::from_parts(params.names().to_vec(), new_vel)?, hyper: state.hyper },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: f64) -> Params {
        let mut p = Params::new();
        p.push(name, Tensor::scalar(v)).unwrap();
        p
    }

    #[test]
    fn plain_sgd_arithmetic() {
        let p = one("w", 1.0);
        let st = OptimState::new(&p, SgdHyper { lr: 0.1, momentum: 0.0, weight_decay: 0.0 });
        let (p2, _) = sgd_step(&p, &one("w", 2.0), &st).unwrap();
        assert!((p2.tensors()[0].data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let p = one("w", 1.25);
        let st = OptimState::new(&p, SgdHyper { lr: 0.1, momentum: 0.9, weight_decay: 0.0 });
        let (p2, st2) = sgd_step(&p, &one("w", 0.0), &st).unwrap();
        assert_eq!(p2, p);
        assert_eq!(st2.velocity, st.velocity);
    }

    #[test]
    fn two_steps_match_unrolled_recurrence() {
        let (lr, m, wd) = (0.05, 0.99, 5e-5);
        let (g1, g2) = (0.7, -1.3);
        let p0 = 2.0;
        // hand-unrolled
        let v1 = g1 + wd * p0;
        let p1 = p0 - lr * v1;
        let v2 = m * v1 + g2 + wd * p1;
        let p2 = p1 - lr * v2;

        let params = one("w", p0);
        let st = OptimState::new(&params, SgdHyper { lr, momentum: m, weight_decay: wd });
        let (a, st) = sgd_step(&params, &one("w", g1), &st).unwrap();
        let (b, st) = sgd_step(&a, &one("w", g2), &st).unwrap();
        assert_eq!(a.tensors()[0].data()[0], p1);
        assert_eq!(b.tensors()[0].data()[0], p2);
        assert_eq!(st.velocity.tensors()[0].data()[0], v2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = one("w", 1.0);
        let st = OptimState::new(&p, SgdHyper { lr: 0.1, momentum: 0.0, weight_decay: 0.0 });
        assert!(sgd_step(&p, &one("v", 1.0), &st).is_err());
    }
}
