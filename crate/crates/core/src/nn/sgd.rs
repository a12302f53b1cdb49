//! SGD with classical momentum and coupled L2 weight decay, plus the
//! milestone step schedule used by the classification runs.

use alloc::vec;
use alloc::vec::Vec;

use super::ParamVector;
use crate::{CoreError, Result};

/// Optimizer state. The momentum buffer matches the parameter layout.
#[derive(Debug, Clone)]
pub struct SgdState {
    momentum_buffer: Vec<f64>,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdState {
    pub fn new(param_len: usize, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(CoreError::InvalidArgument(
                "momentum must lie in [0, 1)".into(),
            ));
        }
        if weight_decay < 0.0 {
            return Err(CoreError::InvalidArgument(
                "weight decay must be nonnegative".into(),
            ));
        }
        Ok(SgdState {
            momentum_buffer: vec![0.0; param_len],
            momentum,
            weight_decay,
        })
    }
}

/// One update: v ← momentum·v + g + weight_decay·θ; θ ← θ − lr·v.
/// Weight decay is coupled (added to the gradient) so it is affected by
/// momentum, matching classical SGD-with-L2 semantics.
pub fn sgd_step(
    params: &mut ParamVector,
    grads: &ParamVector,
    lr: f64,
    state: &mut SgdState,
) -> Result<()> {
    if !params.same_layout(grads) {
        return Err(CoreError::DimensionMismatch(
            "gradient layout does not match parameters".into(),
        ));
    }
    if state.momentum_buffer.len() != params.len() {
        return Err(CoreError::DimensionMismatch(
            "momentum buffer length does not match parameters".into(),
        ));
    }
    if !(lr > 0.0) {
        return Err(CoreError::InvalidArgument(
            "learning rate must be positive".into(),
        ));
    }
    let m = state.momentum;
    let wd = state.weight_decay;
    for ((p, &g), v) in params
        .values_mut()
        .iter_mut()
        .zip(grads.values())
        .zip(state.momentum_buffer.iter_mut())
    {
        *v = m * *v + g + wd * *p;
        *p -= lr * *v;
    }
    params.ensure_finite("sgd_step")
}

/// Milestone schedule: base_lr · gamma^(number of milestones ≤ epoch).
pub fn lr_at(epoch: usize, base_lr: f64, milestones: &[usize], gamma: f64) -> f64 {
    debug_assert!(milestones.windows(2).all(|w| w[0] < w[1]));
    let decays = milestones.iter().filter(|&&m| m <= epoch).count();
    base_lr * libm_free_powi(gamma, decays)
}

fn libm_free_powi(base: f64, exp: usize) -> f64 {
    let mut out = 1.0;
    for _ in 0..exp {
        out *= base;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(v: f64) -> ParamVector {
        let mut p = ParamVector::zeros(vec![(1, 1)]);
        p.values_mut()[0] = v;
        p
    }

    #[test]
    fn plain_gradient_descent_when_momentum_and_decay_are_zero() {
        let mut p = scalar_params(1.0);
        let g = scalar_params(0.25);
        let mut s = SgdState::new(1, 0.0, 0.0).unwrap();
        sgd_step(&mut p, &g, 0.1, &mut s).unwrap();
        assert_eq!(p.values()[0], 1.0 - 0.1 * 0.25);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = scalar_params(2.0);
        let g = scalar_params(0.0);
        let mut s = SgdState::new(1, 0.9, 0.0).unwrap();
        sgd_step(&mut p, &g, 0.1, &mut s).unwrap();
        assert_eq!(p.values()[0], 2.0);
    }

    #[test]
    fn momentum_sequence_matches_unrolled_recurrence() {
        // Hand-unrolled: v_t = m v_{t-1} + g_t + wd·θ_{t-1}; θ_t = θ_{t-1} − lr v_t
        let (m, wd, lr) = (0.9, 0.01, 0.1);
        let grads = [1.0, -0.5, 0.25];
        let mut theta = 0.7;
        let mut v = 0.0;
        let mut expected = Vec::new();
        for g in grads {
            v = m * v + g + wd * theta;
            theta -= lr * v;
            expected.push(theta);
        }
        let mut p = scalar_params(0.7);
        let mut s = SgdState::new(1, m, wd).unwrap();
        for (g, want) in grads.iter().zip(expected) {
            sgd_step(&mut p, &scalar_params(*g), lr, &mut s).unwrap();
            assert!((p.values()[0] - want).abs() <= 1e-15);
        }
    }

    #[test]
    fn nonfinite_update_is_an_error() {
        let mut p = scalar_params(1.0);
        let g = scalar_params(f64::INFINITY);
        let mut s = SgdState::new(1, 0.0, 0.0).unwrap();
        assert!(sgd_step(&mut p, &g, 0.1, &mut s).is_err());
    }

    #[test]
    fn milestone_schedule() {
        let ms = [60, 80, 90];
        assert_eq!(lr_at(0, 0.05, &ms, 0.1), 0.05);
        assert_eq!(lr_at(59, 0.05, &ms, 0.1), 0.05);
        assert!((lr_at(60, 0.05, &ms, 0.1) - 0.005).abs() < 1e-15);
        assert!((lr_at(85, 0.05, &ms, 0.1) - 0.0005).abs() < 1e-15);
        assert!((lr_at(95, 0.05, &ms, 0.1) - 0.00005).abs() < 1e-15);
        assert_eq!(lr_at(1000, 0.01, &[], 0.1), 0.01);
    }
}
