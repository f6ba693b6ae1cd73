//! Adam with decoupled weight decay over the two prompt tables.
//!
//! One step counter is shared by both tables. A table frozen under the
//! current status is skipped entirely: its parameters, first and second
//! moments stay bit-identical.

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Zip};
use serde::{Deserialize, Serialize};

use super::loss::Gradients;
use super::status::TrainStatus;
use crate::model::PromptTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Array2<f64>,
    pub v: Array2<f64>,
}

impl Moments {
    pub fn zeros(shape: (usize, usize)) -> Self {
        Moments {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
        }
    }
}

/// One bias-corrected update of `params` at 1-based `step`.
pub fn adam_step(
    params: ArrayViewMut2<f64>,
    grads: ArrayView2<f64>,
    moments: &mut Moments,
    cfg: &AdamConfig,
    step: u64,
) {
    debug_assert!(step >= 1);
    let bc1 = 1.0 - cfg.beta1.powf(step as f64);
    let bc2 = 1.0 - cfg.beta2.powf(step as f64);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    Zip::from(params)
        .and(grads)
        .and(&mut moments.m)
        .and(&mut moments.v)
        .for_each(|p, &g, m, v| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p * decay - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        });
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub states: Moments,
    pub objects: Moments,
    pub step: u64,
}

impl AdamState {
    pub fn new(table: &PromptTable) -> Self {
        AdamState {
            states: Moments::zeros(table.theta_a.dim()),
            objects: Moments::zeros(table.theta_o.dim()),
            step: 0,
        }
    }

    /// Advance the shared step counter and update the tables trainable under
    /// `status`.
    pub fn apply(&mut self, table: &mut PromptTable, grads: &Gradients, status: TrainStatus, cfg: &AdamConfig) {
        self.step += 1;
        if status.trains_states() {
            adam_step(table.theta_a.view_mut(), grads.theta_a.view(), &mut self.states, cfg, self.step);
        }
        if status.trains_objects() {
            adam_step(table.theta_o.view_mut(), grads.theta_o.view(), &mut self.objects, cfg, self.step);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = array![[1.5, -2.0]];
        let mut mo = Moments::zeros((1, 2));
        for step in 1..4 {
            adam_step(p.view_mut(), Array2::zeros((1, 2)).view(), &mut mo, &AdamConfig::new(0.1, 0.0), step);
        }
        assert_eq!(p, array![[1.5, -2.0]]);
    }

    #[test]
    fn first_step_scalar_trace() {
        // m = 0.05, v = 0.00025; m_hat = 0.5, v_hat = 0.25;
        // delta = -0.1 * 0.5 / (0.5 + 1e-8).
        let mut p = array![[0.0]];
        let mut mo = Moments::zeros((1, 1));
        adam_step(p.view_mut(), array![[0.5]].view(), &mut mo, &AdamConfig::new(0.1, 0.0), 1);
        let expected = -0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p[[0, 0]] - expected).abs() < 1e-15);
        assert!((p[[0, 0]] + 0.099_999_998).abs() < 1e-9);
    }

    #[test]
    fn frozen_table_and_moments_untouched() {
        let mut table = PromptTable {
            theta_a: array![[1.0, 2.0]],
            theta_o: array![[3.0, 4.0]],
            prefix: array![0.0, 0.0],
        };
        let mut state = AdamState::new(&table);
        let grads = Gradients {
            theta_a: array![[0.3, -0.1]],
            theta_o: array![[0.2, 0.2]],
            loss: 0.0,
        };
        let cfg = AdamConfig::new(0.01, 1e-5);
        state.apply(&mut table, &grads, TrainStatus::Joint, &cfg);
        let (a_before, moments_before) = (table.theta_a.clone(), state.states.clone());
        state.apply(&mut table, &grads, TrainStatus::Object, &cfg);
        assert_eq!(table.theta_a, a_before);
        assert_eq!(state.states, moments_before);
        assert_eq!(state.step, 2);
        assert_ne!(table.theta_o, array![[3.0, 4.0]]);
    }
}
