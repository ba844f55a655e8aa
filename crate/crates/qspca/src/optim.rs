//! Adaptive-moment gradient steps with a decoupled decay penalty.

use nalgebra::DMatrix;

/// Hyperparameters for [`AdamState::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub step_size: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            step_size: 1e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators for one parameter matrix.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: DMatrix<f64>,
    v: DMatrix<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: DMatrix::zeros(rows, cols),
            v: DMatrix::zeros(rows, cols),
            t: 0,
        }
    }

    /// One bias-corrected update in place. The decay penalty is decoupled:
    /// it scales the parameter directly instead of entering the moments.
    pub fn step(&mut self, theta: &mut DMatrix<f64>, grad: &DMatrix<f64>, p: &AdamParams) {
        assert_eq!(theta.shape(), grad.shape());
        assert_eq!(theta.shape(), self.m.shape());
        self.t += 1;
        let bc1 = 1.0 - p.beta1.powi(self.t as i32);
        let bc2 = 1.0 - p.beta2.powi(self.t as i32);
        for ((th, g), (m, v)) in theta
            .iter_mut()
            .zip(grad.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = p.beta1 * *m + (1.0 - p.beta1) * g;
            *v = p.beta2 * *v + (1.0 - p.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *th -= p.step_size * m_hat / (v_hat.sqrt() + p.epsilon) + p.step_size * p.weight_decay * *th;
        }
    }
}
