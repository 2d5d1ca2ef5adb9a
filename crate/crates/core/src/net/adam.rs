use serde::{Deserialize, Serialize};

use super::{NetError, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers mirror the tensor layout of
/// the parameter set they were created for.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new<P: Parameters + ?Sized>(config: AdamConfig, params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One update. Any non-finite gradient aborts before touching state.
    pub fn step<P, G>(&mut self, params: &mut P, grads: &G) -> Result<(), NetError>
    where
        P: Parameters + ?Sized,
        G: Parameters + ?Sized,
    {
        let gs = grads.tensors();
        let mut ps = params.tensors_mut();
        if gs.len() != ps.len() || gs.len() != self.m.len() {
            return Err(NetError::Shape(format!(
                "adam holds {} tensors, got {} params and {} grads",
                self.m.len(),
                ps.len(),
                gs.len()
            )));
        }
        for (i, (g, p)) in gs.iter().zip(&ps).enumerate() {
            if g.len() != p.len() || g.len() != self.m[i].len() {
                return Err(NetError::Shape(format!("tensor {i} length mismatch")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NetError::NonFinite(format!("gradient tensor {i}")));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in ps.iter_mut().enumerate() {
            let g = gs[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                // Exactly-zero gradients leave the parameter in place; the
                // moments still decay.
                if g[j] == 0.0 {
                    continue;
                }
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// A single trainable scalar, e.g. the log entropy coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scalar(pub f64);

impl Parameters for Scalar {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![std::slice::from_ref(&self.0)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![std::slice::from_mut(&mut self.0)]
    }
}
