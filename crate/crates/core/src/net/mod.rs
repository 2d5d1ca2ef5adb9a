//! Dense networks with hand-written reverse-mode gradients, Adam, the
//! squashed Gaussian policy head, twin critics, and text checkpoints.

mod adam;
mod checkpoint;
mod mlp;
mod policy;

use rand::Rng;
use thiserror::Error;

pub use adam::{Adam, AdamConfig, Scalar};
pub use checkpoint::{Checkpoint, Tensor, SCHEMA_VERSION};
pub use mlp::{ForwardPass, Matrix, Mlp, MlpGrads};
pub use policy::{
    diag_gaussian_kl, diag_gaussian_kl_grad, gaussian_kl, log_tanh_jacobian, softplus, squash,
    squash_backward, squashed_log_prob, GaussianPolicy, PolicyHead, SquashedSample, ACTION_LIMIT,
    LOG_STD_MAX, LOG_STD_MIN,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Anything exposing its trainable tensors in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

/// Two independent critics mapping `state ⊕ action` to a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinCritic {
    pub q1: Mlp,
    pub q2: Mlp,
}

impl TwinCritic {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![state_dim + action_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Self {
            q1: Mlp::new(&dims, rng),
            q2: Mlp::new(&dims, rng),
        }
    }

    pub fn blend_from(&mut self, online: &TwinCritic, tau: f64) {
        self.q1.blend_from(&online.q1, tau);
        self.q2.blend_from(&online.q2, tau);
    }

    /// Element-wise `min(Q1, Q2)` on a batch of `state ⊕ action` rows.
    pub fn min_q(&self, inputs: &Matrix) -> Vec<f64> {
        let a = self.q1.forward_batch(inputs);
        let b = self.q2.forward_batch(inputs);
        a.output()
            .data
            .iter()
            .zip(&b.output().data)
            .map(|(x, y)| x.min(*y))
            .collect()
    }
}
