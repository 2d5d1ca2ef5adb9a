//! Tanh-squashed diagonal Gaussian policy.

use std::f64::consts::LN_2;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::mlp::{ForwardPass, Matrix, Mlp, MlpGrads};
use super::NetError;
use crate::types::{ActionVector, FieldSchema, StateVector};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Largest magnitude an emitted action may take; keeps sampled actions
/// strictly inside (-1, 1) once tanh saturates in f64.
pub const ACTION_LIMIT: f64 = 1.0 - 1e-12;

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 - tanh(u)^2)` written as `2(ln 2 - u - softplus(-2u))`.
pub fn log_tanh_jacobian(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

/// Log-density of `tanh(u)` where `u = mean + exp(log_std) · noise`,
/// summed over action dimensions.
pub fn squashed_log_prob(log_std: &[f64], noise: &[f64], u: &[f64]) -> f64 {
    log_std
        .iter()
        .zip(noise)
        .zip(u)
        .map(|((ls, e), u)| -0.5 * e * e - ls - HALF_LN_2PI - log_tanh_jacobian(*u))
        .sum()
}

/// Closed-form KL(p ‖ q) between diagonal Gaussians given means and log
/// standard deviations.
pub fn diag_gaussian_kl(mean_p: &[f64], log_std_p: &[f64], mean_q: &[f64], log_std_q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for i in 0..mean_p.len() {
        let var_p = (2.0 * log_std_p[i]).exp();
        let var_q = (2.0 * log_std_q[i]).exp();
        let d = mean_p[i] - mean_q[i];
        kl += log_std_q[i] - log_std_p[i] + (var_p + d * d) / (2.0 * var_q) - 0.5;
    }
    kl.max(0.0)
}

/// Gradient of [`diag_gaussian_kl`] w.r.t. `(mean_p, log_std_p)`, scaled by
/// `weight`, accumulated into the given slices.
pub fn diag_gaussian_kl_grad(
    mean_p: &[f64],
    log_std_p: &[f64],
    mean_q: &[f64],
    log_std_q: &[f64],
    weight: f64,
    d_mean: &mut [f64],
    d_log_std: &mut [f64],
) {
    for i in 0..mean_p.len() {
        let var_q = (2.0 * log_std_q[i]).exp();
        let var_p = (2.0 * log_std_p[i]).exp();
        d_mean[i] += weight * (mean_p[i] - mean_q[i]) / var_q;
        d_log_std[i] += weight * (var_p / var_q - 1.0);
    }
}

/// Network head evaluated on a batch of states.
#[derive(Debug, Clone)]
pub struct PolicyHead {
    pass: ForwardPass,
    pub mean: Matrix,
    /// Log standard deviations after clamping.
    pub log_std: Matrix,
    /// `true` where the raw log-std was outside the clamp range (zero
    /// gradient there).
    clamped: Vec<bool>,
}

/// Reparameterised draw from a [`PolicyHead`].
#[derive(Debug, Clone)]
pub struct SquashedSample {
    pub noise: Matrix,
    pub pre_tanh: Matrix,
    pub actions: Matrix,
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    net: Mlp,
    action_dim: usize,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![state_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * action_dim);
        Self {
            net: Mlp::new(&dims, rng),
            action_dim,
        }
    }

    pub fn from_net(net: Mlp) -> Result<Self, NetError> {
        let out = net.output_dim();
        if out == 0 || out % 2 != 0 {
            return Err(NetError::Shape(format!(
                "policy head needs an even output width, got {out}"
            )));
        }
        Ok(Self {
            net,
            action_dim: out / 2,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn head_batch(&self, states: &Matrix) -> PolicyHead {
        let pass = self.net.forward_batch(states);
        let out = pass.output();
        let m = self.action_dim;
        let mean = out.columns(0, m);
        let mut log_std = out.columns(m, 2 * m);
        let mut clamped = vec![false; log_std.data.len()];
        for (v, c) in log_std.data.iter_mut().zip(clamped.iter_mut()) {
            if *v < LOG_STD_MIN || *v > LOG_STD_MAX {
                *c = true;
                *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
            }
        }
        PolicyHead {
            pass,
            mean,
            log_std,
            clamped,
        }
    }

    /// Mean and clamped log-std at a single state.
    pub fn head(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NetError> {
        if state.len() != self.state_dim() {
            return Err(NetError::DimensionMismatch {
                expected: self.state_dim(),
                actual: state.len(),
            });
        }
        let h = self.head_batch(&Matrix::from_vec(1, state.len(), state.to_vec()));
        Ok((h.mean.data, h.log_std.data))
    }

    /// Deterministic action `tanh(mean)`.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>, NetError> {
        let (mean, _) = self.head(state)?;
        Ok(mean
            .iter()
            .map(|m| m.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT))
            .collect())
    }

    /// Stochastic action and its log-probability, drawing noise from `rng`.
    pub fn sample_with<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64), NetError> {
        let (mean, log_std) = self.head(state)?;
        let noise: Vec<f64> = (0..self.action_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let u: Vec<f64> = (0..self.action_dim)
            .map(|i| mean[i] + log_std[i].exp() * noise[i])
            .collect();
        let log_prob = squashed_log_prob(&log_std, &noise, &u);
        let a = u
            .iter()
            .map(|u| u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT))
            .collect();
        Ok((a, log_prob))
    }

    /// Seeded sample at a typed state.
    pub fn sample(
        &self,
        state: &StateVector,
        action_schema: &Arc<FieldSchema>,
        rng_seed: u64,
    ) -> Result<(ActionVector, f64), NetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let (a, lp) = self.sample_with(state.values(), &mut rng)?;
        let a = ActionVector::new(a, action_schema.clone())
            .map_err(|e| NetError::Shape(e.to_string()))?;
        Ok((a, lp))
    }

    /// Backpropagates head gradients (w.r.t. mean and clamped log-std) into
    /// network parameter gradients.
    pub fn backward_head(&self, head: &PolicyHead, d_mean: &Matrix, d_log_std: &Matrix) -> MlpGrads {
        let n = head.mean.rows;
        let m = self.action_dim;
        let mut dy = Matrix::zeros(n, 2 * m);
        for r in 0..n {
            for j in 0..m {
                dy.data[r * 2 * m + j] = d_mean.get(r, j);
                let k = r * m + j;
                dy.data[r * 2 * m + m + j] = if head.clamped[k] { 0.0 } else { d_log_std.data[k] };
            }
        }
        let (grads, _) = self.net.backward(&head.pass, &dy, true);
        grads.expect("parameter gradients requested")
    }
}

/// Reparameterised squashing of a head with externally supplied noise.
pub fn squash(head: &PolicyHead, noise: &Matrix) -> SquashedSample {
    let (n, m) = (head.mean.rows, head.mean.cols);
    assert_eq!((noise.rows, noise.cols), (n, m), "noise shape");
    let mut pre = Matrix::zeros(n, m);
    for k in 0..n * m {
        pre.data[k] = head.mean.data[k] + head.log_std.data[k].exp() * noise.data[k];
    }
    let actions = Matrix::from_vec(n, m, pre.data.iter().map(|u| u.tanh()).collect());
    let log_probs = (0..n)
        .map(|r| squashed_log_prob(head.log_std.row(r), noise.row(r), pre.row(r)))
        .collect();
    SquashedSample {
        noise: noise.clone(),
        pre_tanh: pre,
        actions,
        log_probs,
    }
}

/// Chain rule through [`squash`]: given `dL/da` and `dL/dlogπ` per row,
/// returns `(dL/dmean, dL/dlog_std)`.
pub fn squash_backward(
    head: &PolicyHead,
    sample: &SquashedSample,
    d_actions: &Matrix,
    d_log_probs: &[f64],
) -> (Matrix, Matrix) {
    let (n, m) = (head.mean.rows, head.mean.cols);
    let mut d_mean = Matrix::zeros(n, m);
    let mut d_log_std = Matrix::zeros(n, m);
    for r in 0..n {
        let gl = d_log_probs[r];
        for j in 0..m {
            let k = r * m + j;
            let a = sample.actions.data[k];
            let sigma = head.log_std.data[k].exp();
            // logπ = Σ(-ε²/2 - logσ - ln√2π) - Σ ln(1 - tanh²u); with ε fixed,
            // ∂logπ/∂u = 2 tanh u and ∂logπ/∂logσ picks up -1 directly.
            let gu = d_actions.data[k] * (1.0 - a * a) + gl * 2.0 * a;
            d_mean.data[k] = gu;
            d_log_std.data[k] = gu * sigma * sample.noise.data[k] - gl;
        }
    }
    (d_mean, d_log_std)
}

/// KL(p(·|s) ‖ q(·|s)) between the pre-squash Gaussians; the shared tanh
/// bijection leaves it unchanged.
pub fn gaussian_kl(p: &GaussianPolicy, q: &GaussianPolicy, state: &StateVector) -> Result<f64, NetError> {
    if p.action_dim != q.action_dim {
        return Err(NetError::Shape(format!(
            "action dims differ: {} vs {}",
            p.action_dim, q.action_dim
        )));
    }
    let (mp, lp) = p.head(state.values())?;
    let (mq, lq) = q.head(state.values())?;
    Ok(diag_gaussian_kl(&mp, &lp, &mq, &lq))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schemas() -> (Arc<FieldSchema>, Arc<FieldSchema>) {
        let s = FieldSchema::new(
            "s",
            (0..3).map(|i| (format!("s{i}"), String::new(), None)),
        )
        .unwrap();
        let a = FieldSchema::new("a", vec![("u".to_string(), String::new(), None)]).unwrap();
        (Arc::new(s), Arc::new(a))
    }

    #[test]
    fn kl_textbook_values() {
        assert_eq!(diag_gaussian_kl(&[0.0], &[0.0], &[1.0], &[0.0]), 0.5);
        assert_eq!(diag_gaussian_kl(&[0.3, -1.0], &[0.2, -0.5], &[0.3, -1.0], &[0.2, -0.5]), 0.0);
        // σp = 1, σq = 2: ln 2 + 1/8 - 1/2
        let kl = diag_gaussian_kl(&[0.0], &[0.0], &[0.0], &[LN_2]);
        assert!((kl - (LN_2 + 0.125 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn identical_policies_have_zero_kl() {
        let (s, _) = schemas();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GaussianPolicy::new(3, 1, &[8, 8], &mut rng);
        let st = StateVector::new(vec![0.1, -0.4, 2.0], s).unwrap();
        assert_eq!(gaussian_kl(&p, &p.clone(), &st).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_limit_matches_tanh_mean() {
        let (s, a) = schemas();
        let mut net = Mlp::zeros(&[3, 4, 2]);
        net.biases_mut(1).copy_from_slice(&[0.7, -30.0]);
        let p = GaussianPolicy::from_net(net).unwrap();
        let st = StateVector::new(vec![0.0; 3], s).unwrap();
        let (act, lp) = p.sample(&st, &a, 11).unwrap();
        assert!((act.values()[0] - 0.7f64.tanh()).abs() < 1e-6);
        assert!(lp > 15.0, "density should concentrate, got {lp}");
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let (s, a) = schemas();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = GaussianPolicy::new(3, 1, &[8], &mut rng);
        let st = StateVector::new(vec![1.0, 2.0, 3.0], s).unwrap();
        assert_eq!(p.sample(&st, &a, 4).unwrap(), p.sample(&st, &a, 4).unwrap());
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!((log_tanh_jacobian(0.0)).abs() < 1e-15);
        let u = 0.37f64;
        assert!((log_tanh_jacobian(u) - (1.0 - u.tanh().powi(2)).ln()).abs() < 1e-14);
        assert!(log_tanh_jacobian(40.0).is_finite());
    }
}
