//! Soft Actor-Critic updates with twin critics, polyak-averaged targets and
//! automatic entropy-coefficient tuning. The policy objective optionally
//! carries a per-sample weighted KL penalty toward a frozen reference
//! policy.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buffer::Batch;
use crate::net::{
    diag_gaussian_kl, diag_gaussian_kl_grad, squash, squash_backward, Adam, AdamConfig,
    Checkpoint, GaussianPolicy, Matrix, Mlp, MlpGrads, NetError, Scalar, TwinCritic,
};

#[derive(Debug, Error)]
pub enum SacError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("non-finite {what} loss ({value})")]
    NonFiniteLoss { what: &'static str, value: f64 },
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub hidden: Vec<usize>,
    pub policy_lr: f64,
    pub q_lr: f64,
    pub alpha_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub init_log_alpha: f64,
    /// Defaults to `-action_dim` when unset.
    pub target_entropy: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            hidden: vec![256, 256],
            policy_lr: 3e-4,
            q_lr: 3e-4,
            alpha_lr: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            init_log_alpha: 0.0,
            target_entropy: None,
        }
    }
}

impl SacConfig {
    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }
}

/// Per-sample KL regulariser toward a frozen policy: the policy loss gains
/// `weights[i] · KL(π(·|s_i) ‖ reference(·|s_i))`.
#[derive(Debug, Clone, Copy)]
pub struct KlPenalty<'a> {
    pub reference: &'a GaussianPolicy,
    pub weights: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct PolicyLoss {
    pub loss: f64,
    pub grads: MlpGrads,
    pub log_probs: Vec<f64>,
    /// Mean of the weighted KL term over the batch.
    pub kl_term: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub q_loss: f64,
    pub pi_loss: f64,
    pub kl_term: f64,
    pub alpha: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct SacState {
    pub policy: GaussianPolicy,
    pub critics: TwinCritic,
    pub target_critics: TwinCritic,
    pub log_alpha: f64,
    pub target_entropy: f64,
    gamma: f64,
    policy_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    alpha_opt: Adam,
}

/// Rows of `[states | actions]`.
fn critic_inputs(states: &[f64], state_dim: usize, actions: &Matrix) -> Matrix {
    let s = Matrix::from_vec(actions.rows, state_dim, states.to_vec());
    s.hcat(actions)
}

impl SacState {
    /// Fresh policy, critics and targets.
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, cfg: &SacConfig, rng: &mut R) -> Self {
        let policy = GaussianPolicy::new(state_dim, action_dim, &cfg.hidden, rng);
        Self::with_policy(policy, cfg, rng)
    }

    /// Wraps an existing policy with freshly initialised critics.
    pub fn with_policy<R: Rng + ?Sized>(policy: GaussianPolicy, cfg: &SacConfig, rng: &mut R) -> Self {
        assert!(cfg.gamma > 0.0 && cfg.gamma < 1.0, "discount must lie in (0, 1)");
        let critics = TwinCritic::new(policy.state_dim(), policy.action_dim(), &cfg.hidden, rng);
        Self::assemble(policy, critics.clone(), critics, cfg.init_log_alpha, cfg)
    }

    fn assemble(
        policy: GaussianPolicy,
        critics: TwinCritic,
        target_critics: TwinCritic,
        log_alpha: f64,
        cfg: &SacConfig,
    ) -> Self {
        let target_entropy = cfg.target_entropy.unwrap_or(-(policy.action_dim() as f64));
        let log_alpha = Scalar(log_alpha);
        Self {
            policy_opt: Adam::new(cfg.adam(cfg.policy_lr), policy.net()),
            q1_opt: Adam::new(cfg.adam(cfg.q_lr), &critics.q1),
            q2_opt: Adam::new(cfg.adam(cfg.q_lr), &critics.q2),
            alpha_opt: Adam::new(cfg.adam(cfg.alpha_lr), &log_alpha),
            target_critics,
            critics,
            policy,
            log_alpha: log_alpha.0,
            target_entropy,
            gamma: cfg.gamma,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Matrix {
        let m = self.policy.action_dim();
        Matrix::from_vec(rows, m, (0..rows * m).map(|_| rng.sample(StandardNormal)).collect())
    }

    /// Soft Bellman targets with next actions drawn via `rng`.
    pub fn compute_target_y<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Vec<f64> {
        let noise = self.noise(batch.len, rng);
        self.target_y_with_noise(batch, &noise)
    }

    /// `y = r + γ(1 − done)(min Q'(s', a') − α log π(a'|s'))`, `a' ~ π(·|s')`.
    pub fn target_y_with_noise(&self, batch: &Batch, noise: &Matrix) -> Vec<f64> {
        let sd = batch.state_dim;
        let next = Matrix::from_vec(batch.len, sd, batch.next_states.clone());
        let head = self.policy.head_batch(&next);
        let sample = squash(&head, noise);
        let q_next = self
            .target_critics
            .min_q(&critic_inputs(&batch.next_states, sd, &sample.actions));
        let alpha = self.alpha();
        (0..batch.len)
            .map(|i| {
                if batch.terminals[i] {
                    batch.rewards[i]
                } else {
                    batch.rewards[i] + self.gamma * (q_next[i] - alpha * sample.log_probs[i])
                }
            })
            .collect()
    }

    /// Half mean-squared critic loss `mean((q - y)^2) / 2` and its gradients
    /// for one critic against fixed targets.
    pub fn critic_loss_and_grads(critic: &Mlp, inputs: &Matrix, targets: &[f64]) -> (f64, MlpGrads) {
        let n = targets.len() as f64;
        let pass = critic.forward_batch(inputs);
        let q = &pass.output().data;
        let mut loss = 0.0;
        let mut dy = Matrix::zeros(q.len(), 1);
        for i in 0..q.len() {
            let d = q[i] - targets[i];
            loss += 0.5 * d * d;
            dy.data[i] = d / n;
        }
        let (g, _) = critic.backward(&pass, &dy, true);
        (loss / n, g.expect("parameter gradients requested"))
    }

    /// One Adam step on each critic toward `y`; returns the loss averaged
    /// over the batch and both critics.
    pub fn update_q_with_targets(&mut self, batch: &Batch, y: &[f64]) -> Result<f64, SacError> {
        if batch.len == 0 {
            return Err(SacError::EmptyBatch);
        }
        let inputs = critic_inputs(
            &batch.states,
            batch.state_dim,
            &Matrix::from_vec(batch.len, batch.action_dim, batch.actions.clone()),
        );
        let (l1, g1) = Self::critic_loss_and_grads(&self.critics.q1, &inputs, y);
        let (l2, g2) = Self::critic_loss_and_grads(&self.critics.q2, &inputs, y);
        let loss = 0.5 * (l1 + l2);
        if !loss.is_finite() {
            return Err(SacError::NonFiniteLoss { what: "critic", value: loss });
        }
        self.q1_opt.step(&mut self.critics.q1, &g1)?;
        self.q2_opt.step(&mut self.critics.q2, &g2)?;
        Ok(loss)
    }

    pub fn update_q<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<f64, SacError> {
        let y = self.compute_target_y(batch, rng);
        self.update_q_with_targets(batch, &y)
    }

    /// Policy objective `mean(α log π(a|s) − min Q(s, a) + w·KL)` with the
    /// reparameterised action built from `noise`, and its gradient w.r.t.
    /// the policy parameters.
    pub fn policy_loss_and_grads(
        &self,
        batch: &Batch,
        noise: &Matrix,
        kl: Option<KlPenalty<'_>>,
    ) -> PolicyLoss {
        let n = batch.len;
        let sd = batch.state_dim;
        let m = self.policy.action_dim();
        let nf = n as f64;
        let states = Matrix::from_vec(n, sd, batch.states.clone());
        let head = self.policy.head_batch(&states);
        let sample = squash(&head, noise);
        let inputs = critic_inputs(&batch.states, sd, &sample.actions);
        let p1 = self.critics.q1.forward_batch(&inputs);
        let p2 = self.critics.q2.forward_batch(&inputs);
        let (q1, q2) = (&p1.output().data, &p2.output().data);
        let alpha = self.alpha();

        let mut loss = 0.0;
        let mut dq1 = Matrix::zeros(n, 1);
        let mut dq2 = Matrix::zeros(n, 1);
        for i in 0..n {
            let q = if q1[i] <= q2[i] {
                dq1.data[i] = -1.0 / nf;
                q1[i]
            } else {
                dq2.data[i] = -1.0 / nf;
                q2[i]
            };
            loss += alpha * sample.log_probs[i] - q;
        }
        let (_, dx1) = self.critics.q1.backward(&p1, &dq1, false);
        let (_, dx2) = self.critics.q2.backward(&p2, &dq2, false);
        let mut d_actions = Matrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                d_actions.data[i * m + j] = dx1.get(i, sd + j) + dx2.get(i, sd + j);
            }
        }
        let d_logp = vec![alpha / nf; n];
        let (mut d_mean, mut d_log_std) = squash_backward(&head, &sample, &d_actions, &d_logp);

        let mut kl_total = 0.0;
        if let Some(pen) = kl {
            assert_eq!(pen.weights.len(), n, "one KL weight per sample");
            if pen.weights.iter().any(|&w| w != 0.0) {
                let ref_head = pen.reference.head_batch(&states);
                for i in 0..n {
                    let w = pen.weights[i];
                    if w == 0.0 {
                        continue;
                    }
                    let (mp, lp) = (head.mean.row(i), head.log_std.row(i));
                    let (mq, lq) = (ref_head.mean.row(i), ref_head.log_std.row(i));
                    kl_total += w * diag_gaussian_kl(mp, lp, mq, lq);
                    diag_gaussian_kl_grad(
                        mp,
                        lp,
                        mq,
                        lq,
                        w / nf,
                        d_mean.row_mut(i),
                        &mut d_log_std.data[i * m..(i + 1) * m],
                    );
                }
            }
        }
        let grads = self.policy.backward_head(&head, &d_mean, &d_log_std);
        let kl_term = kl_total / nf;
        PolicyLoss {
            loss: loss / nf + kl_term,
            grads,
            log_probs: sample.log_probs,
            kl_term,
        }
    }

    pub fn update_pi<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        rng: &mut R,
        kl: Option<KlPenalty<'_>>,
    ) -> Result<PolicyLoss, SacError> {
        if batch.len == 0 {
            return Err(SacError::EmptyBatch);
        }
        let noise = self.noise(batch.len, rng);
        let out = self.policy_loss_and_grads(batch, &noise, kl);
        if !out.loss.is_finite() {
            return Err(SacError::NonFiniteLoss { what: "policy", value: out.loss });
        }
        self.policy_opt.step(self.policy.net_mut(), &out.grads)?;
        Ok(out)
    }

    /// Gradient of `mean(−α(log π + H̄))` w.r.t. `log α`.
    pub fn alpha_grad(&self, log_probs: &[f64]) -> f64 {
        let n = log_probs.len() as f64;
        let mean: f64 = log_probs.iter().map(|lp| lp + self.target_entropy).sum::<f64>() / n;
        -self.alpha() * mean
    }

    pub fn update_alpha_from_log_probs(&mut self, log_probs: &[f64]) -> Result<(), SacError> {
        if log_probs.is_empty() {
            return Err(SacError::EmptyBatch);
        }
        let g = Scalar(self.alpha_grad(log_probs));
        let mut p = Scalar(self.log_alpha);
        self.alpha_opt.step(&mut p, &g)?;
        self.log_alpha = p.0;
        Ok(())
    }

    /// Fresh policy sample at the batch states, then one step on `log α`.
    pub fn update_alpha<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<(), SacError> {
        if batch.len == 0 {
            return Err(SacError::EmptyBatch);
        }
        let noise = self.noise(batch.len, rng);
        let states = Matrix::from_vec(batch.len, batch.state_dim, batch.states.clone());
        let sample = squash(&self.policy.head_batch(&states), &noise);
        self.update_alpha_from_log_probs(&sample.log_probs)
    }

    /// Networks and temperature. Optimiser moments are not stored; a
    /// restored agent continues with fresh moments.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.put_mlp("policy", self.policy.net());
        ck.put_mlp("q1", &self.critics.q1);
        ck.put_mlp("q2", &self.critics.q2);
        ck.put_mlp("target_q1", &self.target_critics.q1);
        ck.put_mlp("target_q2", &self.target_critics.q2);
        ck.insert("log_alpha", 1, 1, vec![self.log_alpha]);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: &SacConfig) -> Result<Self, NetError> {
        let policy = GaussianPolicy::from_net(ck.get_mlp("policy")?)?;
        let critics = TwinCritic {
            q1: ck.get_mlp("q1")?,
            q2: ck.get_mlp("q2")?,
        };
        let target_critics = TwinCritic {
            q1: ck.get_mlp("target_q1")?,
            q2: ck.get_mlp("target_q2")?,
        };
        let log_alpha = ck.tensor("log_alpha")?.data[0];
        Ok(Self::assemble(policy, critics, target_critics, log_alpha, cfg))
    }

    /// `target ← τ·online + (1 − τ)·target`.
    pub fn soft_update_targets(&mut self, tau: f64) {
        assert!(tau > 0.0 && tau <= 1.0, "tau must lie in (0, 1]");
        self.target_critics.blend_from(&self.critics, tau);
    }

    /// Critic, policy and temperature updates followed by target tracking.
    /// The temperature step reuses the log-probabilities of the policy
    /// update's sample.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        tau: f64,
        rng: &mut R,
        kl: Option<KlPenalty<'_>>,
    ) -> Result<UpdateStats, SacError> {
        let alpha = self.alpha();
        let q_loss = self.update_q(batch, rng)?;
        let pi = self.update_pi(batch, rng, kl)?;
        self.update_alpha_from_log_probs(&pi.log_probs)?;
        self.soft_update_targets(tau);
        let entropy = -pi.log_probs.iter().sum::<f64>() / pi.log_probs.len() as f64;
        Ok(UpdateStats {
            q_loss,
            pi_loss: pi.loss,
            kl_term: pi.kl_term,
            alpha,
            entropy,
        })
    }
}
