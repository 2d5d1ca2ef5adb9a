//! Environment-interaction loop shared by original-task training and
//! recovery retraining, plus greedy policy evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buffer::ReplayBuffer;
use crate::envs::{EnvError, Environment, ResetMode};
use crate::net::{GaussianPolicy, NetError};
use crate::sac::{KlPenalty, SacConfig, SacError, SacState, UpdateStats};
use crate::types::{ActionVector, CoreError, Transition};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("update failed at step {step}: {source}")]
    Update {
        step: usize,
        #[source]
        source: SacError,
    },
    #[error("{program} program failed at step {step}: {message}")]
    Signal {
        step: usize,
        program: &'static str,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Evaluation and reward code attached to a recovery run. Both read the
/// environment's reward view; `reward` additionally sees the action.
pub trait RecoverySignal {
    fn eval_flag(&self, view: &[f64]) -> Result<u8, String>;
    fn reward(&self, view_next: &[f64], action: &[f64]) -> Result<f64, String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Uniform-random actions before the policy takes over (original-task
    /// training only).
    pub warmup_steps: usize,
    pub grad_steps_per_env_step: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub checkpoint_interval: usize,
    pub seed: u64,
    pub sac: SacConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 1_000_000,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            warmup_steps: 5000,
            grad_steps_per_env_step: 1,
            eval_interval: 5000,
            eval_episodes: 5,
            checkpoint_interval: 50_000,
            seed: 0,
            sac: SacConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity must be at least batch_size");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be positive");
        }
        if !(self.sac.gamma > 0.0 && self.sac.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.sac.tau > 0.0 && self.sac.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.sac.hidden.is_empty() || self.sac.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        Ok(())
    }
}

/// Independent random stream `stream` under root `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const INIT_STREAM: u64 = 0;
const RESET_STREAM: u64 = 1;
const ACTION_STREAM: u64 = 2;
const REPLAY_STREAM: u64 = 3;
const UPDATE_STREAM: u64 = 4;
const EVAL_STREAM: u64 = 5;

pub fn init_rng(seed: u64) -> ChaCha8Rng {
    rng_stream(seed, INIT_STREAM)
}

/// Seed for the evaluation episodes of a run; fixed across curve points so
/// that every point is measured from the same start states.
pub fn eval_seed(seed: u64) -> u64 {
    rng_stream(seed, EVAL_STREAM).random()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Seed passed to `reset`; replays the episode's start state.
    pub reset_seed: u64,
    pub task_return: f64,
    /// Task return with the reward zeroed on steps whose state failed the
    /// eval program; equals `task_return` when no program is attached.
    pub gated_return: f64,
    pub length: usize,
    /// Reached a state with eval flag 1 (or, without a program, a valid
    /// state) at some step.
    pub recovered: bool,
    /// Held the ground-truth valid region for `SUCCESS_HOLD_STEPS`
    /// consecutive steps.
    pub success: bool,
}

pub const SUCCESS_HOLD_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeRecord>,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn mean_std_return(&self) -> (f64, f64) {
        mean_std(self.episodes.iter().map(|e| e.gated_return))
    }

    pub fn mean_std_task_return(&self) -> (f64, f64) {
        mean_std(self.episodes.iter().map(|e| e.task_return))
    }

    fn fraction(&self, f: impl Fn(&EpisodeRecord) -> bool) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().filter(|e| f(e)).count() as f64 / self.episodes.len() as f64
    }

    pub fn recovery_fraction(&self) -> f64 {
        self.fraction(|e| e.recovered)
    }

    pub fn success_rate(&self) -> f64 {
        self.fraction(|e| e.success)
    }
}

/// Runs `n_episodes` greedy (`tanh(mean)`) episodes. Episode `i` resets with
/// a seed derived from `seed` and `i`.
pub fn evaluate_policy(
    env: &dyn Environment,
    policy: &GaussianPolicy,
    n_episodes: usize,
    mode: ResetMode,
    seed: u64,
    signal: Option<&dyn RecoverySignal>,
) -> Result<EvalReport, TrainError> {
    let spec = env.spec();
    let mut seeds = rng_stream(seed, RESET_STREAM);
    let mut episodes = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let reset_seed = seeds.random();
        let mut s = env.reset(mode, reset_seed);
        let mut rec = EpisodeRecord {
            reset_seed,
            task_return: 0.0,
            gated_return: 0.0,
            length: 0,
            recovered: false,
            success: false,
        };
        let mut held = 0;
        loop {
            let flag = match signal {
                Some(sig) => sig
                    .eval_flag(&env.reward_view_values(s.state.values()))
                    .map_err(|message| TrainError::Signal {
                        step: rec.length,
                        program: "eval",
                        message,
                    })?,
                None => env.truth_valid(&s.state) as u8,
            };
            rec.recovered |= flag == 1;
            if env.truth_valid(&s.state) {
                held += 1;
                rec.success |= held >= SUCCESS_HOLD_STEPS;
            } else {
                held = 0;
            }
            let a = ActionVector::new(policy.mean_action(s.state.values())?, spec.action_schema.clone())?;
            let r = env.step(&s, &a)?;
            rec.task_return += r.task_reward;
            if signal.is_none() || flag == 1 {
                rec.gated_return += r.task_reward;
            }
            rec.length += 1;
            s = r.next;
            if r.terminated || r.truncated {
                if env.truth_valid(&s.state) {
                    held += 1;
                    rec.success |= held >= SUCCESS_HOLD_STEPS;
                }
                break;
            }
        }
        episodes.push(rec);
    }
    Ok(EvalReport { episodes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub recovery_fraction: f64,
    pub returns: Vec<f64>,
}

impl CurvePoint {
    pub fn from_report(step: usize, report: &EvalReport) -> Self {
        let (mean_return, std_return) = report.mean_std_return();
        Self {
            step,
            mean_return,
            std_return,
            recovery_fraction: report.recovery_fraction(),
            returns: report.episodes.iter().map(|e| e.gated_return).collect(),
        }
    }
}

/// What the loop optimises.
#[derive(Clone, Copy)]
pub enum Objective<'a> {
    /// Task reward from near-valid resets with termination enforced.
    Original,
    /// Out-of-distribution resets, no termination, reward switching on the
    /// eval flag and a flag-weighted KL penalty toward `reference`.
    Recovery {
        signal: &'a dyn RecoverySignal,
        reference: &'a GaussianPolicy,
        lambda: f64,
    },
}

pub enum Progress<'a> {
    Eval(&'a CurvePoint),
    Checkpoint { step: usize, sac: &'a SacState },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<CurvePoint>,
    pub buffer: ReplayBuffer,
    pub last_update: Option<UpdateStats>,
}

/// `r_task` on valid states, `lambda · c_reward` elsewhere.
pub fn select_reward(eval_flag: u8, task_reward: f64, generated_reward: f64, lambda: f64) -> f64 {
    if eval_flag == 1 {
        task_reward
    } else {
        lambda * generated_reward
    }
}

/// Consolidation penalty for one state.
pub fn lpc_term(eval_flag: u8, kl: f64) -> f64 {
    if eval_flag == 1 {
        kl
    } else {
        0.0
    }
}

pub fn run(
    env: &dyn Environment,
    sac: &mut SacState,
    objective: Objective<'_>,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let spec = env.spec();
    let (mode, warmup) = match objective {
        Objective::Original => (ResetMode::Original, cfg.warmup_steps),
        Objective::Recovery { lambda, .. } => {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(TrainError::Config(format!("lambda must be a finite non-negative number, got {lambda}")));
            }
            (ResetMode::Ood, 0)
        }
    };
    let signal = match objective {
        Objective::Original => None,
        Objective::Recovery { signal, .. } => Some(signal),
    };
    let mut buffer = ReplayBuffer::new(
        cfg.buffer_capacity,
        spec.state_schema.clone(),
        spec.action_schema.clone(),
    );
    let mut reset_rng = rng_stream(cfg.seed, RESET_STREAM);
    let mut action_rng = rng_stream(cfg.seed, ACTION_STREAM);
    let mut replay_rng = rng_stream(cfg.seed, REPLAY_STREAM);
    let mut update_rng = rng_stream(cfg.seed, UPDATE_STREAM);
    let eval_seed = eval_seed(cfg.seed);

    let mut curve = Vec::new();
    let mut last_update = None;
    let mut state = env.reset(mode, reset_rng.random());
    for t in 0..=cfg.total_steps {
        if t % cfg.eval_interval == 0 {
            let report = evaluate_policy(env, &sac.policy, cfg.eval_episodes, mode, eval_seed, signal)?;
            let point = CurvePoint::from_report(t, &report);
            progress(Progress::Eval(&point));
            curve.push(point);
        }
        if t > 0 && cfg.checkpoint_interval > 0 && t % cfg.checkpoint_interval == 0 {
            progress(Progress::Checkpoint { step: t, sac });
        }
        if t == cfg.total_steps {
            break;
        }

        let action = if t < warmup {
            (0..spec.action_schema.len())
                .map(|_| action_rng.random_range(-1.0..=1.0))
                .collect()
        } else {
            sac.policy.sample_with(state.state.values(), &mut action_rng)?.0
        };
        let action = ActionVector::new(action, spec.action_schema.clone())?;
        let result = env.step(&state, &action)?;
        let (reward, eval_flag) = match objective {
            Objective::Original => (result.task_reward, 0),
            Objective::Recovery { signal, lambda, .. } => {
                let flag = signal
                    .eval_flag(&env.reward_view_values(state.state.values()))
                    .map_err(|message| TrainError::Signal { step: t, program: "eval", message })?;
                let generated = if flag == 1 {
                    0.0
                } else {
                    signal
                        .reward(&env.reward_view_values(result.next.state.values()), action.values())
                        .map_err(|message| TrainError::Signal { step: t, program: "reward", message })?
                };
                (select_reward(flag, result.task_reward, generated, lambda), flag)
            }
        };
        buffer.push(Transition {
            state: state.state.clone(),
            action,
            reward,
            next_state: result.next.state.clone(),
            eval_flag,
            terminal: result.terminated,
        })?;
        state = if result.terminated || result.truncated {
            env.reset(mode, reset_rng.random())
        } else {
            result.next
        };

        if t + 1 >= warmup && buffer.len() >= cfg.batch_size {
            for _ in 0..cfg.grad_steps_per_env_step {
                let batch = buffer.sample_batch(cfg.batch_size, &mut replay_rng)?;
                let stats = match objective {
                    Objective::Original => sac.train_step(&batch, cfg.sac.tau, &mut update_rng, None),
                    Objective::Recovery { reference, .. } => {
                        let weights: Vec<f64> = batch.eval_flags.iter().map(|&f| f as f64).collect();
                        let kl = KlPenalty { reference, weights: &weights };
                        sac.train_step(&batch, cfg.sac.tau, &mut update_rng, Some(kl))
                    }
                }
                .map_err(|source| TrainError::Update { step: t, source })?;
                last_update = Some(stats);
            }
        }
    }
    Ok(TrainOutcome { curve, buffer, last_update })
}

/// Plain SAC on the original task from a freshly initialised agent.
pub fn train_original(
    env: &dyn Environment,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<(SacState, TrainOutcome), TrainError> {
    cfg.validate()?;
    let spec = env.spec();
    let mut rng = init_rng(cfg.seed);
    let mut sac = SacState::new(spec.state_schema.len(), spec.action_schema.len(), &cfg.sac, &mut rng);
    let outcome = run(env, &mut sac, Objective::Original, cfg, progress)?;
    Ok((sac, outcome))
}
