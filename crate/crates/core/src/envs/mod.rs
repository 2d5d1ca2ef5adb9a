//! Continuous-control environments with an explicit valid region, an
//! out-of-distribution start configuration, snapshot rendering, and an
//! augmented feature view for generated reward programs.

mod cartpole;
mod flipbot;

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{ActionVector, CoreError, FieldSchema, StateVector};

pub use cartpole::{CartPole, CartPoleParams};
pub use flipbot::{FlipBot, FlipBotParams};

pub const ENV_NAMES: [&str; 2] = ["cartpole", "flipbot"];

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown environment `{name}`; available: {}", ENV_NAMES.join(", "))]
    Unknown { name: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("episode already finished after {0} steps")]
    EpisodeOver(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    /// Near the valid configuration; termination enforced.
    Original,
    /// At the documented out-of-distribution configuration; episodes only
    /// truncate.
    Ood,
}

impl std::str::FromStr for ResetMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(ResetMode::Original),
            "ood" => Ok(ResetMode::Ood),
            other => Err(format!("unknown mode `{other}` (expected original|ood)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub name: String,
    pub state_schema: Arc<FieldSchema>,
    pub action_schema: Arc<FieldSchema>,
    /// Raw state fields followed by derived features; every entry is a pure
    /// function of the state.
    pub reward_view_schema: Arc<FieldSchema>,
    /// One formula per derived reward-view feature, `(name, formula)`.
    pub derived_features: Vec<(String, String)>,
    pub dt: f64,
    pub max_episode_steps: usize,
    pub termination: String,
    /// Original task in words; the behaviour-reasoning phase receives it.
    pub task_description: String,
    pub default_lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub state: StateVector,
    pub step_count: usize,
    pub enforce_termination: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next: EnvState,
    pub task_reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

/// Text description plus a standalone SVG drawing of one state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneDocument {
    pub text: String,
    pub svg: String,
}

pub const SNAPSHOT_TEXT_FILE: &str = "snapshot.txt";
pub const SNAPSHOT_SVG_FILE: &str = "snapshot.svg";

impl SceneDocument {
    pub fn save(&self, dir: &std::path::Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(SNAPSHOT_TEXT_FILE), &self.text)?;
        std::fs::write(dir.join(SNAPSHOT_SVG_FILE), &self.svg)
    }

    /// Reads `snapshot.txt` and, when present, `snapshot.svg`.
    pub fn load(dir: &std::path::Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(dir.join(SNAPSHOT_TEXT_FILE))?;
        let svg = match std::fs::read_to_string(dir.join(SNAPSHOT_SVG_FILE)) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e),
        };
        Ok(Self { text, svg })
    }
}

pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    fn reset(&self, mode: ResetMode, seed: u64) -> EnvState;

    /// Pure one-step transition from raw state values; no bookkeeping.
    fn dynamics(&self, state: &[f64], action: &[f64]) -> Vec<f64>;

    fn task_reward(&self, next_state: &[f64], action: &[f64]) -> f64;

    /// True where an original-task episode ends.
    fn termination_predicate(&self, state: &[f64]) -> bool;

    /// Ground-truth valid-region indicator; metrics and tests only.
    fn truth_valid(&self, state: &StateVector) -> bool;

    /// Values in `reward_view_schema` order.
    fn reward_view_values(&self, state: &[f64]) -> Vec<f64>;

    fn render_snapshot(&self, state: &StateVector) -> SceneDocument;

    fn step(&self, s: &EnvState, a: &ActionVector) -> Result<StepResult, EnvError> {
        let spec = self.spec();
        if s.step_count >= spec.max_episode_steps {
            return Err(EnvError::EpisodeOver(s.step_count));
        }
        if a.values().len() != spec.action_schema.len() {
            return Err(CoreError::LengthMismatch {
                schema: spec.action_schema.name().to_string(),
                expected: spec.action_schema.len(),
                actual: a.values().len(),
            }
            .into());
        }
        let next = self.dynamics(s.state.values(), a.values());
        let task_reward = self.task_reward(&next, a.values());
        let terminated = s.enforce_termination && self.termination_predicate(&next);
        let step_count = s.step_count + 1;
        Ok(StepResult {
            next: EnvState {
                state: StateVector::new(next, spec.state_schema.clone())?,
                step_count,
                enforce_termination: s.enforce_termination,
            },
            task_reward,
            terminated,
            truncated: step_count >= spec.max_episode_steps,
        })
    }

    fn reward_view(&self, state: &StateVector) -> FeatureMap {
        FeatureMap {
            schema: self.spec().reward_view_schema.clone(),
            values: self.reward_view_values(state.values()),
        }
    }
}

/// Named features handed to generated programs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub schema: Arc<FieldSchema>,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.schema.index_of(name).map(|i| self.values[i])
    }
}

pub fn make(name: &str) -> Result<Box<dyn Environment>, EnvError> {
    match name {
        "cartpole" => Ok(Box::new(CartPole::default())),
        "flipbot" => Ok(Box::new(FlipBot::default())),
        other => Err(EnvError::Unknown {
            name: other.to_string(),
        }),
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

pub(crate) fn schema(name: &str, fields: &[(&str, &str, Option<(f64, f64)>)]) -> Arc<FieldSchema> {
    Arc::new(
        FieldSchema::new(
            name,
            fields
                .iter()
                .map(|(n, u, b)| (n.to_string(), u.to_string(), *b)),
        )
        .expect("static schema is valid"),
    )
}

pub(crate) fn uniform_noise(seed: u64, n: usize, scale: f64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(2.0 * PI + 0.1) - 0.1).abs() < 1e-12);
        assert!((wrap_angle(PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn unknown_environment_lists_names() {
        let err = make("walker").err().unwrap().to_string();
        assert!(err.contains("cartpole") && err.contains("flipbot"), "{err}");
    }
}
