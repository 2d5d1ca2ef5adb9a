//! Recovery retraining from the out-of-distribution start: reward
//! switching on the generated eval program, a consolidation penalty toward
//! the original policy on valid states, periodic evaluation and run-directory
//! export.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsl::{parse_file, to_source, CompiledProgram, ProgramKind};
use crate::envs::Environment;
use crate::net::GaussianPolicy;
use crate::pipeline::{EVAL_FILE, REWARD_FILE};
use crate::sac::SacState;
use crate::train::{init_rng, run, CurvePoint, Objective, Progress, RecoverySignal, TrainConfig, TrainError, TrainOutcome};
use crate::types::FieldSchema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrainConfig {
    /// Scale of the generated reward; the environment default when unset.
    /// Zero gives the zero-reward baseline.
    pub lambda: Option<f64>,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            train: TrainConfig {
                warmup_steps: 0,
                ..TrainConfig::default()
            },
        }
    }
}

impl RetrainConfig {
    pub fn lambda_for(&self, env: &dyn Environment) -> f64 {
        self.lambda.unwrap_or(env.spec().default_lambda)
    }
}

/// A validated reward/eval pair bound to one environment's schemas.
#[derive(Debug, Clone)]
pub struct RecoveryPrograms {
    pub reward: CompiledProgram,
    pub eval: CompiledProgram,
}

impl RecoveryPrograms {
    pub fn new(reward: CompiledProgram, eval: CompiledProgram, env: &dyn Environment) -> Result<Self, TrainError> {
        let spec = env.spec();
        if reward.kind() != ProgramKind::Reward || eval.kind() != ProgramKind::Eval {
            return Err(TrainError::Config("expected one reward and one eval program".to_string()));
        }
        for p in [&reward, &eval] {
            if p.view_schema() != &spec.reward_view_schema || p.action_schema() != &spec.action_schema {
                return Err(TrainError::Config(format!(
                    "{} program was compiled for a different environment",
                    p.kind()
                )));
            }
        }
        Ok(Self { reward, eval })
    }

    /// Parses, validates and compiles program sources.
    pub fn from_sources(reward: &str, eval: &str, env: &dyn Environment) -> Result<Self, TrainError> {
        let spec = env.spec();
        let compile = |src: &str, want: ProgramKind| -> Result<CompiledProgram, TrainError> {
            let program = parse_file(src).map_err(|e| TrainError::Config(format!("{want} program: {e}")))?;
            if program.kind != want {
                return Err(TrainError::Config(format!("expected a {want} program, found {}", program.kind)));
            }
            CompiledProgram::new(program, spec.reward_view_schema.clone(), spec.action_schema.clone()).map_err(|es| {
                let msgs: Vec<String> = es.iter().map(ToString::to_string).collect();
                TrainError::Config(format!("{want} program: {}", msgs.join("; ")))
            })
        };
        Self::new(compile(reward, ProgramKind::Reward)?, compile(eval, ProgramKind::Eval)?, env)
    }

    /// Reads `reward.dsl` and `eval.dsl` from a pipeline run directory.
    pub fn load(dir: &Path, env: &dyn Environment) -> Result<Self, TrainError> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| TrainError::Config(format!("{}: {e}", dir.join(name).display())))
        };
        Self::from_sources(&read(REWARD_FILE)?, &read(EVAL_FILE)?, env)
    }

    pub fn reward_source(&self) -> String {
        to_source(self.reward.program())
    }

    pub fn eval_source(&self) -> String {
        to_source(self.eval.program())
    }

    pub fn view_schema(&self) -> &Arc<FieldSchema> {
        self.reward.view_schema()
    }
}

impl RecoverySignal for RecoveryPrograms {
    fn eval_flag(&self, view: &[f64]) -> Result<u8, String> {
        self.eval.eval_flag(view).map_err(|e| e.to_string())
    }

    fn reward(&self, view_next: &[f64], action: &[f64]) -> Result<f64, String> {
        self.reward.eval_reward(view_next, action).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub sac: SacState,
    pub lambda: f64,
    pub outcome: TrainOutcome,
}

/// Warm-starts the policy from `original`; critics, temperature, optimiser
/// moments and the replay buffer start fresh.
pub fn retrain_loop(
    env: &dyn Environment,
    original: &GaussianPolicy,
    programs: &RecoveryPrograms,
    cfg: &RetrainConfig,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<RetrainOutcome, TrainError> {
    let spec = env.spec();
    if original.state_dim() != spec.state_schema.len() || original.action_dim() != spec.action_schema.len() {
        return Err(TrainError::Config(format!(
            "policy has {}/{} state/action dims, environment `{}` needs {}/{}",
            original.state_dim(),
            original.action_dim(),
            spec.name,
            spec.state_schema.len(),
            spec.action_schema.len()
        )));
    }
    let lambda = cfg.lambda_for(env);
    let mut rng = init_rng(cfg.train.seed);
    let mut sac = SacState::with_policy(original.clone(), &cfg.train.sac, &mut rng);
    let objective = Objective::Recovery {
        signal: programs,
        reference: original,
        lambda,
    };
    let outcome = run(env, &mut sac, objective, &cfg.train, progress)?;
    Ok(RetrainOutcome { sac, lambda, outcome })
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    step: usize,
    mean_return: f64,
    std_return: f64,
    recovery_fraction: f64,
}

/// `step,mean_return,std_return,recovery_fraction`, one row per point.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in curve {
        w.serialize(CurveRow {
            step: p.step,
            mean_return: p.mean_return,
            std_return: p.std_return,
            recovery_fraction: p.recovery_fraction,
        })
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

/// Reads the four summary columns back; per-episode returns are not in
/// the CSV and come back empty.
pub fn parse_curve_csv(text: &str) -> Result<Vec<CurvePoint>, String> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize::<CurveRow>()
        .map(|r| {
            r.map(|r| CurvePoint {
                step: r.step,
                mean_return: r.mean_return,
                std_return: r.std_return,
                recovery_fraction: r.recovery_fraction,
                returns: Vec::new(),
            })
            .map_err(|e| e.to_string())
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Structured record of one command's inputs and outputs. Contains no
/// timestamps, so identical inputs produce identical manifests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub env: String,
    pub seed: u64,
    pub version: String,
    pub config: serde_json::Value,
    /// Named input digests (programs, source checkpoints, transcripts).
    pub inputs: BTreeMap<String, String>,
    /// Output file name to SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub summary: BTreeMap<String, f64>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn new(command: &str, env: &str, seed: u64, config: &impl Serialize) -> Self {
        Self {
            command: command.to_string(),
            env: env.to_string(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).expect("config serialises"),
            ..Self::default()
        }
    }

    /// Writes `contents` to `dir/name` and records its digest.
    pub fn write_artifact(&mut self, dir: &Path, name: &str, contents: &[u8]) -> std::io::Result<()> {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)?;
        self.artifacts.insert(name.to_string(), sha256_hex(contents));
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")
    }

    pub fn load(dir: &Path) -> Result<Self, String> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
