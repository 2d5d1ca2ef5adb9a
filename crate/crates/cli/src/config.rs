use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use oodrecover_core::pipeline::TEMPERATURE;
use oodrecover_core::retrain::RetrainConfig;
use oodrecover_core::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Live,
    Recorded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientSettings {
    pub backend: Backend,
    /// Chat-completions base URL for the live backend; the
    /// `OODRECOVER_LLM_BASE_URL` variable wins when set.
    pub endpoint: Option<String>,
    pub model: String,
    /// Transcript replayed by the recorded backend.
    pub transcript: Option<PathBuf>,
    /// Fixed; any other value is rejected.
    pub temperature: f64,
    pub attach_image: bool,
    /// File holding a worked example for the code-generation prompt.
    pub fewshot: Option<PathBuf>,
}

impl Default for ClientSettings {
    fn default() -> Self {
        Self {
            backend: Backend::Recorded,
            endpoint: None,
            model: "gpt-4o".to_string(),
            transcript: None,
            temperature: TEMPERATURE,
            attach_image: false,
            fewshot: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub seed: u64,
    pub original: TrainConfig,
    pub retrain: RetrainConfig,
    pub client: ClientSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "cartpole".to_string(),
            seed: 0,
            original: TrainConfig::default(),
            retrain: RetrainConfig::default(),
            client: ClientSettings::default(),
        }
    }
}

/// Flags shared by every command. Each one, when given, wins over the
/// config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML config file; values in it win over built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub env: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Environment steps for the command's training phase.
    #[arg(long, global = true)]
    pub total_steps: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub buffer_size: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub policy_lr: Option<f64>,
    #[arg(long, global = true)]
    pub q_lr: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub eval_interval: Option<usize>,
    #[arg(long, global = true)]
    pub eval_episodes: Option<usize>,
    #[arg(long, global = true)]
    pub warmup_steps: Option<usize>,
    #[arg(long, global = true)]
    pub checkpoint_interval: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<Backend>,
    #[arg(long, global = true)]
    pub transcript: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub attach_image: bool,
    #[arg(long, global = true)]
    pub fewshot: Option<PathBuf>,
}

fn apply_train(t: &mut TrainConfig, o: &Overrides) {
    if let Some(v) = o.total_steps {
        t.total_steps = v;
    }
    if let Some(v) = o.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = o.buffer_size {
        t.buffer_capacity = v;
    }
    if let Some(v) = &o.hidden {
        t.sac.hidden = v.clone();
    }
    if let Some(v) = o.gamma {
        t.sac.gamma = v;
    }
    if let Some(v) = o.policy_lr {
        t.sac.policy_lr = v;
    }
    if let Some(v) = o.q_lr {
        t.sac.q_lr = v;
    }
    if let Some(v) = o.eval_interval {
        t.eval_interval = v;
    }
    if let Some(v) = o.eval_episodes {
        t.eval_episodes = v;
    }
    if let Some(v) = o.warmup_steps {
        t.warmup_steps = v;
    }
    if let Some(v) = o.checkpoint_interval {
        t.checkpoint_interval = v;
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut cfg = match &o.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        if let Some(v) = &o.env {
            cfg.env = v.clone();
        }
        if let Some(v) = o.seed {
            cfg.seed = v;
        }
        apply_train(&mut cfg.original, o);
        apply_train(&mut cfg.retrain.train, o);
        if let Some(v) = o.lambda {
            cfg.retrain.lambda = Some(v);
        }
        cfg.original.seed = cfg.seed;
        cfg.retrain.train.seed = cfg.seed;
        let c = &mut cfg.client;
        if let Some(v) = o.backend {
            c.backend = v;
        }
        if let Some(v) = &o.transcript {
            c.transcript = Some(v.clone());
        }
        if let Some(v) = &o.model {
            c.model = v.clone();
        }
        if o.attach_image {
            c.attach_image = true;
        }
        if let Some(v) = &o.fewshot {
            c.fewshot = Some(v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.original.validate().context("[original]")?;
        self.retrain.train.validate().context("[retrain]")?;
        if let Some(l) = self.retrain.lambda {
            if !(l.is_finite() && l >= 0.0) {
                bail!("lambda must be a finite non-negative number, got {l}");
            }
        }
        if self.client.temperature != TEMPERATURE {
            bail!("client temperature is fixed at {TEMPERATURE}, got {}", self.client.temperature);
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}
