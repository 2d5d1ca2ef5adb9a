use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;
use serde::{Deserialize, Serialize};

use oodrecover_core::envs::{make, Environment, ResetMode, SceneDocument, ENV_NAMES};
use oodrecover_core::net::{Checkpoint, GaussianPolicy};
use oodrecover_core::pipeline::{
    run_pipeline, ChatClient, LiveClient, PipelineConfig, PipelineError, RecordedClient, ENV_BASE_URL, EVAL_FILE,
    REWARD_FILE,
};
use oodrecover_core::retrain::{curve_csv, retrain_loop, sha256_hex, RecoveryPrograms, RunManifest};
use oodrecover_core::sac::SacState;
use oodrecover_core::train::{eval_seed, evaluate_policy, train_original as train_sac, CurvePoint, EvalReport, Progress};

use crate::config::{Backend, Overrides, RunConfig};

pub enum Failure {
    /// Bad flags, config or inputs: exit 1.
    Usage(anyhow::Error),
    /// Training, evaluation or I/O failure: exit 2.
    Runtime(anyhow::Error),
    /// The generation pipeline gave up: exit 3.
    PipelineAbort(anyhow::Error),
}

type CmdResult = Result<(), Failure>;

trait OrFail<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

pub const AGENT_FILE: &str = "agent.ckpt";
pub const CURVE_CSV: &str = "curve.csv";
pub const CURVE_JSON: &str = "curve.json";
pub const BEST_MARKER: &str = "best.txt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const STATE_FILE: &str = "state.json";

fn environment(cfg: &RunConfig) -> Result<Box<dyn Environment>, Failure> {
    make(&cfg.env).usage()
}

fn agent_checkpoint(sac: &SacState, env: &str, step: usize) -> Checkpoint {
    let mut ck = sac.to_checkpoint();
    ck.set_meta("env", env);
    ck.set_meta("step", step);
    ck
}

/// Policy stored in `path`, checked against the environment's dimensions.
fn load_policy(path: &Path, env: &dyn Environment) -> Result<GaussianPolicy, Failure> {
    let ck = Checkpoint::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
        .usage()?;
    let spec = env.spec();
    if let Some(name) = ck.meta("env") {
        if name != spec.name {
            return Err(Failure::Usage(anyhow!(
                "checkpoint {} was trained on `{name}`, not `{}`",
                path.display(),
                spec.name
            )));
        }
    }
    let policy = GaussianPolicy::from_net(ck.get_mlp("policy").usage()?).usage()?;
    if policy.state_dim() != spec.state_schema.len() || policy.action_dim() != spec.action_schema.len() {
        return Err(Failure::Usage(anyhow!(
            "checkpoint policy takes {} state and produces {} action dims; `{}` has {} and {}",
            policy.state_dim(),
            policy.action_dim(),
            spec.name,
            spec.state_schema.len(),
            spec.action_schema.len()
        )));
    }
    Ok(policy)
}

fn report_point(p: &CurvePoint) {
    eprintln!(
        "step {:>8}  return {:>10.3} ± {:<9.3} recovery {:.2}",
        p.step, p.mean_return, p.std_return, p.recovery_fraction
    );
}

/// Writes curve files, checkpoints and the manifest of one training run.
fn write_run(
    dir: &Path,
    manifest: &mut RunManifest,
    curve: &[CurvePoint],
    sac: &SacState,
    env: &str,
    step: usize,
) -> Result<(), Failure> {
    manifest.write_artifact(dir, CURVE_CSV, curve_csv(curve).as_bytes()).runtime()?;
    let json = serde_json::to_string_pretty(curve).expect("curve serialises") + "\n";
    manifest.write_artifact(dir, CURVE_JSON, json.as_bytes()).runtime()?;
    let ck = agent_checkpoint(sac, env, step).to_text();
    manifest.write_artifact(dir, AGENT_FILE, ck.as_bytes()).runtime()?;
    manifest.save(dir).runtime()
}

/// Progress callback that prints evaluations and writes periodic
/// checkpoints under `dir/checkpoints`.
fn progress_writer<'a>(
    dir: &'a Path,
    env: &'a str,
    manifest: &'a mut RunManifest,
    io_error: &'a mut Option<std::io::Error>,
) -> impl FnMut(Progress<'_>) + 'a {
    move |p| match p {
        Progress::Eval(point) => report_point(point),
        Progress::Checkpoint { step, sac } => {
            if io_error.is_some() {
                return;
            }
            let name = format!("checkpoints/step_{step:08}.ckpt");
            let text = agent_checkpoint(sac, env, step).to_text();
            if let Err(e) = manifest.write_artifact(dir, &name, text.as_bytes()) {
                *io_error = Some(e);
            }
        }
    }
}

pub fn show_defaults() -> CmdResult {
    print!("{}", RunConfig::default().to_toml());
    println!("\n# retrain.lambda defaults per environment:");
    for name in ENV_NAMES {
        let env = make(name).expect("listed environment exists");
        println!("#   {name} = {}", env.spec().default_lambda);
    }
    Ok(())
}

pub fn show(o: &Overrides) -> CmdResult {
    print!("{}", RunConfig::resolve(o).usage()?.to_toml());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainOriginalArgs {
    /// Number of independent runs, seeded seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value = "runs/original")]
    pub out: PathBuf,
}

pub fn train_original(o: &Overrides, a: &TrainOriginalArgs) -> CmdResult {
    let cfg = RunConfig::resolve(o).usage()?;
    let env = environment(&cfg)?;
    if a.seeds == 0 {
        return Err(Failure::Usage(anyhow!("--seeds must be at least 1")));
    }
    let mut best: Option<(f64, String)> = None;
    for k in 0..a.seeds {
        let seed = cfg.seed + k;
        let name = format!("seed_{seed}");
        let dir = a.out.join(&name);
        std::fs::create_dir_all(&dir).runtime()?;
        let mut train = cfg.original.clone();
        train.seed = seed;
        eprintln!("training `{}` with seed {seed}", cfg.env);
        let mut manifest = RunManifest::new("train-original", &cfg.env, seed, &train);
        let mut io_error = None;
        let (sac, outcome) = {
            let mut progress = progress_writer(&dir, &cfg.env, &mut manifest, &mut io_error);
            train_sac(env.as_ref(), &train, &mut progress).runtime()?
        };
        if let Some(e) = io_error {
            return Err(Failure::Runtime(e.into()));
        }
        let last = outcome.curve.last().expect("curve has a step-0 point");
        manifest.summary.insert("final_mean_return".into(), last.mean_return);
        write_run(&dir, &mut manifest, &outcome.curve, &sac, &cfg.env, train.total_steps)?;
        if best.as_ref().is_none_or(|(r, _)| last.mean_return > *r) {
            best = Some((last.mean_return, name));
        }
    }
    let (ret, name) = best.expect("at least one seed");
    std::fs::write(a.out.join(BEST_MARKER), format!("{name}\n")).runtime()?;
    std::fs::copy(a.out.join(&name).join(AGENT_FILE), a.out.join(BEST_CHECKPOINT)).runtime()?;
    println!("best run: {name} (final mean return {ret:.3}); checkpoint {}", a.out.join(BEST_CHECKPOINT).display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StateRecord {
    pub env: String,
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct CaptureArgs {
    /// Optional policy checkpoint; checked against the environment.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "runs/snapshot")]
    pub out: PathBuf,
}

pub fn capture_ood(o: &Overrides, a: &CaptureArgs) -> CmdResult {
    let cfg = RunConfig::resolve(o).usage()?;
    let env = environment(&cfg)?;
    if let Some(p) = &a.checkpoint {
        load_policy(p, env.as_ref())?;
    }
    let s = env.reset(ResetMode::Ood, cfg.seed);
    env.render_snapshot(&s.state).save(&a.out).runtime()?;
    let record = StateRecord {
        env: cfg.env.clone(),
        names: env.spec().state_schema.names().map(String::from).collect(),
        values: s.state.values().to_vec(),
    };
    let json = serde_json::to_string_pretty(&record).expect("state serialises") + "\n";
    std::fs::write(a.out.join(STATE_FILE), json).runtime()?;
    println!("snapshot written to {}", a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Directory written by `capture-ood`.
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long, default_value = "runs/programs")]
    pub out: PathBuf,
}

pub fn generate(o: &Overrides, a: &GenerateArgs) -> CmdResult {
    let cfg = RunConfig::resolve(o).usage()?;
    let env = environment(&cfg)?;
    let snapshot = SceneDocument::load(&a.snapshot)
        .with_context(|| format!("reading snapshot from {}", a.snapshot.display()))
        .usage()?;
    let mut pcfg = PipelineConfig {
        model: cfg.client.model.clone(),
        attach_image: cfg.client.attach_image,
        ..PipelineConfig::default()
    };
    if let Some(p) = &cfg.client.fewshot {
        pcfg.fewshot = Some(
            std::fs::read_to_string(p)
                .with_context(|| format!("reading few-shot example {}", p.display()))
                .usage()?,
        );
    }
    let mut client: Box<dyn ChatClient> = match cfg.client.backend {
        Backend::Recorded => {
            let path = cfg
                .client
                .transcript
                .as_ref()
                .ok_or_else(|| Failure::Usage(anyhow!("the recorded backend needs --transcript")))?;
            Box::new(RecordedClient::load(path).runtime()?)
        }
        Backend::Live => {
            let (mut live, model) = LiveClient::from_env();
            if std::env::var_os(ENV_BASE_URL).is_none() {
                if let Some(url) = &cfg.client.endpoint {
                    live.base_url = url.clone();
                }
            }
            if let Some(m) = model {
                pcfg.model = m;
            }
            Box::new(live)
        }
    };
    match run_pipeline(client.as_mut(), env.as_ref(), &snapshot, &pcfg, &a.out) {
        Ok(_) => {
            for f in [REWARD_FILE, EVAL_FILE] {
                let bytes = std::fs::read(a.out.join(f)).runtime()?;
                println!("{f} sha256 {}", sha256_hex(&bytes));
            }
            Ok(())
        }
        Err(e @ PipelineError::Io(_)) => Err(Failure::Runtime(e.into())),
        Err(e) => Err(Failure::PipelineAbort(
            anyhow::Error::new(e).context(format!("pipeline aborted; transcript in {}", a.out.display())),
        )),
    }
}

#[derive(Debug, Args)]
pub struct RetrainArgs {
    /// Original policy checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory holding `reward.dsl` and `eval.dsl`.
    #[arg(long)]
    pub programs: PathBuf,
    #[arg(long, default_value = "runs/retrain")]
    pub out: PathBuf,
}

pub fn retrain(o: &Overrides, a: &RetrainArgs) -> CmdResult {
    let cfg = RunConfig::resolve(o).usage()?;
    let env = environment(&cfg)?;
    let original = load_policy(&a.checkpoint, env.as_ref())?;
    let programs = RecoveryPrograms::load(&a.programs, env.as_ref()).usage()?;
    std::fs::create_dir_all(&a.out).runtime()?;

    let mut manifest = RunManifest::new("retrain", &cfg.env, cfg.seed, &cfg.retrain);
    let lambda = cfg.retrain.lambda_for(env.as_ref());
    manifest.summary.insert("lambda".into(), lambda);
    let ck_bytes = std::fs::read(&a.checkpoint).runtime()?;
    manifest.inputs.insert("original_checkpoint".into(), sha256_hex(&ck_bytes));
    manifest.inputs.insert("reward_program".into(), sha256_hex(programs.reward_source().as_bytes()));
    manifest.inputs.insert("eval_program".into(), sha256_hex(programs.eval_source().as_bytes()));
    manifest.write_artifact(&a.out, REWARD_FILE, programs.reward_source().as_bytes()).runtime()?;
    manifest.write_artifact(&a.out, EVAL_FILE, programs.eval_source().as_bytes()).runtime()?;

    eprintln!("retraining `{}` with lambda {lambda}", cfg.env);
    let mut io_error = None;
    let out = {
        let mut progress = progress_writer(&a.out, &cfg.env, &mut manifest, &mut io_error);
        retrain_loop(env.as_ref(), &original, &programs, &cfg.retrain, &mut progress).runtime()?
    };
    if let Some(e) = io_error {
        return Err(Failure::Runtime(e.into()));
    }
    let last = out.outcome.curve.last().expect("curve has a step-0 point");
    manifest.summary.insert("final_mean_return".into(), last.mean_return);
    manifest.summary.insert("final_recovery_fraction".into(), last.recovery_fraction);
    write_run(&a.out, &mut manifest, &out.outcome.curve, &out.sac, &cfg.env, cfg.retrain.train.total_steps)?;
    println!(
        "final point: return {:.3} ± {:.3}, recovery {:.2}; outputs in {}",
        last.mean_return,
        last.std_return,
        last.recovery_fraction,
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "ood")]
    pub mode: ResetMode,
    #[arg(short = 'n', long = "episodes", default_value_t = 100)]
    pub episodes: usize,
    /// Program directory; its eval program gates the reported return and
    /// decides recovery. Without it the environment's valid region does.
    #[arg(long)]
    pub programs: Option<PathBuf>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub env: String,
    pub mode: ResetMode,
    pub seed: u64,
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_task_return: f64,
    pub std_task_return: f64,
    pub recovery_fraction: f64,
    pub success_rate: f64,
    pub report: EvalReport,
}

pub fn evaluate(o: &Overrides, a: &EvaluateArgs) -> CmdResult {
    let cfg = RunConfig::resolve(o).usage()?;
    let env = environment(&cfg)?;
    let policy = load_policy(&a.checkpoint, env.as_ref())?;
    let programs = match &a.programs {
        Some(dir) => Some(RecoveryPrograms::load(dir, env.as_ref()).usage()?),
        None => None,
    };
    let signal = programs.as_ref().map(|p| p as &dyn oodrecover_core::train::RecoverySignal);
    let report = evaluate_policy(env.as_ref(), &policy, a.episodes, a.mode, eval_seed(cfg.seed), signal).runtime()?;
    let (mean_return, std_return) = report.mean_std_return();
    let (mean_task_return, std_task_return) = report.mean_std_task_return();
    let summary = EvaluationSummary {
        env: cfg.env.clone(),
        mode: a.mode,
        seed: cfg.seed,
        episodes: a.episodes,
        mean_return,
        std_return,
        mean_task_return,
        std_task_return,
        recovery_fraction: report.recovery_fraction(),
        success_rate: report.success_rate(),
        report,
    };
    eprintln!(
        "{} episodes: return {:.3} ± {:.3} (task {:.3} ± {:.3}), recovery {:.2}, success {:.2}",
        a.episodes,
        mean_return,
        std_return,
        mean_task_return,
        std_task_return,
        summary.recovery_fraction,
        summary.success_rate
    );
    let json = serde_json::to_string_pretty(&summary).expect("report serialises") + "\n";
    match &a.out {
        Some(p) => std::fs::write(p, json).runtime(),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Run directory written by `train-original` or `retrain`.
    #[arg(long)]
    pub run: PathBuf,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn export_curve(a: &ExportArgs) -> CmdResult {
    let path = a.run.join(CURVE_JSON);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))
        .usage()?;
    let curve: Vec<CurvePoint> = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .runtime()?;
    let csv = curve_csv(&curve);
    match &a.out {
        Some(p) => std::fs::write(p, csv).runtime(),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
