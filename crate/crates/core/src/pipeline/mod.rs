//! Recovery-reward generation: describe the out-of-distribution state,
//! reason about the recovery behavior, then generate reward and eval
//! programs, all through a chat-completion client.

mod client;
mod templates;

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{parse, to_source, CompiledProgram, ProgramKind, GRAMMAR_REFERENCE};
use crate::envs::{EnvSpec, Environment, SceneDocument};
use crate::types::FieldSchema;

pub use client::{
    Attachment, ChatClient, ChatMessage, ChatRequest, ClientError, Exchange, LiveClient, RecordedClient, Role,
    ScriptedClient, Transcript, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL,
};
pub use templates::{fill, PromptTemplates};

/// Every pipeline request is sent at this temperature.
pub const TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    OodDescription,
    BehaviorReasoning,
    CodeGeneration,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::OodDescription => "ood-description",
            Phase::BehaviorReasoning => "behavior-reasoning",
            Phase::CodeGeneration => "code-generation",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("template error: {0}")]
    Template(String),
    #[error("{phase}: empty input `{what}`")]
    EmptyInput { phase: Phase, what: &'static str },
    #[error("{phase}: {source}")]
    Client {
        phase: Phase,
        #[source]
        source: ClientError,
    },
    #[error("{phase}: model returned an empty response {attempts} times")]
    EmptyResponse { phase: Phase, attempts: usize },
    #[error("code-generation: no usable programs after {} attempt(s):\n{}", errors.len(), format_attempts(errors))]
    CodeRejected { errors: Vec<Vec<String>> },
    #[error("cannot write artifacts: {0}")]
    Io(String),
}

fn format_attempts(errors: &[Vec<String>]) -> String {
    let mut s = String::new();
    for (i, errs) in errors.iter().enumerate() {
        let _ = writeln!(s, "  attempt {}:", i + 1);
        for e in errs {
            let _ = writeln!(s, "    - {e}");
        }
    }
    s
}

impl PipelineError {
    pub fn phase(&self) -> Option<Phase> {
        match self {
            PipelineError::EmptyInput { phase, .. }
            | PipelineError::Client { phase, .. }
            | PipelineError::EmptyResponse { phase, .. } => Some(*phase),
            PipelineError::CodeRejected { .. } => Some(Phase::CodeGeneration),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub model: String,
    /// Attach the snapshot drawing as an image in the first phase.
    pub attach_image: bool,
    /// Attempts per phase (empty responses in the text phases, rejected
    /// programs in code generation).
    pub max_attempts: usize,
    /// Worked example placed in the code-generation prompt.
    pub fewshot: Option<String>,
    pub templates: PromptTemplates,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: "gpt-4o".to_string(),
            attach_image: false,
            max_attempts: 3,
            fewshot: None,
            templates: PromptTemplates::default(),
        }
    }
}

/// Client plus the running transcript of a pipeline run.
pub struct Session<'a> {
    client: &'a mut dyn ChatClient,
    cfg: &'a PipelineConfig,
    pub transcript: Transcript,
}

impl<'a> Session<'a> {
    pub fn new(client: &'a mut dyn ChatClient, cfg: &'a PipelineConfig) -> Self {
        Self {
            client,
            cfg,
            transcript: Transcript::default(),
        }
    }

    fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.cfg.model.clone(),
            temperature: TEMPERATURE,
            messages,
        }
    }

    fn call(&mut self, phase: Phase, attempt: usize, request: ChatRequest) -> Result<String, PipelineError> {
        let result = self.client.complete(&request);
        self.transcript.exchanges.push(Exchange {
            phase: phase.label().to_string(),
            attempt,
            digest: request.digest(),
            request,
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(ToString::to_string),
        });
        result.map_err(|source| PipelineError::Client { phase, source })
    }

    /// Sends the same request until the reply is non-blank.
    fn call_nonempty(&mut self, phase: Phase, messages: Vec<ChatMessage>) -> Result<String, PipelineError> {
        let attempts = self.cfg.max_attempts.max(1);
        for attempt in 1..=attempts {
            let reply = self.call(phase, attempt, self.request(messages.clone()))?;
            if !reply.trim().is_empty() {
                return Ok(reply.trim().to_string());
            }
        }
        Err(PipelineError::EmptyResponse { phase, attempts })
    }

    fn system(&self) -> ChatMessage {
        ChatMessage::new(Role::System, self.cfg.templates.system.clone())
    }

    /// Phase 1: text description of the snapshot.
    pub fn describe_ood(&mut self, snapshot: &SceneDocument) -> Result<String, PipelineError> {
        let phase = Phase::OodDescription;
        if snapshot.text.trim().is_empty() {
            return Err(PipelineError::EmptyInput { phase, what: "snapshot" });
        }
        let prompt = fill(&self.cfg.templates.ood_description, &[("snapshot", snapshot.text.trim_end())])?;
        let mut user = ChatMessage::new(Role::User, prompt);
        if self.cfg.attach_image {
            user.attachment = Some(Attachment::from_bytes("image/svg+xml", snapshot.svg.as_bytes()));
        }
        self.call_nonempty(phase, vec![self.system(), user])
    }

    /// Phase 2: valid state first, then the behavior that reaches it.
    pub fn reason_behavior(&mut self, d_ood: &str, d_task: &str) -> Result<String, PipelineError> {
        let phase = Phase::BehaviorReasoning;
        if d_ood.trim().is_empty() {
            return Err(PipelineError::EmptyInput { phase, what: "d_ood" });
        }
        if d_task.trim().is_empty() {
            return Err(PipelineError::EmptyInput { phase, what: "d_task" });
        }
        let prompt = fill(&self.cfg.templates.behavior_reasoning, &[("d_ood", d_ood), ("d_task", d_task)])?;
        self.call_nonempty(phase, vec![self.system(), ChatMessage::new(Role::User, prompt)])
    }

    /// Phase 3: reward and eval programs, re-prompting with the errors when
    /// a reply cannot be parsed or validated.
    pub fn generate_code(
        &mut self,
        d_recovery: &str,
        d_env: &str,
        view: &Arc<FieldSchema>,
        action: &Arc<FieldSchema>,
    ) -> Result<GeneratedCode, PipelineError> {
        let phase = Phase::CodeGeneration;
        if d_recovery.trim().is_empty() {
            return Err(PipelineError::EmptyInput { phase, what: "d_recovery" });
        }
        if d_env.trim().is_empty() {
            return Err(PipelineError::EmptyInput { phase, what: "d_env" });
        }
        let fewshot = match &self.cfg.fewshot {
            Some(f) if !f.trim().is_empty() => format!("\nExample:\n{}\n", f.trim_end()),
            _ => String::new(),
        };
        let prompt = fill(
            &self.cfg.templates.code_generation,
            &[
                ("d_recovery", d_recovery),
                ("d_env", d_env),
                ("grammar", GRAMMAR_REFERENCE),
                ("fewshot", &fewshot),
            ],
        )?;
        let mut messages = vec![self.system(), ChatMessage::new(Role::User, prompt)];
        let mut all_errors = Vec::new();
        for attempt in 1..=self.cfg.max_attempts.max(1) {
            let reply = self.call(phase, attempt, self.request(messages.clone()))?;
            match compile_reply(&reply, view, action) {
                Ok((reward, eval)) => {
                    return Ok(GeneratedCode {
                        reward,
                        eval,
                        raw_response: reply,
                    })
                }
                Err(errors) => {
                    let listed: String = errors.iter().map(|e| format!("- {e}\n")).collect();
                    let repair = fill(&self.cfg.templates.code_repair, &[("errors", listed.trim_end())])?;
                    messages.push(ChatMessage::new(Role::Assistant, reply));
                    messages.push(ChatMessage::new(Role::User, repair));
                    all_errors.push(errors);
                }
            }
        }
        Err(PipelineError::CodeRejected { errors: all_errors })
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedCode {
    pub reward: CompiledProgram,
    pub eval: CompiledProgram,
    pub raw_response: String,
}

/// Contents of the first fenced block tagged `tag`.
pub fn extract_block(text: &str, tag: &str) -> Option<String> {
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let t = line.trim();
        if t.strip_prefix("```").map(str::trim) == Some(tag) {
            let mut body = String::new();
            for l in lines.by_ref() {
                if l.trim() == "```" {
                    return Some(body);
                }
                body.push_str(l);
                body.push('\n');
            }
            return None;
        }
    }
    None
}

/// Extracts, parses and validates both programs; collects every problem.
pub fn compile_reply(
    reply: &str,
    view: &Arc<FieldSchema>,
    action: &Arc<FieldSchema>,
) -> Result<(CompiledProgram, CompiledProgram), Vec<String>> {
    let mut errors = Vec::new();
    let mut one = |kind: ProgramKind| -> Option<CompiledProgram> {
        let Some(body) = extract_block(reply, kind.as_str()) else {
            errors.push(format!("missing ```{kind} code block"));
            return None;
        };
        let program = match parse(&body, kind) {
            Ok(p) => p,
            Err(e) => {
                errors.push(format!("{kind} program: syntax error at {e}"));
                return None;
            }
        };
        match CompiledProgram::new(program, view.clone(), action.clone()) {
            Ok(c) => Some(c),
            Err(es) => {
                errors.extend(es.into_iter().map(|e| format!("{kind} program: {e}")));
                None
            }
        }
    };
    let reward = one(ProgramKind::Reward);
    let eval = one(ProgramKind::Eval);
    match (reward, eval) {
        (Some(r), Some(e)) => Ok((r, e)),
        _ => Err(errors),
    }
}

fn fmt_bounds(b: Option<(f64, f64)>) -> String {
    match b {
        Some((lo, hi)) => format!("; range [{lo}, {hi}]"),
        None => String::new(),
    }
}

/// Deterministic description of the state, action and reward-view fields.
pub fn build_env_description(spec: &EnvSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "Environment `{}`: time step {} s, episodes of at most {} steps.",
        spec.name, spec.dt, spec.max_episode_steps
    );
    let _ = writeln!(s, "\nState fields:");
    for f in spec.state_schema.fields() {
        let _ = writeln!(s, "- {}: {}{}", f.name, f.unit, fmt_bounds(f.bounds));
    }
    let _ = writeln!(s, "\nAction fields (reward programs only):");
    for f in spec.action_schema.fields() {
        let _ = writeln!(s, "- {}: {}{}", f.name, f.unit, fmt_bounds(f.bounds));
    }
    let _ = writeln!(s, "\nFeatures readable by programs (computed from the state):");
    for f in spec.reward_view_schema.fields() {
        match spec.derived_features.iter().find(|(n, _)| *n == f.name) {
            Some((_, formula)) => {
                let _ = writeln!(s, "- {} = {}", f.name, formula);
            }
            None => {
                let _ = writeln!(s, "- {}: {}{}", f.name, f.unit, fmt_bounds(f.bounds));
            }
        }
    }
    let _ = writeln!(s, "\nOriginal-task episodes terminate when: {}.", spec.termination);
    let ids: Vec<&str> = spec.reward_view_schema.names().chain(spec.action_schema.names()).collect();
    let _ = write!(s, "\nIdentifiers: {}", ids.join(", "));
    s
}

#[derive(Debug, Clone)]
pub struct PipelineArtifacts {
    pub d_ood: String,
    pub d_recovery: String,
    pub d_env: String,
    pub raw_code_response: String,
    pub reward: CompiledProgram,
    pub eval: CompiledProgram,
    pub transcript: Transcript,
}

pub const D_OOD_FILE: &str = "d_ood.txt";
pub const D_RECOVERY_FILE: &str = "d_recovery.txt";
pub const D_ENV_FILE: &str = "d_env.txt";
pub const REWARD_FILE: &str = "reward.dsl";
pub const EVAL_FILE: &str = "eval.dsl";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const ABORT_FILE: &str = "abort.txt";

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), PipelineError> {
    std::fs::write(dir.join(name), contents).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.join(name).display())))
}

/// Runs the three phases in order, writing each artifact to `out_dir` as
/// soon as it exists. On failure the transcript and an `abort.txt`
/// diagnostic are still written.
pub fn run_pipeline(
    client: &mut dyn ChatClient,
    env: &dyn Environment,
    snapshot: &SceneDocument,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<PipelineArtifacts, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::Io(format!("{}: {e}", out_dir.display())))?;
    let mut session = Session::new(client, cfg);
    let result = run_phases(&mut session, env, snapshot, out_dir);
    write(out_dir, TRANSCRIPT_FILE, &session.transcript.to_jsonl())?;
    match result {
        Ok(mut a) => {
            a.transcript = session.transcript;
            Ok(a)
        }
        Err(e) => {
            write(out_dir, ABORT_FILE, &format!("{e}\n"))?;
            Err(e)
        }
    }
}

fn run_phases(
    session: &mut Session<'_>,
    env: &dyn Environment,
    snapshot: &SceneDocument,
    out_dir: &Path,
) -> Result<PipelineArtifacts, PipelineError> {
    let spec = env.spec();
    let persist_transcript = |s: &Session<'_>| write(out_dir, TRANSCRIPT_FILE, &s.transcript.to_jsonl());

    let d_ood = session.describe_ood(snapshot)?;
    write(out_dir, D_OOD_FILE, &format!("{d_ood}\n"))?;
    persist_transcript(session)?;

    let d_recovery = session.reason_behavior(&d_ood, &spec.task_description)?;
    write(out_dir, D_RECOVERY_FILE, &format!("{d_recovery}\n"))?;
    persist_transcript(session)?;

    let d_env = build_env_description(spec);
    write(out_dir, D_ENV_FILE, &format!("{d_env}\n"))?;
    let code = session.generate_code(&d_recovery, &d_env, &spec.reward_view_schema, &spec.action_schema)?;
    write(out_dir, REWARD_FILE, &to_source(code.reward.program()))?;
    write(out_dir, EVAL_FILE, &to_source(code.eval.program()))?;
    Ok(PipelineArtifacts {
        d_ood,
        d_recovery,
        d_env,
        raw_code_response: code.raw_response,
        reward: code.reward,
        eval: code.eval,
        transcript: Transcript::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make;

    #[test]
    fn env_description_lists_fields() {
        let env = make("cartpole").unwrap();
        let d = build_env_description(env.spec());
        for id in ["x", "x_dot", "theta", "theta_dot", "cos_theta", "upright_err", "force"] {
            assert!(d.contains(&format!("- {id}")), "{id} missing:\n{d}");
        }
        assert_eq!(d, build_env_description(env.spec()));
        // x_dot has no bounds: no range text on its line.
        let line = d.lines().find(|l| l.starts_with("- x_dot:")).unwrap();
        assert!(!line.contains("range"), "{line}");
        assert!(!d.contains("None") && !d.contains("{"), "{d}");
    }

    #[test]
    fn block_extraction() {
        let text = "Here:\n```reward\nreturn 1;\n```\ntext\n```eval\nreturn x < 1;\n```\n";
        assert_eq!(extract_block(text, "reward").unwrap(), "return 1;\n");
        assert_eq!(extract_block(text, "eval").unwrap(), "return x < 1;\n");
        assert!(extract_block("```reward\nreturn 1;", "reward").is_none());
        assert!(extract_block(text, "other").is_none());
    }
}
