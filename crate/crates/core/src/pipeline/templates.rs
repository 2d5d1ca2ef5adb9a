use serde::{Deserialize, Serialize};

use super::PipelineError;

/// Prompt texts for the three phases. `{name}` marks a slot; `{{` and `}}`
/// are literal braces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub system: String,
    /// Slot: `snapshot`.
    pub ood_description: String,
    /// Slots: `d_ood`, `d_task`.
    pub behavior_reasoning: String,
    /// Slots: `d_recovery`, `d_env`, `grammar`, `fewshot`.
    pub code_generation: String,
    /// Slot: `errors`.
    pub code_repair: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            system: "You are an expert in robotics, reinforcement learning and reward design. \
                     Answer precisely and follow the requested output format."
                .to_string(),
            ood_description: "\
The following is a snapshot of a simulated agent, taken by a fixed third-person camera.

{snapshot}

Describe the agent's current state in a few sentences: its posture and orientation, which \
parts touch the ground, and anything unusual about its configuration. Describe only what is \
visible; do not propose actions."
                .to_string(),
            behavior_reasoning: "\
An agent was trained for the following task:
{d_task}

It is now in this state, which it never saw during training:
{d_ood}

Think step by step.
1. First, identify a valid state: a state from which the agent could perform its original task \
successfully. Describe it concretely.
2. Then describe the behavior that takes the agent from its current state to that valid state: \
the sequence of movements, what must change, and what to avoid along the way.
Finish with a short summary of the recovery behavior."
                .to_string(),
            code_generation: "\
We want to train the agent to perform this recovery behavior:
{d_recovery}

Environment description:
{d_env}

{grammar}
{fewshot}
Write two programs in this language.
- A reward program that returns a dense reward encouraging the recovery behavior. It is \
evaluated on the next state and the action taken, so it may read both state features and \
action fields.
- An eval program that returns 1 if the agent is in a valid state (it can perform the \
original task from there) and 0 otherwise. It may read state features only.

Reply with exactly two fenced code blocks, the first tagged `reward` and the second tagged \
`eval`, like this:
```reward
return ...;
```
```eval
return ...;
```"
                .to_string(),
            code_repair: "\
Your programs could not be used:
{errors}
Fix the problems and reply again with both fenced code blocks, `reward` and `eval`."
                .to_string(),
        }
    }
}

/// Substitutes every `{slot}`. Fails on a slot with no value, and on a
/// value that was supplied but never used.
pub fn fill(template: &str, values: &[(&str, &str)]) -> Result<String, PipelineError> {
    let mut out = String::with_capacity(template.len());
    let mut used = vec![false; values.len()];
    let mut rest = template;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if tail.starts_with("{{") {
            out.push('{');
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            out.push('}');
            rest = &tail[2..];
        } else if tail.starts_with('}') {
            return Err(PipelineError::Template("unmatched `}` in template".to_string()));
        } else {
            let end = tail
                .find('}')
                .ok_or_else(|| PipelineError::Template("unclosed `{` in template".to_string()))?;
            let name = &tail[1..end];
            let k = values
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| PipelineError::Template(format!("slot `{{{name}}}` has no value")))?;
            used[k] = true;
            out.push_str(values[k].1);
            rest = &tail[end + 1..];
        }
    }
    out.push_str(rest);
    if let Some(k) = used.iter().position(|u| !u) {
        return Err(PipelineError::Template(format!(
            "template has no slot `{{{}}}`",
            values[k].0
        )));
    }
    Ok(out)
}
