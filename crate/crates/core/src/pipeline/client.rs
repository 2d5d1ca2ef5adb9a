use std::collections::{HashMap, VecDeque};
use std::path::Path;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub media_type: String,
    /// Base64 of the raw bytes.
    pub data: String,
}

impl Attachment {
    pub fn from_bytes(media_type: &str, bytes: &[u8]) -> Self {
        Self {
            media_type: media_type.to_string(),
            data: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment: Option<Attachment>,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            attachment: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    /// Hex SHA-256 of the request with the model name left out, so that a
    /// transcript replays against any configured model.
    pub fn digest(&self) -> String {
        let canonical = json!({
            "messages": self.messages,
            "temperature": self.temperature,
        });
        let bytes = serde_json::to_vec(&canonical).expect("request serialises");
        hex(&Sha256::digest(bytes))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("unrecorded prompt (request digest {digest}); no transcript entry matches this request")]
    Unrecorded { digest: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("client configuration: {0}")]
    Config(String),
}

pub trait ChatClient {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, ClientError>;
}

/// One request/response pair, as written to `transcript.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub phase: String,
    pub attempt: usize,
    pub digest: String,
    pub request: ChatRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub exchanges: Vec<Exchange>,
}

impl Transcript {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.exchanges {
            s.push_str(&serde_json::to_string(e).expect("exchange serialises"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut exchanges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            exchanges.push(serde_json::from_str(line).map_err(|e| format!("transcript line {}: {e}", i + 1))?);
        }
        Ok(Self { exchanges })
    }
}

/// Replays responses from a transcript, keyed by request digest. Repeated
/// identical requests are answered in recorded order.
#[derive(Debug, Clone, Default)]
pub struct RecordedClient {
    responses: HashMap<String, VecDeque<String>>,
}

impl RecordedClient {
    pub fn from_transcript(t: &Transcript) -> Self {
        let mut responses: HashMap<String, VecDeque<String>> = HashMap::new();
        for e in &t.exchanges {
            if let Some(r) = &e.response {
                responses.entry(e.request.digest()).or_default().push_back(r.clone());
            }
        }
        Self { responses }
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClientError::Config(format!("cannot read transcript {}: {e}", path.display())))?;
        let t = Transcript::from_jsonl(&text).map_err(ClientError::Config)?;
        Ok(Self::from_transcript(&t))
    }
}

impl ChatClient for RecordedClient {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, ClientError> {
        let digest = request.digest();
        self.responses
            .get_mut(&digest)
            .and_then(VecDeque::pop_front)
            .ok_or(ClientError::Unrecorded { digest })
    }
}

/// Answers with a fixed queue of responses regardless of the request, and
/// keeps every request it saw.
#[derive(Debug, Clone, Default)]
pub struct ScriptedClient {
    pub responses: VecDeque<String>,
    pub seen: Vec<ChatRequest>,
}

impl ScriptedClient {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(responses: I) -> Self {
        Self {
            responses: responses.into_iter().map(Into::into).collect(),
            seen: Vec::new(),
        }
    }
}

impl ChatClient for ScriptedClient {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, ClientError> {
        self.seen.push(request.clone());
        self.responses
            .pop_front()
            .ok_or_else(|| ClientError::Transport("scripted client has no responses left".to_string()))
    }
}

pub const ENV_BASE_URL: &str = "OODRECOVER_LLM_BASE_URL";
pub const ENV_MODEL: &str = "OODRECOVER_LLM_MODEL";
pub const ENV_API_KEY: &str = "OODRECOVER_LLM_API_KEY";
const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// OpenAI-compatible `chat/completions` client.
pub struct LiveClient {
    pub base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    /// Verbatim request and response bodies; the key never appears here.
    pub http_log: Vec<String>,
}

impl std::fmt::Debug for LiveClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveClient")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl LiveClient {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(std::time::Duration::from_secs(300)))
            .build()
            .new_agent();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            agent,
            http_log: Vec::new(),
        }
    }

    /// Endpoint and key from the environment; returns the configured model
    /// name too, if set.
    pub fn from_env() -> (Self, Option<String>) {
        let base = std::env::var(ENV_BASE_URL).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        (Self::new(base, key), std::env::var(ENV_MODEL).ok())
    }

    /// JSON body sent to the endpoint.
    pub fn build_body(request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| match &m.attachment {
                None => json!({"role": m.role, "content": m.content}),
                Some(a) => json!({
                    "role": m.role,
                    "content": [
                        {"type": "text", "text": m.content},
                        {"type": "image_url", "image_url": {"url": format!("data:{};base64,{}", a.media_type, a.data)}},
                    ],
                }),
            })
            .collect();
        json!({
            "model": request.model,
            "temperature": request.temperature,
            "messages": messages,
        })
    }

    fn redact(&self, text: &str) -> String {
        match &self.api_key {
            Some(k) if !k.is_empty() => text.replace(k.as_str(), "<redacted>"),
            _ => text.to_string(),
        }
    }
}

impl ChatClient for LiveClient {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, ClientError> {
        let body = Self::build_body(request);
        let body_text = body.to_string();
        let url = format!("{}/chat/completions", self.base_url);
        self.http_log.push(self.redact(&format!("POST {url}\n{body_text}")));
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req
            .send(body_text.as_bytes())
            .map_err(|e| ClientError::Transport(self.redact(&e.to_string())))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        self.http_log.push(self.redact(&format!("HTTP {status}\n{text}")));
        if !(200..300).contains(&status) {
            return Err(ClientError::Http {
                status,
                body: self.redact(&text),
            });
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| ClientError::Malformed(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ClientError::Malformed("missing choices[0].message.content".to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(model: &str, text: &str) -> ChatRequest {
        ChatRequest {
            model: model.into(),
            temperature: 0.0,
            messages: vec![ChatMessage::new(Role::User, text)],
        }
    }

    #[test]
    fn digest_ignores_model() {
        assert_eq!(req("a", "hi").digest(), req("b", "hi").digest());
        assert_ne!(req("a", "hi").digest(), req("a", "ho").digest());
    }

    #[test]
    fn recorded_replays_in_order_and_rejects_unknown() {
        let t = Transcript {
            exchanges: vec![
                Exchange {
                    phase: "p".into(),
                    attempt: 1,
                    digest: String::new(),
                    request: req("m", "q"),
                    response: Some(String::new()),
                    error: None,
                },
                Exchange {
                    phase: "p".into(),
                    attempt: 2,
                    digest: String::new(),
                    request: req("m", "q"),
                    response: Some("second".into()),
                    error: None,
                },
            ],
        };
        let round = Transcript::from_jsonl(&t.to_jsonl()).unwrap();
        assert_eq!(round, t);
        let mut c = RecordedClient::from_transcript(&t);
        assert_eq!(c.complete(&req("other-model", "q")).unwrap(), "");
        assert_eq!(c.complete(&req("m", "q")).unwrap(), "second");
        assert!(matches!(c.complete(&req("m", "q")), Err(ClientError::Unrecorded { .. })));
        assert!(matches!(c.complete(&req("m", "new")), Err(ClientError::Unrecorded { .. })));
    }

    #[test]
    fn live_body_shape() {
        let mut r = req("gpt", "describe");
        r.messages[0].attachment = Some(Attachment::from_bytes("image/svg+xml", b"<svg/>"));
        let b = LiveClient::build_body(&r);
        assert_eq!(b["temperature"], 0.0);
        assert_eq!(b["model"], "gpt");
        assert_eq!(b["messages"][0]["content"][0]["text"], "describe");
        assert!(b["messages"][0]["content"][1]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/svg+xml;base64,"));
    }

    #[test]
    fn debug_redacts_key() {
        let c = LiveClient::new("http://localhost:1", Some("sk-secret".into()));
        assert!(!format!("{c:?}").contains("sk-secret"));
    }
}
