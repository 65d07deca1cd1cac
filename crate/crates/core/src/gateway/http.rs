//! OpenAI-compatible chat-completions backend.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{AttachmentKind, ChatBackend, ChatRequest, GatewayError};

pub const API_KEY_ENV: &str = "SCHEMEX_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: String,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: &str) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(HttpBackend {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
        })
    }

    /// Reads the key from `SCHEMEX_API_KEY`.
    pub fn from_env(base_url: &str) -> Result<Self, GatewayError> {
        let key =
            std::env::var(API_KEY_ENV).map_err(|_| GatewayError::Transport(format!("{API_KEY_ENV} is not set")))?;
        Self::new(base_url, &key)
    }

    fn transcribe(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let audio = request
            .attachments
            .iter()
            .find(|a| a.kind == AttachmentKind::Audio)
            .ok_or_else(|| GatewayError::Transport("transcription request without audio".into()))?;
        let ext = audio.media_type.rsplit('/').next().unwrap_or("bin");
        let part = reqwest::blocking::multipart::Part::bytes(audio.data.clone())
            .file_name(format!("audio.{ext}"))
            .mime_str(&audio.media_type)
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let form = reqwest::blocking::multipart::Form::new()
            .text("model", "whisper-1")
            .part("file", part);
        let resp = self
            .client
            .post(format!("{}/audio/transcriptions", self.base_url))
            .bearer_auth(&self.api_key)
            .multipart(form)
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let body = read_json(resp)?;
        body.get("text")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Transport("transcription response has no text".into()))
    }
}

fn read_json(resp: reqwest::blocking::Response) -> Result<Value, GatewayError> {
    let status = resp.status();
    let text = resp.text().map_err(|e| GatewayError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(GatewayError::Transport(format!("HTTP {status}: {text}")));
    }
    serde_json::from_str(&text).map_err(|e| GatewayError::Transport(format!("bad response body: {e}")))
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        if request.attachments.iter().any(|a| a.kind == AttachmentKind::Audio) {
            return self.transcribe(request);
        }
        let content: Value = if request.attachments.is_empty() {
            Value::String(request.prompt.clone())
        } else {
            let mut parts = vec![json!({"type": "text", "text": request.prompt})];
            for a in &request.attachments {
                let b64 = base64::engine::general_purpose::STANDARD.encode(&a.data);
                parts.push(json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:{};base64,{b64}", a.media_type)}
                }));
            }
            Value::Array(parts)
        };
        let mut body = json!({
            "model": request.params.model,
            "messages": [{"role": "user", "content": content}],
        });
        if let Some(t) = request.params.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(s) = request.params.seed {
            body["seed"] = json!(s);
        }
        let resp = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let value = read_json(resp)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Transport("response has no message content".into()))
    }
}
