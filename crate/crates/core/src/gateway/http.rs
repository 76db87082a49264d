//! OpenAI-compatible chat-completions backend.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BackendError, ChatBackend, CompletionRequest, RawCompletion};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "ROBFORGE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL up to and including the version segment, e.g. `https://openrouter.ai/api/v1`.
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("config", &self.config).finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

impl HttpBackend {
    /// Reads the API key from [`API_KEY_ENV`].
    pub fn from_env(config: HttpConfig) -> Result<Self, String> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| format!("{API_KEY_ENV} is not set"))?;
        Ok(Self::with_key(config, api_key))
    }

    pub fn with_key(config: HttpConfig, api_key: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, api_key: api_key.into(), agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    pub fn request_body(&self, request: &CompletionRequest) -> serde_json::Value {
        json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.decode.temperature,
            "top_p": request.decode.top_p,
            "seed": request.decode.seed,
        })
    }
}

impl ChatBackend for HttpBackend {
    fn model(&self) -> &str {
        &self.config.model
    }

    fn chat(&self, request: &CompletionRequest) -> Result<RawCompletion, BackendError> {
        let mut response = self
            .agent
            .post(&self.endpoint())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(self.request_body(request))
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Provider { status, body });
        }
        let parsed: ChatResponse = serde_json::from_str(&body)
            .map_err(|e| BackendError::Provider { status, body: format!("unparseable response ({e}): {body}") })?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Provider { status, body: "response has no message content".into() })?;
        let (prompt_tokens, completion_tokens) = parsed
            .usage
            .map(|u| (u.prompt_tokens, u.completion_tokens))
            .unwrap_or((None, None));
        Ok(RawCompletion { text, prompt_tokens, completion_tokens })
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    use super::*;
    use crate::gateway::RoleTag;

    /// Serves one canned HTTP response and returns the raw request it received.
    fn serve_once(status: u16, body: &'static str) -> (String, thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut payload = vec![0; content_length];
            reader.read_exact(&mut payload).unwrap();
            let response = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
            head + &String::from_utf8(payload).unwrap()
        });
        (format!("http://{addr}/v1"), handle)
    }

    fn backend(base_url: String) -> HttpBackend {
        HttpBackend::with_key(HttpConfig { base_url, model: "test-model".into(), timeout_secs: 5 }, "sk-test")
    }

    #[test]
    fn parses_openai_response_with_usage() {
        let (url, handle) = serve_once(
            200,
            r#"{"choices":[{"message":{"role":"assistant","content":"risk_level: Low"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}}"#,
        );
        let out = backend(url).chat(&CompletionRequest::new(RoleTag::Main, "sys", "user")).unwrap();
        assert_eq!(out.text, "risk_level: Low");
        assert_eq!((out.prompt_tokens, out.completion_tokens), (Some(12), Some(3)));
        let raw = handle.join().unwrap();
        assert!(raw.starts_with("POST /v1/chat/completions"));
        assert!(raw.contains("Bearer sk-test"));
        let payload: serde_json::Value = serde_json::from_str(raw.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(payload["top_p"], 1.0);
        assert_eq!(payload["temperature"], 0.0);
        assert_eq!(payload["seed"], 42);
        assert_eq!(payload["messages"][1]["content"], "user");
    }

    #[test]
    fn error_status_is_provider_error() {
        let (url, handle) = serve_once(429, r#"{"error":"rate limited"}"#);
        let err = backend(url).chat(&CompletionRequest::new(RoleTag::Main, "s", "u")).unwrap_err();
        assert!(matches!(err, BackendError::Provider { status: 429, .. }));
        handle.join().unwrap();
    }

    #[test]
    fn refused_connection_is_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let err = backend(format!("http://{addr}/v1")).chat(&CompletionRequest::new(RoleTag::Main, "s", "u")).unwrap_err();
        assert!(matches!(err, BackendError::Transport(_)));
    }
}
