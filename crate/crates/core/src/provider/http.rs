use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CompletionRequest, CompletionResult, Provider, ProviderError, Usage};
use crate::observation::estimate_tokens;

/// Environment variable holding the bearer token for the remote API.
pub const API_KEY_ENV: &str = "STEP_API_KEY";

const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpProviderConfig {
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    /// Delay before the first retry; doubled after every failed attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_temperature() -> f64 {
    super::DEFAULT_TEMPERATURE
}
fn default_n() -> usize {
    super::DEFAULT_CANDIDATES
}
fn default_max_tokens() -> usize {
    super::DEFAULT_MAX_TOKENS
}
fn default_backoff_ms() -> u64 {
    500
}

impl HttpProviderConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        HttpProviderConfig {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            temperature: default_temperature(),
            n: default_n(),
            max_tokens: default_max_tokens(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Sends one JSON POST. Split out so the request shape can be checked
/// without a network.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> Result<HttpReply, ProviderError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(ReqwestTransport { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> Result<HttpReply, ProviderError> {
        let mut request = self.client.post(url).json(body);
        if let Some(key) = bearer {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

/// Client for an OpenAI-compatible chat-completions endpoint.
pub struct HttpProvider {
    config: HttpProviderConfig,
    api_key: Option<String>,
    transport: Box<dyn HttpTransport>,
}

impl HttpProvider {
    /// Uses reqwest and reads the API key from [`API_KEY_ENV`].
    pub fn from_env(config: HttpProviderConfig) -> Result<Self, ProviderError> {
        let transport = ReqwestTransport::new(Duration::from_secs(120))?;
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Ok(HttpProvider::with_transport(config, api_key, Box::new(transport)))
    }

    pub fn with_transport(
        config: HttpProviderConfig,
        api_key: Option<String>,
        transport: Box<dyn HttpTransport>,
    ) -> Self {
        HttpProvider {
            config,
            api_key,
            transport,
        }
    }

    pub fn config(&self) -> &HttpProviderConfig {
        &self.config
    }

    /// A request carrying the configured sampling parameters.
    pub fn request(&self, prompt: impl Into<String>) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            temperature: self.config.temperature,
            n_candidates: self.config.n,
            max_tokens: self.config.max_tokens,
            stream: None,
        }
    }

    pub fn request_body(&self, req: &CompletionRequest) -> Value {
        json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "top_p": 1,
            "n": req.n_candidates,
            "max_tokens": req.max_tokens,
        })
    }
}

fn is_transient(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

pub(crate) fn decode_chat_response(
    body: &str,
    prompt: &str,
) -> Result<CompletionResult, ProviderError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| ProviderError::Decode(e.to_string()))?;
    let choices = value
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| ProviderError::Decode("missing `choices` array".into()))?;
    let candidates: Vec<String> = choices
        .iter()
        .filter_map(|c| {
            c.pointer("/message/content")
                .or_else(|| c.get("text"))
                .and_then(Value::as_str)
                .map(|s| s.trim().to_string())
        })
        .collect();
    if candidates.is_empty() {
        return Err(ProviderError::NoCandidates);
    }
    let field = |name: &str| {
        value
            .get("usage")
            .and_then(|u| u.get(name))
            .and_then(Value::as_u64)
    };
    let usage = Usage {
        prompt_tokens: field("prompt_tokens").unwrap_or(estimate_tokens(prompt) as u64),
        completion_tokens: field("completion_tokens")
            .unwrap_or_else(|| candidates.iter().map(|c| estimate_tokens(c) as u64).sum()),
    };
    Ok(CompletionResult { candidates, usage })
}

impl Provider for HttpProvider {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        req.validate()?;
        let body = self.request_body(req);
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last_error = ProviderError::Transport("no attempt made".into());
        for attempt in 1..=MAX_ATTEMPTS {
            match self
                .transport
                .post_json(&self.config.endpoint_url, self.api_key.as_deref(), &body)
            {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    return decode_chat_response(&reply.body, &req.prompt);
                }
                Ok(reply) if is_transient(reply.status) => {
                    last_error = ProviderError::Api {
                        status: reply.status,
                        body: reply.body,
                    };
                }
                Ok(reply) => {
                    return Err(ProviderError::Api {
                        status: reply.status,
                        body: reply.body,
                    })
                }
                Err(e) => last_error = e,
            }
            if attempt < MAX_ATTEMPTS {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(match last_error {
            ProviderError::Transport(m) => {
                ProviderError::Transport(format!("{m} (after {MAX_ATTEMPTS} attempts)"))
            }
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    #[derive(Default)]
    struct Recorder {
        replies: Mutex<Vec<Result<HttpReply, ProviderError>>>,
        sent: Mutex<Vec<(String, Option<String>, Value)>>,
    }

    impl HttpTransport for Arc<Recorder> {
        fn post_json(
            &self,
            url: &str,
            bearer: Option<&str>,
            body: &Value,
        ) -> Result<HttpReply, ProviderError> {
            self.sent
                .lock()
                .unwrap()
                .push((url.into(), bearer.map(String::from), body.clone()));
            self.replies.lock().unwrap().remove(0)
        }
    }

    fn ok(body: &str) -> Result<HttpReply, ProviderError> {
        Ok(HttpReply {
            status: 200,
            body: body.into(),
        })
    }

    fn provider(replies: Vec<Result<HttpReply, ProviderError>>) -> (HttpProvider, Arc<Recorder>) {
        let rec = Arc::new(Recorder {
            replies: Mutex::new(replies),
            sent: Mutex::default(),
        });
        let mut config = HttpProviderConfig::new("http://stub/v1/chat/completions", "test-model");
        config.backoff_ms = 1;
        let p = HttpProvider::with_transport(config, Some("k".into()), Box::new(rec.clone()));
        (p, rec)
    }

    const CHAT: &str = r#"{"choices":[{"message":{"role":"assistant","content":" ACTION: click [7]\n"}},{"message":{"content":"b"}}],"usage":{"prompt_tokens":11,"completion_tokens":4}}"#;

    #[test]
    fn body_carries_sampling_parameters() {
        let (p, rec) = provider(vec![ok(CHAT)]);
        let req = p.request("hello");
        let result = p.complete(&req).unwrap();
        assert_eq!(result.candidates, vec!["ACTION: click [7]", "b"]);
        assert_eq!(result.usage.prompt_tokens, 11);
        let sent = rec.sent.lock().unwrap();
        let (url, key, body) = &sent[0];
        assert_eq!(url, "http://stub/v1/chat/completions");
        assert_eq!(key.as_deref(), Some("k"));
        assert_eq!(body["temperature"], 0.3);
        assert_eq!(body["n"], 3);
        assert_eq!(body["top_p"], 1);
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hello");
    }

    #[test]
    fn stream_is_not_transmitted() {
        let (p, rec) = provider(vec![ok(CHAT)]);
        p.complete(&p.request("x").with_stream("root")).unwrap();
        let body = &rec.sent.lock().unwrap()[0].2;
        assert!(body.get("stream").is_none());
    }

    #[test]
    fn retries_transient_failures() {
        let (p, rec) = provider(vec![
            Err(ProviderError::Transport("reset".into())),
            Ok(HttpReply {
                status: 503,
                body: "busy".into(),
            }),
            ok(CHAT),
        ]);
        assert!(p.complete(&p.request("x")).is_ok());
        assert_eq!(rec.sent.lock().unwrap().len(), 3);
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let (p, rec) = provider(vec![
            Err(ProviderError::Transport("a".into())),
            Err(ProviderError::Transport("b".into())),
            Err(ProviderError::Transport("c".into())),
        ]);
        assert!(matches!(p.complete(&p.request("x")), Err(ProviderError::Transport(_))));
        assert_eq!(rec.sent.lock().unwrap().len(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (p, rec) = provider(vec![Ok(HttpReply {
            status: 401,
            body: "nope".into(),
        })]);
        assert!(matches!(
            p.complete(&p.request("x")),
            Err(ProviderError::Api { status: 401, .. })
        ));
        assert_eq!(rec.sent.lock().unwrap().len(), 1);
    }

    #[test]
    fn usage_falls_back_to_estimate() {
        let r = decode_chat_response(r#"{"choices":[{"message":{"content":"click [7]"}}]}"#, "abcdefgh")
            .unwrap();
        assert_eq!(r.usage.prompt_tokens, 2);
        assert_eq!(r.usage.completion_tokens, 3);
        assert_eq!(
            decode_chat_response(r#"{"choices":[]}"#, ""),
            Err(ProviderError::NoCandidates)
        );
    }
}
