//! OpenAI-compatible chat-completions backend.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{DecodeMode, GenerateError, GenerationConfig, GenerationRequest, Generator};

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_delay: Duration,
    pub max_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 4,
            initial_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let scaled = self.initial_delay.as_secs_f64() * self.factor.powi(retry as i32);
        Duration::from_secs_f64(scaled.min(self.max_delay.as_secs_f64()))
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f32,
    top_p: f32,
    n: usize,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_k: Option<u32>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Clone)]
pub struct HttpGenerator {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    token: Option<String>,
    retry: RetryPolicy,
    /// Forward `top_k`; many hosted chat APIs reject the field.
    send_top_k: bool,
}

impl HttpGenerator {
    pub fn new(
        base_url: &str,
        model: impl Into<String>,
        token: Option<String>,
        retry: RetryPolicy,
        send_top_k: bool,
        timeout: Duration,
    ) -> Result<Self, GenerateError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GenerateError::Malformed(format!("http client: {e}")))?;
        let base = base_url.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_owned()
        } else {
            format!("{base}/chat/completions")
        };
        Ok(HttpGenerator {
            client,
            url,
            model: model.into(),
            token,
            retry,
            send_top_k,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn body<'a>(&'a self, prompt: &'a str, cfg: &GenerationConfig) -> ChatRequest<'a> {
        let greedy = cfg.mode == DecodeMode::Greedy;
        ChatRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: if greedy { 0.0 } else { cfg.temperature },
            top_p: if greedy { 1.0 } else { cfg.top_p },
            n: if greedy { 1 } else { cfg.num_return_sequences },
            max_tokens: cfg.max_new_tokens,
            top_k: self
                .send_top_k
                .then_some(if greedy { 1 } else { cfg.top_k }),
        }
    }

    fn attempt(&self, body: &ChatRequest<'_>) -> Result<Vec<String>, Attempt> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("HTTP {status}: {}", snippet(&text))));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(GenerateError::Rejected {
                status: status.as_u16(),
                body: snippet(&text),
            }));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(GenerateError::Malformed(format!("{e}: {}", snippet(&text)))))?;
        if parsed.choices.is_empty() {
            return Err(Attempt::Fatal(GenerateError::Malformed("reply has no choices".into())));
        }
        Ok(parsed
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect())
    }
}

enum Attempt {
    Retry(String),
    Fatal(GenerateError),
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

impl Generator for HttpGenerator {
    fn generate(
        &self,
        req: &GenerationRequest<'_>,
        cfg: &GenerationConfig,
    ) -> Result<Vec<String>, GenerateError> {
        let body = self.body(req.prompt, cfg);
        let mut tries = 0;
        loop {
            match self.attempt(&body) {
                Ok(gens) => return Ok(gens),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    if tries >= self.retry.max_retries {
                        return Err(GenerateError::Exhausted {
                            attempts: tries + 1,
                            last: msg,
                        });
                    }
                    log::debug!("{}: retrying after {msg}", req.key);
                    thread::sleep(self.retry.delay(tries));
                    tries += 1;
                }
            }
        }
    }

    fn describe(&self) -> String {
        format!("{} model={}", self.url, self.model)
    }
}
