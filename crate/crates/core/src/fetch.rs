//! Client for OpenAI-compatible chat-completions endpoints that returns
//! sampled answers with their token log-probabilities.
//!
//! The endpoint's own decoding is used (usually temperature sampling), not
//! diverse beam search.

use std::fmt;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::records::{GenerationRecord, Sample};

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

/// Bearer token. Never printed.
#[derive(Clone)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    /// Reads the key from `var`; `None` when unset or empty.
    pub fn from_env(var: &str) -> Option<Self> {
        std::env::var(var).ok().filter(|k| !k.is_empty()).map(Self)
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(***)")
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    /// Total attempts per request, including the first.
    pub max_attempts: u32,
    /// Delay before the first retry; doubled after each failure.
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub base_url: String,
    pub api_key: Option<ApiKey>,
    pub model: String,
    pub n: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    /// Issue `n` single-completion requests for endpoints that cap `n`.
    pub sequential: bool,
    /// Questions fetched concurrently.
    pub parallelism: usize,
}

impl FetchConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            n: 10,
            temperature: 1.0,
            max_tokens: 64,
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
            sequential: false,
            parallelism: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Config("temperature must be >= 0".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(Error::Config("at least one attempt is required".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(Error::Config(format!("base URL `{}` is not http(s)", self.base_url)));
        }
        Ok(())
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// One input line for a fetch run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub question: String,
    pub references: Vec<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Option<Message>,
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    logprob: f64,
}

pub struct FetchClient {
    http: reqwest::blocking::Client,
    config: FetchConfig,
}

impl FetchClient {
    pub fn new(config: FetchConfig) -> Result<Self> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Http(e.to_string()))?;
        Ok(Self { http, config })
    }

    pub fn config(&self) -> &FetchConfig {
        &self.config
    }

    pub fn fetch_sample(&self, question: &Question) -> Result<Sample> {
        let want = self.config.n;
        let generations = if self.config.sequential {
            let mut all = Vec::with_capacity(want);
            for _ in 0..want {
                all.extend(self.request(&question.question, 1)?);
            }
            all
        } else {
            self.request(&question.question, want)?
        };
        if generations.is_empty() {
            return Err(Error::Http(format!("no choices returned for `{}`", question.id)));
        }
        if generations.len() < want {
            log::warn!(
                "`{}`: requested {want} completions, received {}",
                question.id,
                generations.len()
            );
        }
        let sample = Sample {
            id: question.id.clone(),
            question: question.question.clone(),
            references: question.references.clone(),
            generations,
        };
        sample
            .validate()
            .map_err(|e| Error::Http(format!("unusable response for `{}`: {e}", question.id)))?;
        Ok(sample)
    }

    /// Fetches every question with at most `parallelism` in flight. Output
    /// order follows input order.
    pub fn fetch_all(&self, questions: &[Question]) -> Result<Vec<Sample>> {
        let mut out = Vec::with_capacity(questions.len());
        for chunk in questions.chunks(self.config.parallelism) {
            let results: Vec<Result<Sample>> = thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|q| scope.spawn(move || self.fetch_sample(q)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("fetch worker panicked"))
                    .collect()
            });
            for r in results {
                out.push(r?);
            }
        }
        Ok(out)
    }

    fn request(&self, question: &str, n: usize) -> Result<Vec<GenerationRecord>> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": question}],
            "n": n,
            "temperature": self.config.temperature,
            "logprobs": true,
            "top_logprobs": 1,
            "max_tokens": self.config.max_tokens,
        });
        let text = self.post_with_retry(&body)?;
        parse_choices(&text)
    }

    fn post_with_retry(&self, body: &serde_json::Value) -> Result<String> {
        let policy = &self.config.retry;
        let mut delay = policy.backoff;
        let mut last_err = String::new();
        for attempt in 1..=policy.max_attempts {
            let mut req = self.http.post(self.config.endpoint()).json(body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(&key.0);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| Error::Http(e.to_string()))?;
                    if status.is_success() {
                        return Ok(text);
                    }
                    last_err = format!("HTTP {status}: {}", snippet(&text));
                    if !(status.is_server_error() || status.as_u16() == 429) {
                        return Err(Error::Http(last_err));
                    }
                }
                Err(e) => last_err = format!("transport error: {e}"),
            }
            if attempt < policy.max_attempts {
                log::warn!("attempt {attempt} failed ({last_err}); retrying");
                thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(Error::Http(format!(
            "giving up after {} attempts; last error: {last_err}",
            policy.max_attempts
        )))
    }
}

fn snippet(text: &str) -> &str {
    match text.char_indices().nth(200) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

fn parse_choices(text: &str) -> Result<Vec<GenerationRecord>> {
    let resp: ChatResponse = serde_json::from_str(text)
        .map_err(|e| Error::Http(format!("malformed response body: {e}")))?;
    resp.choices
        .into_iter()
        .enumerate()
        .map(|(i, choice)| {
            let tokens = choice
                .logprobs
                .and_then(|l| l.content)
                .filter(|c| !c.is_empty())
                .ok_or_else(|| Error::MissingLogprobs(format!("choice {i} has no token logprobs")))?;
            let text = choice.message.and_then(|m| m.content).unwrap_or_default();
            // some servers report tiny positive values for certain tokens
            let token_logprobs = tokens.iter().map(|t| t.logprob.min(0.0)).collect();
            let mut record = GenerationRecord::new(text, token_logprobs);
            record.rank_hint = Some(i as i64);
            Ok(record)
        })
        .collect()
}

/// Fetches one sample with a fresh client.
pub fn fetch_sample(question: &Question, config: &FetchConfig) -> Result<Sample> {
    FetchClient::new(config.clone())?.fetch_sample(question)
}

#[cfg(test)]
#[path = "../tests/support/mock_server.rs"]
mod mock_server;
