use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::llm::{PromptText, ResponseCache};

/// Connection and policy settings for the chat-completions endpoint.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LlmSettings {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API credential.
    pub credential_env: String,
    pub temperature: f64,
    /// Serve from cache only; a cold-cache request is an error.
    pub offline: bool,
    /// Use the deterministic token-graph clusterer instead of the network.
    pub mock: bool,
    pub cache_dir: String,
    pub max_concurrency: usize,
    /// Maximum number of new network calls per command; 0 = unlimited.
    pub call_budget: usize,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            credential_env: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            offline: false,
            mock: false,
            cache_dir: "llm_cache".into(),
            max_concurrency: 4,
            call_budget: 0,
            max_attempts: 5,
            backoff_ms: 500,
            timeout_secs: 120,
        }
    }
}

pub struct LlmClient {
    settings: LlmSettings,
    cache: ResponseCache,
    http: reqwest::blocking::Client,
    credential: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl LlmClient {
    /// Validates the credential up front (unless offline) so configuration
    /// errors surface before any call.
    pub fn new(settings: LlmSettings) -> Result<Self> {
        let credential = if settings.offline {
            None
        } else {
            match std::env::var(&settings.credential_env) {
                Ok(v) if !v.is_empty() => Some(v),
                _ => {
                    return Err(Error::Config(format!(
                        "credential environment variable {} is not set",
                        settings.credential_env
                    )))
                }
            }
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(settings.timeout_secs))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        let cache = ResponseCache::new(&settings.cache_dir);
        Ok(LlmClient {
            settings,
            cache,
            http,
            credential,
        })
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn cache_key(&self, prompt: &PromptText) -> String {
        ResponseCache::key(&self.settings.model, self.settings.temperature, prompt)
    }

    /// Fetch the raw completion for a prompt. Cache hits return the stored
    /// bytes without touching the network; misses perform the call with
    /// exponential backoff on transient failures and store the response.
    /// Returns `(raw, was_network_call)`.
    pub fn request_clusters(&self, prompt: &PromptText) -> Result<(String, bool)> {
        let key = self.cache_key(prompt);
        if let Some(raw) = self.cache.get(&key)? {
            return Ok((raw, false));
        }
        if self.settings.offline {
            return Err(Error::OfflineCacheMiss(key));
        }
        let raw = self.call_with_retries(prompt)?;
        self.cache.put(&key, &raw)?;
        Ok((raw, true))
    }

    fn call_with_retries(&self, prompt: &PromptText) -> Result<String> {
        let url = format!("{}/chat/completions", self.settings.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.settings.model,
            "temperature": self.settings.temperature,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
        });
        let mut last_reason = String::new();
        for attempt in 0..self.settings.max_attempts {
            if attempt > 0 {
                let delay = self.settings.backoff_ms.saturating_mul(1 << (attempt - 1).min(8));
                std::thread::sleep(Duration::from_millis(delay));
            }
            let resp = self
                .http
                .post(&url)
                .bearer_auth(self.credential.as_deref().unwrap_or(""))
                .json(&body)
                .send();
            match resp {
                Ok(r) => {
                    let status = r.status();
                    if status.is_success() {
                        let parsed: ChatResponse = r
                            .json()
                            .map_err(|e| Error::LlmExhausted {
                                attempts: attempt + 1,
                                reason: format!("unparsable response body: {e}"),
                            })?;
                        let content = parsed
                            .choices
                            .into_iter()
                            .next()
                            .map(|c| c.message.content)
                            .ok_or_else(|| Error::LlmExhausted {
                                attempts: attempt + 1,
                                reason: "response contained no choices".into(),
                            })?;
                        return Ok(content);
                    }
                    last_reason = format!("HTTP {status}");
                    // Only rate limits and server errors are retryable.
                    if !(status.as_u16() == 429 || status.is_server_error()) {
                        break;
                    }
                }
                Err(e) => last_reason = format!("transport: {e}"),
            }
        }
        Err(Error::LlmExhausted {
            attempts: self.settings.max_attempts,
            reason: last_reason,
        })
    }
}
