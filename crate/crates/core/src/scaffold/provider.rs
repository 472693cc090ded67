//! Language-model providers.
//!
//! A provider has one job: turn a prompt into text. The stub providers are
//! deterministic functions of the prompt content and are what every test
//! uses; [`HttpProvider`] talks to an OpenAI-compatible chat endpoint.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::parse::{format_response, ParsedScaffold};
use crate::domain::{SelfExample, TaskSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderResponse {
    pub raw_text: String,
    pub provider_meta: Value,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned status {0}")]
    Status(u16),
    #[error("malformed provider reply: {0}")]
    Malformed(String),
    #[error("provider configuration: {0}")]
    Config(String),
}

pub trait Provider: Send + Sync {
    /// `run_index` doubles as the sampling seed for providers that accept one.
    fn complete(
        &self,
        prompt: &str,
        temperature: f64,
        run_index: u32,
    ) -> Result<ProviderResponse, ProviderError>;

    fn model(&self) -> &str;
}

fn prompt_digest(prompt: &str) -> [u8; 32] {
    Sha256::digest(prompt.as_bytes()).into()
}

const CUE_WORDS: [&str; 8] = [
    "hedging",
    "an intensifier",
    "an ellipsis",
    "a rhetorical question",
    "an exclamation",
    "a modal verb",
    "a contrastive 'but'",
    "a first-person evaluation",
];

/// Deterministic provider keyed by a content hash of the prompt. The same
/// prompt always yields the same well-formed response regardless of
/// temperature or run index.
#[derive(Debug, Clone)]
pub struct StubProvider {
    spec: TaskSpec,
    model: String,
}

impl StubProvider {
    pub fn new(spec: TaskSpec) -> Self {
        Self {
            spec,
            model: "stub".into(),
        }
    }

    /// The structured answer for `prompt`. Probabilities are multiples of
    /// 1/1024 and sum to exactly 1.
    pub fn answer(&self, prompt: &str) -> ParsedScaffold {
        let h = prompt_digest(prompt);
        let cats = &self.spec.categories;
        let k = cats.len();
        let peak = h[0] as usize % k;

        let floor = 16u32;
        let budget = 1024 - floor * k as u32;
        let weights: Vec<u32> = (0..k)
            .map(|i| 1 + h[1 + i % 30] as u32 + if i == peak { 3 * 256 } else { 0 })
            .collect();
        let wsum: u32 = weights.iter().sum();
        let mut units: Vec<u32> = weights.iter().map(|w| floor + budget * w / wsum).collect();
        let assigned: u32 = units.iter().sum();
        units[peak] += 1024 - assigned;
        let soft_labels: Vec<f64> = units.iter().map(|u| *u as f64 / 1024.0).collect();

        let self_examples = cats
            .iter()
            .enumerate()
            .map(|(i, c)| SelfExample {
                category_id: c.category_id.clone(),
                text: format!(
                    "An utterance matching '{}' (variant {:02x}): {}",
                    c.display_name,
                    h[8 + i % 16],
                    c.definition.trim()
                ),
            })
            .collect();

        let cue_a = CUE_WORDS[h[2] as usize % CUE_WORDS.len()];
        let cue_b = CUE_WORDS[h[3] as usize % CUE_WORDS.len()];
        let (x, y) = (h[4] as usize % k, (h[4] as usize % k + 1) % k);
        let reasoning_text = format!(
            "Lexical cues: the wording contains {cue_a} and {cue_b}, which shift how strongly the \
             speaker commits to an evaluation.\n\
             Pragmatic signals: the utterance may be doing more than it literally says, so its \
             function in the exchange matters.\n\
             Context: the preceding turns, when present, determine what the utterance responds to.\n\
             Adjacent categories: the boundary between '{}' and '{}' is the one to examine most \
             carefully for this item.",
            cats[x].display_name, cats[y].display_name
        );

        ParsedScaffold {
            self_examples,
            reasoning_text,
            verdict: cats[peak].category_id.clone(),
            soft_labels,
        }
    }
}

impl Provider for StubProvider {
    fn complete(
        &self,
        prompt: &str,
        _temperature: f64,
        _run_index: u32,
    ) -> Result<ProviderResponse, ProviderError> {
        Ok(ProviderResponse {
            raw_text: format_response(&self.answer(prompt)),
            provider_meta: json!({ "provider": "stub" }),
        })
    }

    fn model(&self) -> &str {
        &self.model
    }
}

/// The stub with seeded uniform noise of half-width `epsilon` added to each
/// probability. Noise depends on the prompt, the run index and the seed, so
/// repeated runs differ from each other but are reproducible.
#[derive(Debug, Clone)]
pub struct NoisyStubProvider {
    base: StubProvider,
    epsilon: f64,
    seed: u64,
    model: String,
}

impl NoisyStubProvider {
    pub fn new(spec: TaskSpec, epsilon: f64, seed: u64) -> Self {
        Self {
            base: StubProvider::new(spec),
            epsilon,
            seed,
            model: format!("stub-noise-{epsilon}"),
        }
    }
}

impl Provider for NoisyStubProvider {
    fn complete(
        &self,
        prompt: &str,
        _temperature: f64,
        run_index: u32,
    ) -> Result<ProviderResponse, ProviderError> {
        let mut answer = self.base.answer(prompt);
        let h = prompt_digest(prompt);
        let mut key = [0u8; 8];
        key.copy_from_slice(&h[..8]);
        let stream = u64::from_le_bytes(key) ^ self.seed ^ (u64::from(run_index) << 48);
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        for p in &mut answer.soft_labels {
            let noise = if self.epsilon > 0.0 {
                rng.random_range(-self.epsilon..=self.epsilon)
            } else {
                0.0
            };
            *p = (*p + noise).clamp(0.0, 1.0);
        }
        let sum: f64 = answer.soft_labels.iter().sum();
        for p in &mut answer.soft_labels {
            *p /= sum;
        }
        let best = answer
            .soft_labels
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        answer.verdict = answer.self_examples[best].category_id.clone();
        Ok(ProviderResponse {
            raw_text: format_response(&answer),
            provider_meta: json!({ "provider": "stub", "epsilon": self.epsilon, "run": run_index }),
        })
    }

    fn model(&self) -> &str {
        &self.model
    }
}

/// Endpoint settings, normally read from `LLM_ENDPOINT`, `LLM_API_KEY`
/// and `LLM_MODEL`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderSettings {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
}

impl ProviderSettings {
    /// `None` when `LLM_ENDPOINT` is unset.
    pub fn from_env() -> Result<Option<Self>, ProviderError> {
        let Ok(endpoint) = std::env::var("LLM_ENDPOINT") else {
            return Ok(None);
        };
        if endpoint.trim().is_empty() {
            return Ok(None);
        }
        let model = std::env::var("LLM_MODEL")
            .map_err(|_| ProviderError::Config("LLM_MODEL must be set with LLM_ENDPOINT".into()))?;
        Ok(Some(Self {
            endpoint,
            api_key: std::env::var("LLM_API_KEY").ok().filter(|k| !k.is_empty()),
            model,
        }))
    }
}

/// Chat-completions client (`POST {endpoint}` with an OpenAI-style body).
pub struct HttpProvider {
    settings: ProviderSettings,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(settings: ProviderSettings) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self { settings, agent }
    }
}

impl Provider for HttpProvider {
    fn complete(
        &self,
        prompt: &str,
        temperature: f64,
        run_index: u32,
    ) -> Result<ProviderResponse, ProviderError> {
        let body = json!({
            "model": self.settings.model,
            "temperature": temperature,
            "seed": run_index,
            "messages": [{ "role": "user", "content": prompt }],
        });
        let mut req = self.agent.post(&self.settings.endpoint);
        if let Some(key) = &self.settings.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::StatusCode(code) => ProviderError::Status(code),
            other => ProviderError::Transport(other.to_string()),
        })?;
        let reply: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Malformed(e.to_string()))?;
        let text = reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::Malformed("no choices[0].message.content".into()))?;
        Ok(ProviderResponse {
            raw_text: text.to_owned(),
            provider_meta: json!({
                "provider": "http",
                "id": reply.get("id").cloned().unwrap_or(Value::Null),
                "usage": reply.get("usage").cloned().unwrap_or(Value::Null),
            }),
        })
    }

    fn model(&self) -> &str {
        &self.settings.model
    }
}
