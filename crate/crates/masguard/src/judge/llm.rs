//! Judge backed by an OpenAI-compatible chat-completion endpoint.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{build_score_prompt, parse_score, JudgeError, Sign};
use crate::graph::MasGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key. Unset or empty
    /// variable means no Authorization header is sent.
    pub api_key_env: String,
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub concurrency: usize,
    pub retry_backoff_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_retries: 3,
            timeout_secs: 60,
            concurrency: 4,
            retry_backoff_ms: 500,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), JudgeError> {
        if self.endpoint.trim().is_empty() {
            return Err(JudgeError::InvalidConfig("llm judge needs an endpoint".into()));
        }
        if self.model.trim().is_empty() {
            return Err(JudgeError::InvalidConfig("llm judge needs a model name".into()));
        }
        if self.api_key_env.trim().is_empty() {
            return Err(JudgeError::InvalidConfig("llm judge needs an api key variable name".into()));
        }
        if self.concurrency == 0 {
            return Err(JudgeError::InvalidConfig("judge concurrency must be at least 1".into()));
        }
        Ok(())
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

pub struct Client {
    cfg: LlmConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl Client {
    pub fn new(cfg: &LlmConfig) -> Result<Self, JudgeError> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(Client { cfg: cfg.clone(), agent, api_key })
    }

    fn request(&self, prompt: &str) -> Result<String, Failure> {
        let body = ChatRequest {
            model: &self.cfg.model,
            messages: [ChatMessage { role: "user", content: prompt }],
            temperature: 0.0,
        };
        let mut req = self.agent.post(&self.cfg.url());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(Failure::Fatal(format!("HTTP {status}")));
        }
        let parsed: ChatResponse =
            resp.body_mut().read_json().map_err(|e| Failure::Retryable(format!("bad response body: {e}")))?;
        Ok(parsed.choices.into_iter().next().and_then(|c| c.message.content).unwrap_or_default())
    }

    /// Retries transport failures and unparseable replies. A reply that never
    /// parses becomes 0; an endpoint that never answers is an error.
    pub fn judge(&self, prompt: &str) -> Result<Sign, JudgeError> {
        let mut got_reply = false;
        let mut last_err = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 && self.cfg.retry_backoff_ms > 0 {
                let factor = 1u64 << (attempt - 1).min(10);
                std::thread::sleep(Duration::from_millis(self.cfg.retry_backoff_ms.saturating_mul(factor)));
            }
            match self.request(prompt) {
                Ok(text) => {
                    got_reply = true;
                    if let Ok(s) = parse_score(&text) {
                        return Ok(s);
                    }
                }
                Err(Failure::Retryable(e)) => last_err = e,
                Err(Failure::Fatal(e)) => return Err(JudgeError::JudgeUnavailable(e)),
            }
        }
        if got_reply {
            Ok(Sign::Zero)
        } else {
            Err(JudgeError::JudgeUnavailable(last_err))
        }
    }
}

pub fn score_edges(graph: &MasGraph, cfg: &LlmConfig) -> Result<Vec<Sign>, JudgeError> {
    let client = Client::new(cfg)?;
    // Identical prompts within one graph are judged once.
    let mut unique: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut edge_prompt = Vec::with_capacity(graph.edges.len());
    for e in &graph.edges {
        let sender = &graph.events[e.event].content;
        let receiver = graph.outputs.get(&e.to).map(|o| o.content.as_str()).unwrap_or("");
        let prompt = build_score_prompt(sender, receiver)?;
        let next = unique.len();
        let id = *index.entry(prompt.clone()).or_insert(next);
        if id == next {
            unique.push(prompt);
        }
        edge_prompt.push(id);
    }

    let results: Vec<Mutex<Option<Sign>>> = unique.iter().map(|_| Mutex::new(None)).collect();
    let cursor = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let first_error: Mutex<Option<JudgeError>> = Mutex::new(None);
    let workers = cfg.concurrency.min(unique.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= unique.len() {
                    break;
                }
                match client.judge(&unique[i]) {
                    Ok(sign) => *results[i].lock().unwrap() = Some(sign),
                    Err(e) => {
                        failed.store(true, Ordering::Relaxed);
                        first_error.lock().unwrap().get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    let signs: Vec<Sign> = results.into_iter().map(|m| m.into_inner().unwrap().expect("every prompt judged")).collect();
    Ok(edge_prompt.into_iter().map(|i| signs[i]).collect())
}
