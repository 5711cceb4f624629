//! JSON-over-HTTP adapter for remotely hosted models.
//!
//! Every provider kind uses the same endpoint, `POST {base_url}/score`:
//!
//! ```text
//! request:  {"kind": "arousal"|"perplexity"|"importance"|"embedding"|"generation",
//!            "user_text": "...", "context": "...", "task": "response"|...}
//! response: {"value": 0.42} | {"vector": [0.1, ...]} | {"text": "..."}
//! ```
//!
//! `task` is only sent for generation. Scalars are returned exactly as the
//! service sent them; only embeddings are re-normalized.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{
    parse_importance_reply, ArousalScorer, Embedder, ExchangeText, Generator,
    ImportanceEstimator, PerplexityScorer, ProviderEndpoint, Task,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Arousal,
    Perplexity,
    Importance,
    Embedding,
    Generation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub kind: Kind,
    pub user_text: String,
    pub context: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub task: Option<Task>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

pub struct HttpProvider {
    endpoint: ProviderEndpoint,
    dimension: usize,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(endpoint: ProviderEndpoint, dimension: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint,
            dimension,
            agent,
        }
    }

    fn url(&self) -> String {
        format!("{}/score", self.endpoint.base_url.trim_end_matches('/'))
    }

    /// Send one request, retrying transport failures and 5xx replies.
    pub fn request(&self, req: &ScoreRequest) -> Result<ScoreResponse> {
        let url = self.url();
        let mut last = String::new();
        for attempt in 0..=self.endpoint.retry_limit {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
            }
            match self.agent.post(&url).send_json(req) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if status >= 500 {
                        last = format!("{url} answered {status}");
                        continue;
                    }
                    let body = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| Error::ProviderUnavailable(format!("{url}: {e}")))?;
                    if status >= 400 {
                        return Err(Error::ProviderUnavailable(format!(
                            "{url} rejected the request ({status}): {body}"
                        )));
                    }
                    return serde_json::from_str(&body).map_err(|e| Error::Parse {
                        raw: body.clone(),
                        reason: e.to_string(),
                    });
                }
                Err(e) => last = format!("{url}: {e}"),
            }
        }
        Err(Error::ProviderUnavailable(format!(
            "{last} (after {} attempts)",
            self.endpoint.retry_limit + 1
        )))
    }

    fn scalar(&self, kind: Kind, x: &ExchangeText) -> Result<f64> {
        x.validate()?;
        let resp = self.request(&ScoreRequest {
            kind,
            user_text: x.user_text.clone(),
            context: x.bot_context.clone(),
            task: None,
        })?;
        match resp.value {
            Some(v) if v.is_finite() => Ok(v),
            _ => Err(Error::Parse {
                raw: serde_json::to_string(&resp).unwrap_or_default(),
                reason: "expected a finite \"value\"".into(),
            }),
        }
    }
}

impl ArousalScorer for HttpProvider {
    fn score_arousal(&self, x: &ExchangeText) -> Result<f64> {
        self.scalar(Kind::Arousal, x)
    }
}

impl PerplexityScorer for HttpProvider {
    fn score_perplexity(&self, x: &ExchangeText) -> Result<f64> {
        let v = self.scalar(Kind::Perplexity, x)?;
        if v < 1.0 {
            return Err(Error::Parse {
                raw: v.to_string(),
                reason: "perplexity below 1".into(),
            });
        }
        Ok(v)
    }
}

impl ImportanceEstimator for HttpProvider {
    fn estimate_importance(&self, x: &ExchangeText) -> Result<f64> {
        x.validate()?;
        let resp = self.request(&ScoreRequest {
            kind: Kind::Importance,
            user_text: x.user_text.clone(),
            context: x.bot_context.clone(),
            task: None,
        })?;
        match (resp.value, resp.text) {
            (Some(v), _) if v.is_finite() => Ok(v),
            (_, Some(text)) => parse_importance_reply(&text),
            _ => Err(Error::Parse {
                raw: String::new(),
                reason: "expected \"value\" or \"text\"".into(),
            }),
        }
    }
}

impl Embedder for HttpProvider {
    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let resp = self.request(&ScoreRequest {
            kind: Kind::Embedding,
            user_text: text.to_string(),
            context: String::new(),
            task: None,
        })?;
        let v = resp.vector.ok_or_else(|| Error::Parse {
            raw: String::new(),
            reason: "expected \"vector\"".into(),
        })?;
        if v.len() != self.dimension {
            return Err(Error::Parse {
                raw: format!("vector of length {}", v.len()),
                reason: format!("expected dimension {}", self.dimension),
            });
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Parse {
                raw: format!("vector norm {norm}"),
                reason: "embedding must be finite and nonzero".into(),
            });
        }
        Ok(v.into_iter().map(|x| (x / norm) as f32).collect())
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

impl Generator for HttpProvider {
    fn complete(&self, task: Task, prompt: &str) -> Result<String> {
        let resp = self.request(&ScoreRequest {
            kind: Kind::Generation,
            user_text: prompt.to_string(),
            context: String::new(),
            task: Some(task),
        })?;
        resp.text.ok_or_else(|| Error::Generation("reply lacks \"text\"".into()))
    }
}
