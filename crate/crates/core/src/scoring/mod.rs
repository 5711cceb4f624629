//! Provider contracts for every externally modeled signal.
//!
//! Arousal, perplexity, LLM-estimated importance, embeddings and text
//! generation are all behind small traits. Each has a deterministic offline
//! stub ([`stub`]) and a JSON-over-HTTP adapter ([`http`]).

pub mod http;
pub mod prompt;
pub mod stub;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::session::Utterance;

pub use http::HttpProvider;
pub use prompt::{parse_importance_reply, EMPTY_MEMORY_MARKER};

/// A user utterance together with the chatbot utterance it answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeText {
    pub user_text: String,
    pub bot_context: String,
}

impl ExchangeText {
    pub fn new(user_text: impl Into<String>, bot_context: impl Into<String>) -> Result<Self> {
        let x = Self {
            user_text: user_text.into(),
            bot_context: bot_context.into(),
        };
        x.validate()?;
        Ok(x)
    }

    pub fn validate(&self) -> Result<()> {
        if self.user_text.trim().is_empty() {
            return Err(Error::invalid("user_text must be non-empty"));
        }
        Ok(())
    }
}

/// Connection settings for a remote provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderEndpoint {
    pub base_url: String,
    /// Milliseconds per request.
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry_limit: u32,
}

fn default_timeout_ms() -> u64 {
    10_000
}

impl ProviderEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_ms: default_timeout_ms(),
            retry_limit: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(Error::Config("provider timeout must be > 0".into()));
        }
        if self.base_url.is_empty() {
            return Err(Error::Config("provider base_url is empty".into()));
        }
        Ok(())
    }
}

/// What a generation request is for. Remote generators receive it as `task`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Response,
    Importance,
    Summary,
}

pub trait ArousalScorer: Send + Sync {
    fn score_arousal(&self, x: &ExchangeText) -> Result<f64>;
}

pub trait PerplexityScorer: Send + Sync {
    fn score_perplexity(&self, x: &ExchangeText) -> Result<f64>;
}

pub trait ImportanceEstimator: Send + Sync {
    fn estimate_importance(&self, x: &ExchangeText) -> Result<f64>;
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f32>>;
    fn dimension(&self) -> usize;
}

pub trait Generator: Send + Sync {
    fn complete(&self, task: Task, prompt: &str) -> Result<String>;
}

/// Asks a [`Generator`] to rate an utterance and parses `importance: <x>`.
pub struct LlmImportance {
    generator: Arc<dyn Generator>,
}

impl LlmImportance {
    pub fn new(generator: Arc<dyn Generator>) -> Self {
        Self { generator }
    }
}

impl ImportanceEstimator for LlmImportance {
    fn estimate_importance(&self, x: &ExchangeText) -> Result<f64> {
        x.validate()?;
        let reply = self
            .generator
            .complete(Task::Importance, &prompt::importance_prompt(x))?;
        parse_importance_reply(&reply)
    }
}

/// Build the response prompt and ask the generator for a reply.
///
/// Only the last five context utterances are included.
pub fn generate_response(
    generator: &dyn Generator,
    summary: &str,
    context: &[Utterance],
    memory: Option<&str>,
) -> Result<String> {
    let prompt = prompt::response_prompt(summary, context, memory);
    let reply = generator.complete(Task::Response, &prompt)?;
    if reply.trim().is_empty() {
        return Err(Error::Generation("generator returned an empty reply".into()));
    }
    Ok(reply)
}

/// Uses `primary`, switching to `fallback` only when `primary` is unreachable.
pub struct Fallback<P, F> {
    pub primary: P,
    pub fallback: F,
}

macro_rules! fallback_impl {
    ($trait:ident, $method:ident, $arg:ty, $out:ty) => {
        impl<P: $trait, F: $trait> $trait for Fallback<P, F> {
            fn $method(&self, x: $arg) -> Result<$out> {
                match self.primary.$method(x) {
                    Err(Error::ProviderUnavailable(msg)) => {
                        log::warn!("{msg}; using fallback provider");
                        self.fallback.$method(x)
                    }
                    other => other,
                }
            }
        }
    };
}

fallback_impl!(ArousalScorer, score_arousal, &ExchangeText, f64);
fallback_impl!(PerplexityScorer, score_perplexity, &ExchangeText, f64);
fallback_impl!(ImportanceEstimator, estimate_importance, &ExchangeText, f64);

impl<P: Embedder, F: Embedder> Embedder for Fallback<P, F> {
    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        match self.primary.embed(text) {
            Err(Error::ProviderUnavailable(msg)) => {
                log::warn!("{msg}; using fallback embedder");
                self.fallback.embed(text)
            }
            other => other,
        }
    }

    fn dimension(&self) -> usize {
        self.primary.dimension()
    }
}

impl<P: Generator, F: Generator> Generator for Fallback<P, F> {
    fn complete(&self, task: Task, prompt: &str) -> Result<String> {
        match self.primary.complete(task, prompt) {
            Err(Error::ProviderUnavailable(msg)) => {
                log::warn!("{msg}; using fallback generator");
                self.fallback.complete(task, prompt)
            }
            other => other,
        }
    }
}

/// The full set of providers one engine uses.
#[derive(Clone)]
pub struct Providers {
    pub arousal: Arc<dyn ArousalScorer>,
    pub perplexity: Arc<dyn PerplexityScorer>,
    pub importance: Arc<dyn ImportanceEstimator>,
    pub embedder: Arc<dyn Embedder>,
    pub generator: Arc<dyn Generator>,
}

impl Providers {
    /// All-stub providers with the given embedding dimension.
    pub fn stub(dimension: usize) -> Self {
        Self {
            arousal: Arc::new(stub::LexiconArousal),
            perplexity: Arc::new(stub::BigramPerplexity::default()),
            importance: Arc::new(stub::LengthImportance::default()),
            embedder: Arc::new(stub::HashedEmbedder::new(dimension)),
            generator: Arc::new(stub::EchoGenerator),
        }
    }

    pub fn from_config(config: &ProvidersConfig, dimension: usize) -> Result<Self> {
        let stubs = Self::stub(dimension);
        let http = |e: &ProviderEndpoint| -> Result<Arc<HttpProvider>> {
            e.validate()?;
            Ok(Arc::new(HttpProvider::new(e.clone(), dimension)))
        };
        let fb = config.fallback_to_stub;

        macro_rules! pick {
            ($field:ident, $stub:expr, $dyn:ty) => {
                match &config.$field {
                    ProviderChoice::Stub => $stub,
                    ProviderChoice::Http(e) if fb => Arc::new(Fallback {
                        primary: ArcProvider(http(e)?),
                        fallback: ArcProvider($stub),
                    }) as Arc<$dyn>,
                    ProviderChoice::Http(e) => http(e)? as Arc<$dyn>,
                    ProviderChoice::Llm => {
                        return Err(Error::Config(format!(
                            "provider kind \"llm\" is only valid for importance, not {}",
                            stringify!($field)
                        )))
                    }
                }
            };
        }

        let generator: Arc<dyn Generator> =
            pick!(generator, stubs.generator.clone(), dyn Generator);
        let importance: Arc<dyn ImportanceEstimator> = match &config.importance {
            ProviderChoice::Llm => Arc::new(LlmImportance::new(generator.clone())),
            ProviderChoice::Stub => stubs.importance.clone(),
            ProviderChoice::Http(e) if fb => Arc::new(Fallback {
                primary: ArcProvider(http(e)?),
                fallback: ArcProvider(stubs.importance.clone()),
            }),
            ProviderChoice::Http(e) => http(e)?,
        };
        let embedder: Arc<dyn Embedder> = pick!(embedder, stubs.embedder.clone(), dyn Embedder);
        if embedder.dimension() != dimension {
            return Err(Error::Config("embedder dimension mismatch".into()));
        }
        Ok(Self {
            arousal: pick!(arousal, stubs.arousal.clone(), dyn ArousalScorer),
            perplexity: pick!(perplexity, stubs.perplexity.clone(), dyn PerplexityScorer),
            importance,
            embedder,
            generator,
        })
    }
}

/// Newtype so `Arc<T>` and `Arc<dyn Trait>` can sit inside [`Fallback`].
pub struct ArcProvider<T: ?Sized>(pub Arc<T>);

impl<T: ArousalScorer + ?Sized> ArousalScorer for ArcProvider<T> {
    fn score_arousal(&self, x: &ExchangeText) -> Result<f64> {
        self.0.score_arousal(x)
    }
}
impl<T: PerplexityScorer + ?Sized> PerplexityScorer for ArcProvider<T> {
    fn score_perplexity(&self, x: &ExchangeText) -> Result<f64> {
        self.0.score_perplexity(x)
    }
}
impl<T: ImportanceEstimator + ?Sized> ImportanceEstimator for ArcProvider<T> {
    fn estimate_importance(&self, x: &ExchangeText) -> Result<f64> {
        self.0.estimate_importance(x)
    }
}
impl<T: Embedder + ?Sized> Embedder for ArcProvider<T> {
    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        self.0.embed(text)
    }
    fn dimension(&self) -> usize {
        self.0.dimension()
    }
}
impl<T: Generator + ?Sized> Generator for ArcProvider<T> {
    fn complete(&self, task: Task, prompt: &str) -> Result<String> {
        self.0.complete(task, prompt)
    }
}

/// Which implementation backs one provider slot.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProviderChoice {
    #[default]
    Stub,
    Http(ProviderEndpoint),
    /// Importance only: prompt the configured generator.
    Llm,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProvidersConfig {
    pub arousal: ProviderChoice,
    pub perplexity: ProviderChoice,
    pub importance: ProviderChoice,
    pub embedder: ProviderChoice,
    pub generator: ProviderChoice,
    /// Fall back to the stub when a remote provider is unreachable.
    pub fallback_to_stub: bool,
}
