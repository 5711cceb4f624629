//! Engine and service configuration, read from JSON.
//!
//! ```json
//! {
//!   "strategy": "lufy",
//!   "retain_fraction": 0.1,
//!   "k": 2,
//!   "threshold": 0.8,
//!   "alpha": 0.1,
//!   "weights": {"w_A": 2.76, "w_P": -0.28, "w_L": 0.44, "w_R1": 1.02, "w_R2": -0.012, "alpha": 0.1},
//!   "providers": {"embedder": {"type": "http", "base_url": "http://127.0.0.1:9000"}},
//!   "store_path": "stores/alice-lufy.jsonl"
//! }
//! ```
//!
//! Every field is optional. A top-level `alpha` overrides `weights.alpha`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forgetting::{PassOptions, Strategy, StrategyKind, DEFAULT_RETAIN_FRACTION};
use crate::memory::{MetricStatistics, WeightVector};
use crate::retrieval::{RetrievalQuery, DEFAULT_K, DEFAULT_THRESHOLD};
use crate::scoring::ProvidersConfig;

pub const DEFAULT_DIMENSION: usize = 256;
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub strategy: Strategy,
    pub retain_fraction: f64,
    pub k: usize,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub weights: WeightVector,
    /// Whether LUFY measures elapsed sessions from the last recall.
    pub reset_on_recall: bool,
    pub providers: ProvidersConfig,
    /// Absent means an in-memory store.
    pub store_path: Option<PathBuf>,
    pub embedding_dim: usize,
    pub bind: String,
    /// Fixed regularization reference; computed per pass when absent.
    pub calibration: Option<MetricStatistics>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Lufy,
            retain_fraction: DEFAULT_RETAIN_FRACTION,
            k: DEFAULT_K,
            threshold: DEFAULT_THRESHOLD,
            alpha: None,
            weights: WeightVector::FITTED,
            reset_on_recall: true,
            providers: ProvidersConfig::default(),
            store_path: None,
            embedding_dim: DEFAULT_DIMENSION,
            bind: DEFAULT_BIND.into(),
            calibration: None,
        }
    }
}

impl EngineConfig {
    pub fn for_strategy(strategy: Strategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Weights with the effective alpha applied.
    pub fn effective_weights(&self) -> WeightVector {
        WeightVector {
            alpha: self.alpha.unwrap_or(self.weights.alpha),
            ..self.weights
        }
    }

    /// Importance boost used at retrieval time. Zero unless the strategy
    /// ranks by importance.
    pub fn retrieval_alpha(&self) -> f64 {
        if self.strategy.boosts_retrieval() {
            self.effective_weights().alpha
        } else {
            0.0
        }
    }

    pub fn query(&self, embedding: Vec<f32>) -> RetrievalQuery {
        RetrievalQuery {
            query_embedding: embedding,
            k: self.k,
            threshold: self.threshold,
            alpha: self.retrieval_alpha(),
        }
    }

    pub fn strategy_kind(&self) -> StrategyKind {
        StrategyKind {
            strategy: self.strategy,
            retain_fraction: self.retain_fraction,
        }
    }

    pub fn pass_options(&self) -> PassOptions {
        PassOptions {
            weights: self.effective_weights(),
            reset_on_recall: self.reset_on_recall,
            calibration: self.calibration.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.strategy_kind().validate().map_err(cfg)?;
        self.effective_weights().validate().map_err(cfg)?;
        self.query(vec![1.0]).validate().map_err(cfg)?;
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        Ok(())
    }
}
