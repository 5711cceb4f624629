//! Domain model and the pure formulas behind memory importance.
//!
//! A memory's strength is a weighted sum of five metrics, and its importance
//! follows the forgetting curve `exp(-dt / S)` where `dt` counts sessions
//! since the memory was last used.

use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Perplexity values above this are clamped before regularization.
pub const PERPLEXITY_CEILING: f64 = 160.0;

/// Strengths in `(0, STRENGTH_FLOOR)` are lifted to the floor.
pub const STRENGTH_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemoryId(pub u64);

impl fmt::Display for MemoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// The five raw metrics of one exchange.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricVector {
    /// Emotional arousal of the user utterance.
    #[serde(rename = "A")]
    pub arousal: f64,
    /// Perplexity of the user utterance given the chatbot's preceding one.
    #[serde(rename = "P")]
    pub perplexity: f64,
    /// Importance estimated by the language model.
    #[serde(rename = "L")]
    pub llm_importance: f64,
    /// Times this memory was the most relevant retrieval.
    #[serde(rename = "R1")]
    pub r1: u32,
    /// Times this memory was the runner-up retrieval.
    #[serde(rename = "R2")]
    pub r2: u32,
}

impl MetricVector {
    pub fn values(&self) -> MetricValues {
        MetricValues {
            arousal: self.arousal,
            perplexity: self.perplexity,
            llm_importance: self.llm_importance,
            r1: f64::from(self.r1),
            r2: f64::from(self.r2),
        }
    }
}

/// Real-valued view of the five metrics, as fed to [`compute_strength`].
///
/// Regularization turns the integer retrieval counts into reals, so the
/// regularized form lives here rather than in [`MetricVector`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricValues {
    #[serde(rename = "A")]
    pub arousal: f64,
    #[serde(rename = "P")]
    pub perplexity: f64,
    #[serde(rename = "L")]
    pub llm_importance: f64,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R2")]
    pub r2: f64,
}

impl MetricValues {
    pub fn splat(v: f64) -> Self {
        Self::from_array([v; 5])
    }

    pub fn to_array(self) -> [f64; 5] {
        [
            self.arousal,
            self.perplexity,
            self.llm_importance,
            self.r1,
            self.r2,
        ]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            arousal: a[0],
            perplexity: a[1],
            llm_importance: a[2],
            r1: a[3],
            r2: a[4],
        }
    }
}

impl Add for MetricValues {
    type Output = MetricValues;

    fn add(self, rhs: Self) -> Self {
        let (a, b) = (self.to_array(), rhs.to_array());
        Self::from_array(std::array::from_fn(|i| a[i] + b[i]))
    }
}

/// Metric weights plus the retrieval mixing coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    #[serde(rename = "w_A")]
    pub w_a: f64,
    #[serde(rename = "w_P")]
    pub w_p: f64,
    #[serde(rename = "w_L")]
    pub w_l: f64,
    #[serde(rename = "w_R1")]
    pub w_r1: f64,
    #[serde(rename = "w_R2")]
    pub w_r2: f64,
    /// Weight of importance in the final retrieval score.
    pub alpha: f64,
}

impl WeightVector {
    /// Weights fitted on annotated conversation data, with `alpha = 0.1`.
    pub const FITTED: WeightVector = WeightVector {
        w_a: 2.76,
        w_p: -0.28,
        w_l: 0.44,
        w_r1: 1.02,
        w_r2: -0.012,
        alpha: 0.1,
    };

    pub fn zero() -> Self {
        Self::from_metric_weights([0.0; 5], 0.0)
    }

    pub fn from_metric_weights(w: [f64; 5], alpha: f64) -> Self {
        Self {
            w_a: w[0],
            w_p: w[1],
            w_l: w[2],
            w_r1: w[3],
            w_r2: w[4],
            alpha,
        }
    }

    pub fn metric_weights(&self) -> [f64; 5] {
        [self.w_a, self.w_p, self.w_l, self.w_r1, self.w_r2]
    }

    pub fn validate(&self) -> Result<()> {
        if !self.metric_weights().iter().all(|w| w.is_finite()) || !self.alpha.is_finite() {
            return Err(Error::invalid("weights must be finite"));
        }
        if self.alpha < 0.0 {
            return Err(Error::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

impl Default for WeightVector {
    fn default() -> Self {
        Self::FITTED
    }
}

/// Elapsed time and strength floor for one importance evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportanceParams {
    /// Sessions since the memory was last used.
    pub delta_t: f64,
    pub strength_floor: f64,
}

impl ImportanceParams {
    pub fn new(delta_t: f64) -> Self {
        Self {
            delta_t,
            strength_floor: STRENGTH_FLOOR,
        }
    }

    pub fn importance(&self, strength: f64) -> Result<f64> {
        if !(self.strength_floor > 0.0) {
            return Err(Error::invalid("strength floor must be positive"));
        }
        if !self.delta_t.is_finite() || self.delta_t < 0.0 {
            return Err(Error::invalid(format!(
                "elapsed sessions must be finite and non-negative, got {}",
                self.delta_t
            )));
        }
        if strength.is_nan() {
            return Err(Error::invalid("strength is NaN"));
        }
        if strength <= 0.0 {
            return Ok(0.0);
        }
        Ok((-self.delta_t / strength.max(self.strength_floor)).exp())
    }
}

/// One stored chatbot-utterance / user-utterance pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: MemoryId,
    pub user_text: String,
    /// The chatbot utterance the user was replying to.
    pub bot_text: String,
    pub embedding: Vec<f32>,
    pub session_created: u32,
    pub session_last_used: u32,
    pub metrics: MetricVector,
    pub strength: f64,
    pub importance: f64,
    /// `false` once a forgetting pass has archived the record.
    pub retained: bool,
}

impl MemoryRecord {
    /// Text of the memory as it is inserted into the response prompt.
    pub fn render(&self) -> String {
        if self.bot_text.is_empty() {
            format!("User: {}", self.user_text)
        } else {
            format!("Chatbot: {}\nUser: {}", self.bot_text, self.user_text)
        }
    }
}

/// `S = w_A*A + w_P*P + w_L*L + w_R1*R1 - w_R2*R2`.
///
/// The runner-up count enters with a minus sign; a negative `w_R2` therefore
/// makes its net contribution positive.
pub fn compute_strength(metrics: &MetricValues, weights: &WeightVector) -> Result<f64> {
    let m = metrics.to_array();
    let w = weights.metric_weights();
    if !m.iter().chain(w.iter()).all(|v| v.is_finite()) {
        return Err(Error::invalid("non-finite metric or weight"));
    }
    Ok(w[0] * m[0] + w[1] * m[1] + w[2] * m[2] + w[3] * m[3] - w[4] * m[4])
}

/// Forgetting-curve importance `exp(-delta_t / S)`; zero for `S <= 0`.
pub fn compute_importance(strength: f64, delta_t: f64) -> Result<f64> {
    ImportanceParams::new(delta_t).importance(strength)
}

pub fn clamp_perplexity(raw_ppl: f64) -> Result<f64> {
    if raw_ppl.is_nan() || raw_ppl < 0.0 {
        return Err(Error::invalid(format!("perplexity must be >= 0, got {raw_ppl}")));
    }
    Ok(raw_ppl.min(PERPLEXITY_CEILING))
}

/// Statistics every column is rescaled to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationTargets {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Default for RegularizationTargets {
    fn default() -> Self {
        Self {
            min: 0.0,
            mean: 0.5,
            max: 1.0,
        }
    }
}

/// Calibration of one metric column.
///
/// The column is mapped by two linear segments joined at the calibration
/// mean. `knot` is the image of that mean, solved so the calibration column
/// lands exactly on the target mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub knot: f64,
}

impl ColumnStats {
    fn fit(column: &[f64], targets: &RegularizationTargets) -> Self {
        let n = column.len() as f64;
        let min = column.iter().copied().fold(f64::INFINITY, f64::min);
        let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = column.iter().sum::<f64>() / n;
        if min == max {
            return Self {
                min,
                mean,
                max,
                knot: targets.mean,
            };
        }
        // mean is strictly inside (min, max) here
        let mean = mean.clamp(min, max);
        let (a, b) = (targets.min, targets.max);
        // sum(out) = fixed + knot * slope, linear in the knot image
        let mut fixed = 0.0;
        let mut slope = 0.0;
        for &x in column {
            if x <= mean {
                let u = (x - min) / (mean - min);
                fixed += a * (1.0 - u);
                slope += u;
            } else {
                let v = (x - mean) / (max - mean);
                fixed += v * b;
                slope += 1.0 - v;
            }
        }
        let mut knot = if slope > 0.0 {
            (n * targets.mean - fixed) / slope
        } else {
            targets.mean
        };
        let margin = 1e-6 * (b - a);
        if knot < a + margin || knot > b - margin {
            log::warn!(
                "column too skewed to reach target mean {} (knot {knot}); clamping",
                targets.mean
            );
            knot = knot.clamp(a + margin, b - margin);
        }
        Self {
            min,
            mean,
            max,
            knot,
        }
    }

    fn apply(&self, x: f64, targets: &RegularizationTargets) -> f64 {
        if self.min == self.max {
            return targets.mean;
        }
        if x <= self.mean {
            let u = (x - self.min) / (self.mean - self.min);
            targets.min + u * (self.knot - targets.min)
        } else {
            let v = (x - self.mean) / (self.max - self.mean);
            self.knot + v * (targets.max - self.knot)
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.min == self.max
    }
}

/// Per-column calibration for the five metrics (A, P, L, R1, R2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStatistics {
    pub columns: [ColumnStats; 5],
    #[serde(default)]
    pub targets: RegularizationTargets,
}

impl MetricStatistics {
    /// Calibrate against a corpus. Perplexities should already be clamped.
    pub fn from_batch(batch: &[MetricVector]) -> Result<Self> {
        Self::from_batch_with_targets(batch, RegularizationTargets::default())
    }

    pub fn from_batch_with_targets(
        batch: &[MetricVector],
        targets: RegularizationTargets,
    ) -> Result<Self> {
        let rows: Vec<[f64; 5]> = batch.iter().map(|m| m.values().to_array()).collect();
        Self::from_rows(&rows, targets)
    }

    pub fn from_rows(rows: &[[f64; 5]], targets: RegularizationTargets) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("calibration batch is empty"));
        }
        if !rows.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::invalid("calibration batch contains non-finite metrics"));
        }
        if !(targets.min < targets.mean && targets.mean < targets.max) {
            return Err(Error::invalid("targets must satisfy min < mean < max"));
        }
        let columns = std::array::from_fn(|c| {
            let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            ColumnStats::fit(&col, &targets)
        });
        Ok(Self { columns, targets })
    }

    pub fn apply(&self, metrics: MetricValues) -> MetricValues {
        let m = metrics.to_array();
        MetricValues::from_array(std::array::from_fn(|c| {
            self.columns[c].apply(m[c], &self.targets)
        }))
    }
}

const METRIC_NAMES: [&str; 5] = ["A", "P", "L", "R1", "R2"];

/// Rescale each metric column onto the common target statistics.
pub fn regularize_metrics(
    batch: &[MetricVector],
    reference: &MetricStatistics,
) -> Vec<MetricValues> {
    for (name, col) in METRIC_NAMES.iter().zip(&reference.columns) {
        if col.is_degenerate() {
            log::warn!("metric {name} is constant in the reference; mapping to target mean");
        }
    }
    batch.iter().map(|m| reference.apply(m.values())).collect()
}

/// Regularize a batch against its own statistics.
pub fn self_regularize(batch: &[MetricVector]) -> Result<Vec<MetricValues>> {
    let reference = MetricStatistics::from_batch(batch)?;
    Ok(regularize_metrics(batch, &reference))
}
