//! Session-end forgetting.
//!
//! Every retained memory is scored, ranked by importance and only the top
//! `ceil(retain_fraction * n)` survive. Discarded memories are archived with
//! `retained = false` rather than deleted.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{
    compute_importance, compute_strength, regularize_metrics, MemoryId, MemoryRecord,
    MetricStatistics, MetricValues, MetricVector, WeightVector,
};
use crate::retrieval::rank_order;
use crate::store::MemoryStore;

pub const DEFAULT_RETAIN_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Keeps everything; retrieval by cosine only.
    Naive,
    /// Strength is one plus the recall count; retrieval by cosine only.
    Memorybank,
    /// Weighted multi-metric strength; retrieval boosted by importance.
    Lufy,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Naive, Strategy::Memorybank, Strategy::Lufy];

    /// Whether importance enters the retrieval score.
    pub fn boosts_retrieval(self) -> bool {
        self == Strategy::Lufy
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Naive => "naive",
            Strategy::Memorybank => "memorybank",
            Strategy::Lufy => "lufy",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(Strategy::Naive),
            "memorybank" => Ok(Strategy::Memorybank),
            "lufy" => Ok(Strategy::Lufy),
            other => Err(Error::invalid(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyKind {
    pub strategy: Strategy,
    pub retain_fraction: f64,
}

impl StrategyKind {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            retain_fraction: DEFAULT_RETAIN_FRACTION,
        }
    }

    pub fn effective_fraction(&self) -> f64 {
        match self.strategy {
            Strategy::Naive => 1.0,
            _ => self.retain_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.retain_fraction > 0.0 && self.retain_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "retain_fraction must be in (0, 1], got {}",
                self.retain_fraction
            )));
        }
        Ok(())
    }
}

/// Inputs a pass needs beyond the strategy itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassOptions {
    pub weights: WeightVector,
    /// LUFY only: measure elapsed time from the last rank-1 recall rather
    /// than from creation. MemoryBank always resets.
    pub reset_on_recall: bool,
    /// Regularization reference. When absent, the pass calibrates on the
    /// memories it is ranking.
    pub calibration: Option<MetricStatistics>,
}

impl Default for PassOptions {
    fn default() -> Self {
        Self {
            weights: WeightVector::FITTED,
            reset_on_recall: true,
            calibration: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    pub session: u32,
    pub strategy: Strategy,
    pub considered: usize,
    pub retained: usize,
    pub discarded: usize,
    pub retained_ids: Vec<MemoryId>,
    /// `retained / considered`.
    pub pass_rate: f64,
    /// `retained / all memories ever stored`.
    pub cumulative_rate: f64,
}

/// Number of survivors: `ceil(fraction * n)`, ignoring float noise.
pub fn retain_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    let c = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (c as usize).min(n)
}

/// Sessions elapsed for importance at the end of `current_session`.
///
/// A memory not recalled during the session it is judged in is assigned
/// the one-session lag between use and the next judgement.
pub fn elapsed_sessions(record: &MemoryRecord, current_session: u32, reset_on_recall: bool) -> f64 {
    let anchor = if reset_on_recall {
        record.session_last_used
    } else {
        record.session_created
    };
    let dt = current_session.saturating_sub(anchor);
    if dt == 0 {
        let recalled_now = reset_on_recall
            && record.session_last_used == current_session
            && (record.session_created < current_session || record.metrics.r1 > 0);
        if !recalled_now {
            return 1.0;
        }
    }
    f64::from(dt)
}

/// `S = 1 + recalls`.
pub fn memorybank_strength(record: &MemoryRecord) -> f64 {
    1.0 + f64::from(record.metrics.r1)
}

pub fn lufy_strength(metrics: &MetricValues, weights: &WeightVector) -> Result<f64> {
    compute_strength(metrics, weights)
}

/// Strength and importance of one memory under a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: MemoryId,
    pub strength: f64,
    pub importance: f64,
}

/// Score `records` without mutating anything.
pub fn score_records(
    records: &[&MemoryRecord],
    strategy: Strategy,
    opts: &PassOptions,
    current_session: u32,
) -> Result<Vec<Scored>> {
    match strategy {
        Strategy::Naive => Ok(records
            .iter()
            .map(|r| Scored {
                id: r.id,
                strength: r.strength,
                importance: r.importance,
            })
            .collect()),
        Strategy::Memorybank => records
            .iter()
            .map(|r| {
                let s = memorybank_strength(r);
                Ok(Scored {
                    id: r.id,
                    strength: s,
                    importance: compute_importance(s, elapsed_sessions(r, current_session, true))?,
                })
            })
            .collect(),
        Strategy::Lufy => {
            if records.is_empty() {
                return Ok(Vec::new());
            }
            let metrics: Vec<MetricVector> = records.iter().map(|r| r.metrics).collect();
            let own;
            let reference = match &opts.calibration {
                Some(c) => c,
                None => {
                    own = MetricStatistics::from_batch(&metrics)?;
                    &own
                }
            };
            let regularized = regularize_metrics(&metrics, reference);
            records
                .iter()
                .zip(regularized)
                .map(|(r, m)| {
                    let s = lufy_strength(&m, &opts.weights)?;
                    let dt = elapsed_sessions(r, current_session, opts.reset_on_recall);
                    Ok(Scored {
                        id: r.id,
                        strength: s,
                        importance: compute_importance(s, dt)?,
                    })
                })
                .collect()
        }
    }
}

/// Outcome of ranking, before it is written to a store.
#[derive(Debug, Clone, PartialEq)]
pub struct PassPlan {
    pub scored: Vec<Scored>,
    /// Best first.
    pub ranking: Vec<MemoryId>,
    pub keep: usize,
}

impl PassPlan {
    pub fn retained_ids(&self) -> &[MemoryId] {
        &self.ranking[..self.keep]
    }
}

pub fn plan_pass(
    records: &[&MemoryRecord],
    kind: &StrategyKind,
    opts: &PassOptions,
    current_session: u32,
) -> Result<PassPlan> {
    kind.validate()?;
    let scored = score_records(records, kind.strategy, opts, current_session)?;
    let mut order: Vec<(f64, u32, MemoryId)> = records
        .iter()
        .zip(&scored)
        .map(|(r, s)| (s.importance, r.session_created, r.id))
        .collect();
    order.sort_by(|a, b| rank_order(*a, *b));
    let keep = retain_count(kind.effective_fraction(), records.len());
    Ok(PassPlan {
        scored,
        ranking: order.into_iter().map(|(_, _, id)| id).collect(),
        keep,
    })
}

/// Rank every retained memory and archive all but the top fraction.
pub fn run_forgetting_pass(
    store: &mut MemoryStore,
    kind: &StrategyKind,
    opts: &PassOptions,
    current_session: u32,
) -> Result<ForgettingReport> {
    let (report, updates) = prepare_pass(store, kind, opts, current_session)?;
    store.replace_all(updates)?;
    Ok(report)
}

/// The report and updated records of a pass, leaving `store` untouched.
pub(crate) fn prepare_pass(
    store: &MemoryStore,
    kind: &StrategyKind,
    opts: &PassOptions,
    current_session: u32,
) -> Result<(ForgettingReport, Vec<MemoryRecord>)> {
    let considered: Vec<&MemoryRecord> = store.index().collect();
    let plan = plan_pass(&considered, kind, opts, current_session)?;
    let keep: HashSet<MemoryId> = plan.retained_ids().iter().copied().collect();
    let mut updates = Vec::with_capacity(considered.len());
    if kind.strategy != Strategy::Naive {
        for (r, s) in considered.iter().zip(&plan.scored) {
            let mut r = (*r).clone();
            r.strength = s.strength;
            r.importance = s.importance;
            r.retained = keep.contains(&r.id);
            updates.push(r);
        }
    }
    let n = considered.len();
    let total = store.len();
    let report = ForgettingReport {
        session: current_session,
        strategy: kind.strategy,
        considered: n,
        retained: plan.keep,
        discarded: n - plan.keep,
        retained_ids: plan.retained_ids().to_vec(),
        pass_rate: if n == 0 { 0.0 } else { plan.keep as f64 / n as f64 },
        cumulative_rate: if total == 0 {
            0.0
        } else {
            plan.keep as f64 / total as f64
        },
    };
    Ok((report, updates))
}
