//! Relevance search over retained memories.
//!
//! Candidates must clear a cosine threshold, then rank by
//! `cos + alpha * importance`. The top two feed retrieval-induced
//! forgetting: rank 1 is reinforced, rank 2 is recalled but left unused.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{MemoryId, MemoryRecord};
use crate::store::MemoryStore;

pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_K: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub query_embedding: Vec<f32>,
    pub k: usize,
    pub threshold: f64,
    pub alpha: f64,
}

impl RetrievalQuery {
    pub fn new(query_embedding: Vec<f32>) -> Self {
        Self {
            query_embedding,
            k: DEFAULT_K,
            threshold: DEFAULT_THRESHOLD,
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid(format!(
                "threshold must be in [0, 1], got {}",
                self.threshold
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub record_id: MemoryId,
    pub cos_sim: f64,
    pub final_score: f64,
    /// 1-based.
    pub rank: usize,
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("zero vector"));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn final_score(cos_sim: f64, importance: f64, alpha: f64) -> f64 {
    cos_sim + alpha * importance
}

/// Best first: higher score, then newer session, then smaller id.
pub fn rank_order(
    (score_a, session_a, id_a): (f64, u32, MemoryId),
    (score_b, session_b, id_b): (f64, u32, MemoryId),
) -> Ordering {
    score_b
        .total_cmp(&score_a)
        .then(session_b.cmp(&session_a))
        .then(id_a.cmp(&id_b))
}

/// Top-`k` records clearing the threshold; empty when nothing is relevant.
pub fn retrieve_top_k<'a, I>(records: I, q: &RetrievalQuery) -> Result<Vec<RetrievalResult>>
where
    I: IntoIterator<Item = &'a MemoryRecord>,
{
    q.validate()?;
    let mut scored = Vec::new();
    for r in records {
        let cos = cosine_similarity(&q.query_embedding, &r.embedding)?;
        if cos >= q.threshold {
            scored.push((r, cos, final_score(cos, r.importance, q.alpha)));
        }
    }
    scored.sort_by(|(ra, _, sa), (rb, _, sb)| {
        rank_order((*sa, ra.session_created, ra.id), (*sb, rb.session_created, rb.id))
    });
    Ok(scored
        .into_iter()
        .take(q.k)
        .enumerate()
        .map(|(i, (r, cos, score))| RetrievalResult {
            record_id: r.id,
            cos_sim: cos,
            final_score: score,
            rank: i + 1,
        })
        .collect())
}

/// Apply retrieval-induced forgetting counters for one turn.
///
/// Rank 1 gets `R1 += 1` and is marked used in `current_session`; rank 2
/// gets `R2 += 1` only. Nothing is mutated if any id is unknown.
pub fn record_rif(
    store: &mut MemoryStore,
    results: &[RetrievalResult],
    current_session: u32,
) -> Result<()> {
    for r in rif_updated(store, results, current_session)? {
        store.replace(r)?;
    }
    Ok(())
}

/// Records as they will be after [`record_rif`], without touching the store.
pub(crate) fn rif_updated(
    store: &MemoryStore,
    results: &[RetrievalResult],
    current_session: u32,
) -> Result<Vec<MemoryRecord>> {
    let mut out = Vec::new();
    for r in results.iter().take(2) {
        let mut rec = store
            .get(r.record_id)
            .cloned()
            .ok_or_else(|| Error::Consistency(format!("unknown memory {}", r.record_id)))?;
        if r.rank == 1 {
            rec.metrics.r1 += 1;
            rec.session_last_used = rec.session_last_used.max(current_session);
        } else {
            rec.metrics.r2 += 1;
        }
        out.push(rec);
    }
    Ok(out)
}
