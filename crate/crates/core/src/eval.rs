//! Evaluation: QA scoring, threshold sweeps, top-k hit ratios, agreement
//! with annotators and weight ablations.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::ChatEngine;
use crate::error::{Error, Result};
use crate::forgetting::ForgettingReport;
use crate::memory::{MemoryId, WeightVector};
use crate::retrieval::{cosine_similarity, final_score, rank_order};
use crate::scoring::Embedder;
use crate::session::QAPair;
use crate::store::MemoryStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAVerdict {
    pub question: String,
    pub model_answer: String,
    /// Retrieval returned at least one memory.
    pub attempted: bool,
    pub correct: bool,
    pub session_of_origin: u32,
}

/// Decides whether an answer is right.
pub trait Judge {
    fn judge(&self, qa: &QAPair, answer: &str) -> Result<bool>;
}

/// Gold answer contained in the model answer after case folding and
/// punctuation stripping, on word boundaries.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContainmentJudge;

pub fn normalize(text: &str) -> String {
    text.chars()
        .map(|c| if c.is_alphanumeric() { c.to_lowercase().next().unwrap_or(c) } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

impl Judge for ContainmentJudge {
    fn judge(&self, qa: &QAPair, answer: &str) -> Result<bool> {
        let gold = normalize(&qa.gold_answer);
        if gold.is_empty() {
            return Ok(false);
        }
        Ok(format!(" {} ", normalize(answer)).contains(&format!(" {gold} ")))
    }
}

/// Ask the engine read-only and judge the reply.
pub fn answer_qa(engine: &ChatEngine, qa: &QAPair, judge: &dyn Judge) -> Result<QAVerdict> {
    let answer = engine.answer(&qa.question)?;
    let attempted = !answer.retrieved.is_empty();
    let correct = attempted && judge.judge(qa, &answer.text)?;
    Ok(QAVerdict {
        question: qa.question.clone(),
        model_answer: answer.text,
        attempted,
        correct,
        session_of_origin: qa.session_of_origin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    /// `None` when nothing was attempted.
    pub precision: Option<f64>,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn prf_from_counts(total: usize, attempted: usize, correct: usize) -> Result<Prf> {
    if total == 0 {
        return Err(Error::invalid("no verdicts"));
    }
    if correct > attempted || attempted > total {
        return Err(Error::invalid("need correct <= attempted <= total"));
    }
    let precision = (attempted > 0).then(|| correct as f64 / attempted as f64);
    let recall = correct as f64 / total as f64;
    Ok(Prf {
        precision,
        recall,
        f1: f1(precision.unwrap_or(0.0), recall),
    })
}

pub fn score_prf(verdicts: &[QAVerdict]) -> Result<Prf> {
    if let Some(v) = verdicts.iter().find(|v| v.correct && !v.attempted) {
        return Err(Error::Consistency(format!("{:?} is correct but unattempted", v.question)));
    }
    let attempted = verdicts.iter().filter(|v| v.attempted).count();
    let correct = verdicts.iter().filter(|v| v.correct).count();
    prf_from_counts(verdicts.len(), attempted, correct)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPrf {
    pub session: u32,
    pub questions: usize,
    pub prf: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub per_session: Vec<SessionPrf>,
    /// Mean of the per-session values; precision over sessions that have one.
    pub average: Prf,
    pub overall: Prf,
}

pub fn qa_report(verdicts: &[QAVerdict]) -> Result<QaReport> {
    let overall = score_prf(verdicts)?;
    let mut groups: BTreeMap<u32, Vec<QAVerdict>> = BTreeMap::new();
    for v in verdicts {
        groups.entry(v.session_of_origin).or_default().push(v.clone());
    }
    let mut per_session = Vec::new();
    for (session, vs) in groups {
        per_session.push(SessionPrf {
            session,
            questions: vs.len(),
            prf: score_prf(&vs)?,
        });
    }
    let n = per_session.len() as f64;
    let precisions: Vec<f64> = per_session.iter().filter_map(|s| s.prf.precision).collect();
    let average = Prf {
        precision: (!precisions.is_empty())
            .then(|| precisions.iter().sum::<f64>() / precisions.len() as f64),
        recall: per_session.iter().map(|s| s.prf.recall).sum::<f64>() / n,
        f1: per_session.iter().map(|s| s.prf.f1).sum::<f64>() / n,
    };
    Ok(QaReport {
        per_session,
        average,
        overall,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Ranked `(id, cos, score)` over the retained index, best first.
fn rank_all(store: &MemoryStore, query: &[f32], alpha: f64) -> Result<Vec<(MemoryId, f64)>> {
    let mut scored = Vec::new();
    for r in store.index() {
        let cos = cosine_similarity(query, &r.embedding)?;
        scored.push((final_score(cos, r.importance, alpha), r.session_created, r.id, cos));
    }
    scored.sort_by(|a, b| rank_order((a.0, a.1, a.2), (b.0, b.1, b.2)));
    Ok(scored.into_iter().map(|(_, _, id, cos)| (id, cos)).collect())
}

fn annotated(qa: &[QAPair]) -> Vec<(&QAPair, MemoryId)> {
    qa.iter()
        .filter_map(|q| match q.gold_memory_id {
            Some(id) => Some((q, id)),
            None => {
                log::warn!("skipping {:?}: no gold memory annotated", q.question);
                None
            }
        })
        .collect()
}

/// Retrieval-only PRF per threshold.
///
/// For each question the top `k` memories are taken by final score, then
/// those below the threshold are dropped. A question is attempted if any
/// survive and correct if the gold memory survives. The candidate set only
/// shrinks as the threshold rises, so recall never increases.
pub fn sweep_thresholds(
    qa: &[QAPair],
    store: &MemoryStore,
    embedder: &dyn Embedder,
    thresholds: &[f64],
    k: usize,
    alpha: f64,
) -> Result<Vec<SweepPoint>> {
    let items = annotated(qa);
    let mut ranked = Vec::with_capacity(items.len());
    for (q, gold) in &items {
        let mut top = rank_all(store, &embedder.embed(&q.question)?, alpha)?;
        top.truncate(k);
        ranked.push((top, *gold));
    }
    let mut ts = thresholds.to_vec();
    ts.sort_by(f64::total_cmp);
    Ok(ts
        .into_iter()
        .map(|t| {
            let (mut attempted, mut correct) = (0usize, 0usize);
            for (top, gold) in &ranked {
                let kept: Vec<_> = top.iter().filter(|(_, cos)| *cos >= t).collect();
                if !kept.is_empty() {
                    attempted += 1;
                }
                if kept.iter().any(|(id, _)| id == gold) {
                    correct += 1;
                }
            }
            let precision = if attempted > 0 { correct as f64 / attempted as f64 } else { 0.0 };
            let recall = if ranked.is_empty() { 0.0 } else { correct as f64 / ranked.len() as f64 };
            SweepPoint {
                threshold: t,
                precision,
                recall,
                f1: f1(precision, recall),
            }
        })
        .collect())
}

/// Fraction of annotated questions whose gold memory ranks within `k`, for
/// `k = 1..=k_max`. No threshold is applied.
pub fn topk_hit_ratio(
    qa: &[QAPair],
    store: &MemoryStore,
    embedder: &dyn Embedder,
    k_max: usize,
    alpha: f64,
) -> Result<Vec<f64>> {
    let items = annotated(qa);
    if items.is_empty() {
        return Ok(vec![0.0; k_max]);
    }
    let mut hits = vec![0usize; k_max];
    for (q, gold) in &items {
        let ranked = rank_all(store, &embedder.embed(&q.question)?, alpha)?;
        if let Some(pos) = ranked.iter().position(|(id, _)| id == gold) {
            for h in hits.iter_mut().skip(pos) {
                *h += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / items.len() as f64).collect())
}

/// Share of retained memories that annotators marked important.
pub fn agreement_probability(retained: &[MemoryId], annotations: &HashMap<MemoryId, bool>) -> Result<f64> {
    if retained.is_empty() {
        return Err(Error::invalid("no retained memories"));
    }
    let mut positive = 0usize;
    for id in retained {
        match annotations.get(id) {
            Some(true) => positive += 1,
            Some(false) => {}
            None => return Err(Error::Consistency(format!("memory {id} is not annotated"))),
        }
    }
    Ok(positive as f64 / retained.len() as f64)
}

/// Zero the named weight components (`A`, `P`, `L`, `R1`, `R2`).
pub fn ablate(weights: &WeightVector, zeroed: &[&str]) -> Result<WeightVector> {
    let mut w = *weights;
    for s in zeroed {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => w.w_a = 0.0,
            "P" => w.w_p = 0.0,
            "L" => w.w_l = 0.0,
            "R1" => w.w_r1 = 0.0,
            "R2" => w.w_r2 = 0.0,
            other => return Err(Error::invalid(format!("unknown metric symbol {other:?}"))),
        }
    }
    Ok(w)
}

/// Fleiss' kappa. `counts[i][j]` is how many raters put item `i` in
/// category `j`; every item must have the same number of raters.
///
/// When all ratings fall into one category the expected agreement is 1 and
/// kappa is taken to be 1.
pub fn fleiss_kappa(counts: &[Vec<usize>]) -> Result<f64> {
    let first = counts.first().ok_or_else(|| Error::invalid("no items"))?;
    let raters: usize = first.iter().sum();
    let categories = first.len();
    if raters < 2 {
        return Err(Error::invalid("need at least two raters"));
    }
    if counts.iter().any(|row| row.len() != categories || row.iter().sum::<usize>() != raters) {
        return Err(Error::invalid("every item needs the same raters and categories"));
    }
    let n = raters as f64;
    let items = counts.len() as f64;
    let p_bar = counts
        .iter()
        .map(|row| {
            let s: f64 = row.iter().map(|&c| (c * c) as f64).sum();
            (s - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..categories)
        .map(|j| {
            let pj = counts.iter().map(|row| row[j] as f64).sum::<f64>() / (items * n);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Per-session retention as written by forgetting passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionRow {
    pub session: u32,
    pub considered: usize,
    pub retained: usize,
    pub pass_rate: f64,
    pub cumulative_rate: f64,
}

pub fn retention_rows<'a>(reports: impl IntoIterator<Item = &'a ForgettingReport>) -> Vec<RetentionRow> {
    reports
        .into_iter()
        .map(|r| RetentionRow {
            session: r.session,
            considered: r.considered,
            retained: r.retained,
            pass_rate: r.pass_rate,
            cumulative_rate: r.cumulative_rate,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: String,
    pub qa: Option<QaReport>,
    pub retention: Vec<RetentionRow>,
    pub sweep: Vec<SweepPoint>,
    pub topk: Vec<f64>,
    pub verdicts: Vec<QAVerdict>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Long-format CSV: `section,key,metric,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(std::io::Error::other)?;
        let mut row = |section: &str, key: String, metric: &str, value: String| -> Result<()> {
            w.write_record([section, &key, metric, &value]).map_err(std::io::Error::other)?;
            Ok(())
        };
        row("section", "key".into(), "metric", "value".into())?;
        if let Some(qa) = &self.qa {
            for s in &qa.per_session {
                let key = format!("session {}", s.session);
                row("qa", key.clone(), "precision", opt(s.prf.precision))?;
                row("qa", key.clone(), "recall", format!("{:.6}", s.prf.recall))?;
                row("qa", key, "f1", format!("{:.6}", s.prf.f1))?;
            }
            row("qa", "average".into(), "precision", opt(qa.average.precision))?;
            row("qa", "average".into(), "recall", format!("{:.6}", qa.average.recall))?;
            row("qa", "average".into(), "f1", format!("{:.6}", qa.average.f1))?;
        }
        for r in &self.retention {
            let key = format!("session {}", r.session);
            row("retention", key.clone(), "pass_rate", format!("{:.6}", r.pass_rate))?;
            row("retention", key, "cumulative_rate", format!("{:.6}", r.cumulative_rate))?;
        }
        for p in &self.sweep {
            let key = format!("{:.3}", p.threshold);
            row("sweep", key.clone(), "precision", format!("{:.6}", p.precision))?;
            row("sweep", key.clone(), "recall", format!("{:.6}", p.recall))?;
            row("sweep", key, "f1", format!("{:.6}", p.f1))?;
        }
        for (i, r) in self.topk.iter().enumerate() {
            row("topk", format!("{}", i + 1), "hit_ratio", format!("{r:.6}"))?;
        }
        drop(row);
        w.flush()?;
        Ok(())
    }

    pub fn print_summary(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "strategy: {}", self.strategy)?;
        if let Some(qa) = &self.qa {
            for s in &qa.per_session {
                writeln!(
                    out,
                    "  session {}: P={} R={:.3} F1={:.3} ({} questions)",
                    s.session,
                    opt(s.prf.precision),
                    s.prf.recall,
                    s.prf.f1,
                    s.questions
                )?;
            }
            writeln!(
                out,
                "  average:   P={} R={:.3} F1={:.3}",
                opt(qa.average.precision),
                qa.average.recall,
                qa.average.f1
            )?;
        }
        for r in &self.retention {
            writeln!(
                out,
                "  retention after session {}: {}/{} ({:.1}%)",
                r.session,
                r.retained,
                r.considered,
                100.0 * r.pass_rate
            )?;
        }
        Ok(())
    }
}
