//! Weight estimation from labelled exchanges.
//!
//! The retention model is `p = exp(-1/S)` with `S` linear in the weights.
//! Fitting minimises `sum (label - p)^2 + lambda * |free weights|^2` with
//! Levenberg-Marquardt, in two stages: first `(w_A, w_P, w_L)`, then
//! `(w_R1, w_R2)` with the first three frozen.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{MetricStatistics, MetricValues, RegularizationTargets, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    /// Regularized metrics.
    pub metrics: MetricValues,
    /// 1 = important.
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stage1,
    Stage2,
}

impl Stage {
    /// Indices into `[w_A, w_P, w_L, w_R1, w_R2]` that this stage moves.
    pub fn free(self) -> &'static [usize] {
        match self {
            Stage::Stage1 => &[0, 1, 2],
            Stage::Stage2 => &[3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub lambda: f64,
    /// Starting point for all five weights. Parameters outside the stage
    /// stay at these values.
    pub initial_weights: [f64; 5],
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub stage: Stage,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            initial_weights: [1.0, 1.0, 1.0, 0.0, 0.0],
            max_iterations: 1000,
            convergence_tol: 1e-8,
            stage: Stage::Stage1,
        }
    }
}

impl FitConfig {
    /// Stage-2 config that keeps `stage1`'s first three weights.
    pub fn stage2_from(stage1: &[f64; 5]) -> Self {
        Self {
            initial_weights: [stage1[0], stage1[1], stage1[2], 1.0, 1.0],
            stage: Stage::Stage2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be positive"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::invalid("convergence_tol must be positive"));
        }
        if !self.initial_weights.iter().all(|w| w.is_finite()) {
            return Err(Error::invalid("initial weights must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub weights: [f64; 5],
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub converged: bool,
    /// Loss after each accepted step, starting with the initial loss.
    pub loss_history: Vec<f64>,
}

impl FitResult {
    pub fn weight_vector(&self, alpha: f64) -> WeightVector {
        WeightVector::from_metric_weights(self.weights, alpha)
    }
}

/// `exp(-1/S)` for `S > 0`, else 0.
pub fn retention_probability(strength: f64) -> f64 {
    if strength > 0.0 {
        (-1.0 / strength).exp()
    } else {
        0.0
    }
}

fn strength(w: &[f64; 5], m: &MetricValues) -> f64 {
    let x = m.to_array();
    w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + w[3] * x[3] - w[4] * x[4]
}

/// `dS/dw_j`.
fn design_row(m: &MetricValues) -> [f64; 5] {
    let x = m.to_array();
    [x[0], x[1], x[2], x[3], -x[4]]
}

fn check_data(data: &[AnnotatedExample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("no annotated examples"));
    }
    if let Some(e) = data.iter().find(|e| e.label > 1) {
        return Err(Error::invalid(format!("label must be 0 or 1, got {}", e.label)));
    }
    Ok(())
}

/// Squared error plus the L2 penalty on the `free` weights.
pub fn loss(weights: &[f64; 5], data: &[AnnotatedExample], lambda: f64, free: &[usize]) -> Result<f64> {
    check_data(data)?;
    let sse: f64 = data
        .iter()
        .map(|e| {
            let r = f64::from(e.label) - retention_probability(strength(weights, &e.metrics));
            r * r
        })
        .sum();
    Ok(sse + lambda * free.iter().map(|&j| weights[j] * weights[j]).sum::<f64>())
}

/// Analytic gradient of [`loss`] with respect to the `free` weights.
pub fn loss_gradient(
    weights: &[f64; 5],
    data: &[AnnotatedExample],
    lambda: f64,
    free: &[usize],
) -> Result<Vec<f64>> {
    check_data(data)?;
    let mut g: Vec<f64> = free.iter().map(|&j| 2.0 * lambda * weights[j]).collect();
    for e in data {
        let s = strength(weights, &e.metrics);
        let p = retention_probability(s);
        let dp = if s > 0.0 { p / (s * s) } else { 0.0 };
        let coef = -2.0 * (f64::from(e.label) - p) * dp;
        let row = design_row(&e.metrics);
        for (gi, &j) in g.iter_mut().zip(free) {
            *gi += coef * row[j];
        }
    }
    Ok(g)
}

/// Residuals `p - label` and their Jacobian over the free weights, with the
/// penalty appended as `sqrt(lambda) * w_j` rows.
fn residuals(w: &[f64; 5], data: &[AnnotatedExample], lambda: f64, free: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let n = data.len() + free.len();
    let mut r = DVector::zeros(n);
    let mut jac = DMatrix::zeros(n, free.len());
    for (i, e) in data.iter().enumerate() {
        let s = strength(w, &e.metrics);
        let p = retention_probability(s);
        r[i] = p - f64::from(e.label);
        let dp = if s > 0.0 { p / (s * s) } else { 0.0 };
        let row = design_row(&e.metrics);
        for (c, &j) in free.iter().enumerate() {
            jac[(i, c)] = dp * row[j];
        }
    }
    let sl = lambda.sqrt();
    for (c, &j) in free.iter().enumerate() {
        r[data.len() + c] = sl * w[j];
        jac[(data.len() + c, c)] = sl;
    }
    (r, jac)
}

/// Levenberg-Marquardt on the stage's free weights.
///
/// Never errors on numerical trouble; a fit that stalls comes back with
/// `converged = false`.
pub fn lm_fit(data: &[AnnotatedExample], config: &FitConfig) -> Result<FitResult> {
    check_data(data)?;
    config.validate()?;
    let free = config.stage.free();
    let mut w = config.initial_weights;
    let mut current = loss(&w, data, config.lambda, free)?;
    let initial_loss = current;
    let mut history = vec![current];
    let mut mu = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let (r, jac) = residuals(&w, data, config.lambda, free);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        if g.amax() < 1e-15 {
            converged = true;
            break;
        }
        let mut damped = jtj.clone();
        for c in 0..free.len() {
            // Marquardt scaling, with a floor for columns that carry no signal
            damped[(c, c)] += mu * jtj[(c, c)].max(1e-12);
        }
        let step = damped.cholesky().map(|ch| ch.solve(&(-&g)));
        let Some(step) = step else {
            mu *= 10.0;
            continue;
        };
        let mut trial = w;
        for (c, &j) in free.iter().enumerate() {
            trial[j] += step[c];
        }
        let trial_loss = loss(&trial, data, config.lambda, free)?;
        if trial_loss.is_finite() && trial_loss <= current {
            let decrease = current - trial_loss;
            w = trial;
            let previous = current;
            current = trial_loss;
            history.push(current);
            mu = (mu / 10.0).max(1e-12);
            if decrease <= config.convergence_tol * previous.max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        } else {
            mu *= 10.0;
            if mu > 1e16 {
                log::warn!("damping exhausted after {iterations} iterations");
                break;
            }
        }
    }
    Ok(FitResult {
        weights: w,
        iterations,
        initial_loss,
        final_loss: current,
        converged,
        loss_history: history,
    })
}

/// Stage 1 then stage 2, the second starting from the first's weights.
pub fn two_stage_fit(
    data: &[AnnotatedExample],
    stage1: &FitConfig,
    stage2_initial: [f64; 2],
) -> Result<(FitResult, FitResult)> {
    let first = lm_fit(data, &FitConfig { stage: Stage::Stage1, ..stage1.clone() })?;
    let mut init = first.weights;
    init[3] = stage2_initial[0];
    init[4] = stage2_initial[1];
    let second = lm_fit(
        data,
        &FitConfig {
            initial_weights: init,
            stage: Stage::Stage2,
            ..stage1.clone()
        },
    )?;
    Ok((first, second))
}

/// One line of an annotated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusLine {
    pub user_text: String,
    pub bot_text: String,
    pub metrics: MetricValues,
    pub label: u8,
}

/// Read an annotated corpus. Metrics are taken as written.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusLine>> {
    let f = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Persistence {
            path: path.display().to_string(),
            line: i + 1,
            reason,
        };
        let c: CorpusLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if c.label > 1 {
            return Err(err(format!("label must be 0 or 1, got {}", c.label)));
        }
        out.push(c);
    }
    Ok(out)
}

/// Regularize a corpus against its own statistics.
pub fn annotate(corpus: &[CorpusLine]) -> Result<Vec<AnnotatedExample>> {
    let rows: Vec<[f64; 5]> = corpus.iter().map(|c| c.metrics.to_array()).collect();
    let stats = MetricStatistics::from_rows(&rows, RegularizationTargets::default())?;
    Ok(corpus
        .iter()
        .map(|c| AnnotatedExample {
            metrics: stats.apply(c.metrics),
            label: c.label,
        })
        .collect())
}
