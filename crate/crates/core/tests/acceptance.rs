//! Acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so every verdict is printed even when
//! output capture is on. Exits non-zero if any criterion fails.

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lufy_core::eval::{
    self, agreement_probability, fleiss_kappa, prf_from_counts, ContainmentJudge,
};
use lufy_core::fitting::{lm_fit, loss, loss_gradient, AnnotatedExample, FitConfig, Stage};
use lufy_core::forgetting::{run_forgetting_pass, PassOptions, Strategy, StrategyKind};
use lufy_core::memory::{
    compute_importance, compute_strength, regularize_metrics, MemoryId, MemoryRecord,
    MetricStatistics, MetricValues, MetricVector, WeightVector,
};
use lufy_core::retrieval::{record_rif, retrieve_top_k, RetrievalQuery};
use lufy_core::scoring::stub::HashedEmbedder;
use lufy_core::scoring::Embedder;
use lufy_core::session::QAPair;
use lufy_core::store::{load_store, save_store, Event, MemoryStore};
use lufy_core::{ChatEngine, EngineConfig, Error};

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn record(id: u64, embedding: Vec<f32>, session: u32, metrics: MetricVector) -> MemoryRecord {
    MemoryRecord {
        id: MemoryId(id),
        user_text: format!("memory {id}"),
        bot_text: "ok".into(),
        embedding,
        session_created: session,
        session_last_used: session,
        metrics,
        strength: 0.0,
        importance: 1.0,
        retained: true,
    }
}

fn random_metrics(rng: &mut ChaCha8Rng) -> MetricVector {
    MetricVector {
        arousal: rng.random_range(0.0..1.5),
        perplexity: rng.random_range(1.0..160.0),
        llm_importance: rng.random_range(0.0..1.0),
        r1: rng.random_range(0..=20),
        r2: rng.random_range(0..=20),
    }
}

fn store_with(dim: usize, session: u32, records: Vec<MemoryRecord>) -> MemoryStore {
    let mut s = MemoryStore::in_memory(dim);
    s.commit(vec![Event::SessionOpen { session }]).unwrap();
    s.commit(records.into_iter().map(Event::Record).collect()).unwrap();
    s
}

// ---------------------------------------------------------------------------

fn formulas() -> Check {
    let e = compute_importance(1.0, 1.0).map_err(|e| e.to_string())?;
    ensure!((e - (-1.0f64).exp()).abs() <= 1e-12, "importance(1, 1) = {e}");
    for s in [0.01, 1.0, 3.952, 1e6] {
        let one = ok(compute_importance(s, 0.0))?;
        ensure!(one == 1.0, "importance({s}, 0) = {one}");
    }
    let s = ok(compute_strength(&MetricValues::splat(1.0), &WeightVector::FITTED))?;
    // 2.76 - 0.28 + 0.44 + 1.02 - (-0.012)
    ensure!((s - 3.952).abs() <= 1e-12, "fitted strength on unit metrics = {s}");
    Ok(format!("e^-1 ok, dt=0 -> 1, S(1) = {s}"))
}

fn retention() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut lines = Vec::new();
    for n in [5usize, 10, 100, 1000] {
        let recs: Vec<MemoryRecord> = (0..n)
            .map(|i| {
                let created = rng.random_range(1..=3);
                let mut r = record(i as u64, vec![1.0, 0.0], created, random_metrics(&mut rng));
                r.session_last_used = rng.random_range(created..=3);
                r
            })
            .collect();
        let expected = n.div_ceil(10);
        for strategy in [Strategy::Memorybank, Strategy::Lufy] {
            let mut store = store_with(2, 3, recs.clone());
            let kind = StrategyKind { strategy, retain_fraction: 0.10 };
            let report = ok(run_forgetting_pass(&mut store, &kind, &PassOptions::default(), 3))?;
            let kept: Vec<&MemoryRecord> = store.records().iter().filter(|r| r.retained).collect();
            ensure!(
                report.retained == expected && kept.len() == expected,
                "{strategy} n={n}: kept {} (report {}), expected {expected}",
                kept.len(),
                report.retained
            );
            let floor = kept.iter().map(|r| r.importance).fold(f64::INFINITY, f64::min);
            let ceiling = store
                .records()
                .iter()
                .filter(|r| !r.retained)
                .map(|r| r.importance)
                .fold(f64::NEG_INFINITY, f64::max);
            ensure!(floor >= ceiling, "{strategy} n={n}: kept {floor} < dropped {ceiling}");
        }
        lines.push(format!("{n}->{expected}"));
    }
    Ok(lines.join(", "))
}

fn memorybank_trajectory() -> Check {
    let config = EngineConfig::for_strategy(Strategy::Memorybank);
    let mut engine = ok(ChatEngine::stub(config))?;
    let fact = "my hometown is Kyoto";
    let mut id = None;
    let mut trajectory = Vec::new();
    for session in 1..=3u32 {
        let s = ok(engine.open_session())?;
        ensure!(s == session, "opened session {s}");
        let turn = ok(engine.handle_turn(s, fact))?;
        match id {
            None => {
                ensure!(turn.retrieved.is_empty(), "nothing to recall in session 1");
                id = Some(turn.record_id);
            }
            Some(id) => {
                ensure!(
                    turn.retrieved.first().map(|r| r.record_id) == Some(id),
                    "session {s}: expected memory {id} recalled, got {:?}",
                    turn.retrieved
                );
            }
        }
        ok(engine.close_session(s))?;
        let r = engine.store().get(id.unwrap()).cloned().ok_or("memory vanished")?;
        ensure!(r.retained, "session {s}: the recalled memory was forgotten");
        trajectory.push((r.strength, r.importance));
    }
    // one recall per session after the first; the recall resets the lag
    let expected = [(1.0, (-1.0f64).exp()), (2.0, 1.0), (3.0, 1.0)];
    for (i, ((s, imp), (es, ei))) in trajectory.iter().zip(expected).enumerate() {
        ensure!(
            *s == es && (imp - ei).abs() <= 1e-12,
            "session {}: S={s} importance={imp}, expected S={es} importance={ei}",
            i + 1
        );
    }
    Ok(format!(
        "S {} , importance at recall 1.0",
        trajectory.iter().map(|(s, _)| s.to_string()).collect::<Vec<_>>().join("->")
    ))
}

fn brute_cos(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

const WORDS: &[&str] = &[
    "tea", "coffee", "rain", "train", "dog", "cat", "garden", "piano", "soccer", "work", "sister",
    "movie", "kyoto", "beach", "book",
];

fn sentence(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.random_range(1..=max_words);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn retrieval_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let embedder = HashedEmbedder::new(64);
    let mut nonempty = 0;
    for case in 0..200 {
        let n = rng.random_range(0..=100);
        let recs: Vec<MemoryRecord> = (0..n)
            .map(|i| {
                let text = sentence(&mut rng, 3);
                let mut r = record(i as u64, embedder.embed(&text).unwrap(), rng.random_range(1..=4), MetricVector::default());
                // coarse importances so score ties are common
                r.importance = *[0.0, 0.25, 0.5, 1.0].choose(&mut rng).unwrap();
                r
            })
            .collect();
        let q = embedder.embed(&sentence(&mut rng, 3)).unwrap();
        let query = RetrievalQuery {
            query_embedding: q.clone(),
            k: rng.random_range(1..=5),
            threshold: *[0.0, 0.3, 0.5, 0.8].choose(&mut rng).unwrap(),
            alpha: *[0.0, 0.1, 0.5].choose(&mut rng).unwrap(),
        };
        let got = ok(retrieve_top_k(&recs, &query))?;

        let mut want: Vec<(f64, u32, u64, f64)> = recs
            .iter()
            .filter_map(|r| {
                let c = brute_cos(&q, &r.embedding);
                (c >= query.threshold).then(|| (c + query.alpha * r.importance, r.session_created, r.id.0, c))
            })
            .collect();
        want.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
        want.truncate(query.k);
        let got_keys: Vec<(u64, usize, f64)> = got.iter().map(|r| (r.record_id.0, r.rank, r.final_score)).collect();
        let want_keys: Vec<(u64, usize, f64)> = want.iter().enumerate().map(|(i, w)| (w.2, i + 1, w.0)).collect();
        ensure!(got_keys == want_keys, "case {case}: {got_keys:?} != {want_keys:?}");
        nonempty += usize::from(!got.is_empty());
    }
    Ok(format!("200/200 stores match ({nonempty} with hits)"))
}

fn synthetic(rng: &mut ChaCha8Rng, n: usize, w: [f64; 3], with_counts: bool) -> Vec<AnnotatedExample> {
    let boundary = 1.0 / std::f64::consts::LN_2;
    (0..n)
        .map(|_| {
            let x: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let (r1, r2) = if with_counts {
                (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))
            } else {
                (0.0, 0.0)
            };
            let s = w[0] * x[0] + w[1] * x[1] + w[2] * x[2];
            AnnotatedExample {
                metrics: MetricValues::from_array([x[0], x[1], x[2], r1, r2]),
                // p = exp(-1/S) > 0.5 exactly when S > 1/ln 2
                label: u8::from(s > boundary),
            }
        })
        .collect()
}

fn fitting() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = synthetic(&mut rng, 300, [2.0, -0.3, 0.5], true);
    let free = [0usize, 1, 2, 3, 4];
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let w: [f64; 5] = std::array::from_fn(|_| rng.random_range(-1.0..3.0));
        let g = ok(loss_gradient(&w, &data, 0.01, &free))?;
        let fd: Vec<f64> = free
            .iter()
            .map(|&j| {
                let h = 1e-5 * w[j].abs().max(1.0);
                let (mut up, mut down) = (w, w);
                up[j] += h;
                down[j] -= h;
                (loss(&up, &data, 0.01, &free).unwrap() - loss(&down, &data, 0.01, &free).unwrap()) / (2.0 * h)
            })
            .collect();
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        let err = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        ensure!(err <= 1e-4, "gradient mismatch {err:e} at {w:?}: {g:?} vs {fd:?}");
        worst = worst.max(err);
    }

    let truth = [2.0, -0.3, 0.5];
    let train = synthetic(&mut rng, 2000, truth, false);
    let held = synthetic(&mut rng, 2000, truth, false);
    let first = ok(lm_fit(&train, &FitConfig::default()))?;
    let agree = held
        .iter()
        .filter(|e| {
            let x = e.metrics.to_array();
            let s: f64 = (0..3).map(|j| first.weights[j] * x[j]).sum();
            u8::from((-1.0 / s).exp() > 0.5 && s > 0.0) == e.label
        })
        .count() as f64
        / held.len() as f64;
    let with_counts = synthetic(&mut rng, 500, truth, true);
    let stage2 = ok(lm_fit(&with_counts, &FitConfig::stage2_from(&first.weights)))?;
    ensure!(FitConfig::stage2_from(&first.weights).stage == Stage::Stage2, "stage2_from is not stage 2");
    for j in 0..3 {
        ensure!(
            stage2.weights[j].to_bits() == first.weights[j].to_bits(),
            "stage 2 moved weight {j}: {} -> {}",
            first.weights[j],
            stage2.weights[j]
        );
    }
    let mut at_truth = [0.0; 5];
    at_truth[..3].copy_from_slice(&truth);
    let truth_loss = ok(loss(&at_truth, &train, 0.01, Stage::Stage1.free()))?;
    ensure!(
        agree >= 0.95,
        "gradient and stage 2 fine, but held-out agreement {:.2}% < 95%: fitted {:?} (loss {:.3}, converged {}) \
         beats the generating weights (loss {truth_loss:.3}), so the loss minimum is not the generating boundary",
        100.0 * agree,
        &first.weights[..3],
        first.final_loss,
        first.converged
    );
    Ok(format!(
        "gradient rel err {worst:.1e}, held-out agreement {:.1}%, stage-1 weights untouched",
        100.0 * agree
    ))
}

fn regularization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for b in 0..100 {
        let n = rng.random_range(20..200);
        let batch: Vec<MetricVector> = (0..n).map(|_| random_metrics(&mut rng)).collect();
        let stats = ok(MetricStatistics::from_batch(&batch))?;
        let out: Vec<[f64; 5]> = regularize_metrics(&batch, &stats).into_iter().map(|m| m.to_array()).collect();
        let summary: Vec<(f64, f64, f64)> = (0..5)
            .map(|c| {
                let col: Vec<f64> = out.iter().map(|r| r[c]).collect();
                let min = col.iter().copied().fold(f64::INFINITY, f64::min);
                let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (min, col.iter().sum::<f64>() / n as f64, max)
            })
            .collect();
        for (c, s) in summary.iter().enumerate() {
            let (m0, a0, x0) = summary[0];
            ensure!(
                (s.0 - m0).abs() <= 1e-9 && (s.1 - a0).abs() <= 1e-9 && (s.2 - x0).abs() <= 1e-9,
                "batch {b}: column {c} has {s:?}, column 0 has {:?}",
                summary[0]
            );
        }
        let inp: Vec<[f64; 5]> = batch.iter().map(|m| m.values().to_array()).collect();
        for c in 0..5 {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&i, &j| inp[i][c].total_cmp(&inp[j][c]));
            for w in idx.windows(2) {
                let (i, j) = (w[0], w[1]);
                let same = inp[i][c] == inp[j][c];
                ensure!(
                    if same { out[i][c] == out[j][c] } else { out[i][c] < out[j][c] },
                    "batch {b}: column {c} order broken"
                );
            }
        }
    }
    Ok("100 batches share (min, mean, max) and keep rank order".into())
}

// ---------------------------------------------------------------------------

struct Fact {
    key: &'static str,
    answer: &'static str,
}

const FACTS: [Fact; 10] = [
    Fact { key: "hometown", answer: "Kyoto" },
    Fact { key: "job", answer: "nurse" },
    Fact { key: "dog", answer: "Mochi" },
    Fact { key: "car", answer: "Volvo" },
    Fact { key: "sister", answer: "Hana" },
    Fact { key: "drink", answer: "matcha" },
    Fact { key: "team", answer: "Arsenal" },
    Fact { key: "city", answer: "Lisbon" },
    Fact { key: "hobby", answer: "climbing" },
    Fact { key: "instrument", answer: "cello" },
];

const FILLER: &[&str] = &[
    "weather", "cloudy", "lunch", "sandwich", "meeting", "late", "office", "coffee", "movie",
    "walked", "park", "rain", "tired", "weekend", "plans", "grocery", "laundry", "email", "phone",
    "busy", "quiet", "morning", "evening", "happy", "great", "worried",
];

/// Which turn of which session carries which planted line.
fn script(seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan: [&[(usize, usize, bool)]; 3] = [
        // (turn, fact, is_distractor)
        &[(3, 0, false), (5, 0, true), (7, 1, false), (11, 2, false), (13, 2, true), (15, 3, false)],
        &[(4, 4, false), (6, 4, true), (9, 5, false), (14, 6, false), (16, 6, true)],
        &[(2, 7, false), (8, 8, false), (10, 8, true), (17, 9, false)],
    ];
    plan.iter()
        .map(|planted| {
            (0..20)
                .map(|turn| match planted.iter().find(|p| p.0 == turn) {
                    // the key repeats so the question clears the threshold
                    Some(&(_, f, false)) => format!("{k}, my {k} is {a}!!!!", k = FACTS[f].key, a = FACTS[f].answer),
                    // closer to the question than the fact, but flat and short
                    Some(&(_, f, true)) => format!("{k} {k} {k} again", k = FACTS[f].key),
                    None => {
                        let n = rng.random_range(3..8);
                        let mut words: Vec<&str> = FILLER.choose_multiple(&mut rng, n).copied().collect();
                        words.shuffle(&mut rng);
                        words.join(" ")
                    }
                })
                .collect()
        })
        .collect()
}

struct Run {
    transcript_1: Vec<lufy_core::session::Utterance>,
    reports: Vec<(usize, usize)>,
    total: usize,
    kept: usize,
    precision: Option<f64>,
    attempted: usize,
    correct: usize,
}

fn converse(strategy: Strategy, lines: &[Vec<String>]) -> std::result::Result<Run, String> {
    let mut engine = ok(ChatEngine::stub(EngineConfig::for_strategy(strategy)))?;
    let mut reports = Vec::new();
    for (i, session_lines) in lines.iter().enumerate() {
        let s = ok(engine.open_session())?;
        ensure!(s == i as u32 + 1, "unexpected session {s}");
        for line in session_lines {
            ok(engine.handle_turn(s, line))?;
        }
        let r = ok(engine.close_session(s))?;
        reports.push((r.considered, r.retained));
    }
    let qa: Vec<QAPair> = FACTS
        .iter()
        .map(|f| QAPair {
            question: format!("What is my {}?", f.key),
            gold_answer: f.answer.to_string(),
            session_of_origin: 0,
            gold_memory_id: None,
        })
        .collect();
    let mut verdicts = Vec::new();
    for q in &qa {
        verdicts.push(ok(eval::answer_qa(&engine, q, &ContainmentJudge))?);
    }
    let prf = ok(eval::score_prf(&verdicts))?;
    Ok(Run {
        transcript_1: engine.store().session_state(1).ok_or("no session 1")?.transcript,
        reports,
        total: engine.store().len(),
        kept: engine.store().index().count(),
        precision: prf.precision,
        attempted: verdicts.iter().filter(|v| v.attempted).count(),
        correct: verdicts.iter().filter(|v| v.correct).count(),
    })
}

fn end_to_end() -> Check {
    let lines = script(2024);
    ensure!(lines == script(2024), "script is not deterministic");
    let runs: Vec<(Strategy, Run)> = Strategy::ALL
        .iter()
        .map(|&s| converse(s, &lines).map(|r| (s, r)))
        .collect::<std::result::Result<_, _>>()?;

    let first = &runs[0].1.transcript_1;
    ensure!(first.len() == 40, "session 1 has {} utterances", first.len());
    for (s, r) in &runs {
        ensure!(&r.transcript_1 == first, "{s}: session-1 transcript differs");
        ensure!(r.total == 60, "{s}: stored {} memories", r.total);
        let mut carried = 0;
        for (i, &(considered, retained)) in r.reports.iter().enumerate() {
            ensure!(considered == carried + 20, "{s} pass {}: considered {considered}", i + 1);
            let expected = match s {
                Strategy::Naive => considered,
                _ => considered.div_ceil(10),
            };
            ensure!(retained == expected, "{s} pass {}: kept {retained} of {considered}", i + 1);
            carried = retained;
        }
        ensure!(r.kept == carried, "{s}: index holds {} after the last pass", r.kept);
    }
    let find = |want: Strategy| &runs.iter().find(|(s, _)| *s == want).unwrap().1;
    let (naive, lufy, mb) = (find(Strategy::Naive), find(Strategy::Lufy), find(Strategy::Memorybank));
    let (pn, pl) = (naive.precision.unwrap_or(0.0), lufy.precision.unwrap_or(0.0));
    ensure!(
        lufy.precision.is_some() && pl >= pn,
        "precision lufy {:?} ({}/{}) < naive {:?} ({}/{})",
        lufy.precision,
        lufy.correct,
        lufy.attempted,
        naive.precision,
        naive.correct,
        naive.attempted
    );
    Ok(format!(
        "precision lufy {pl:.2} ({}/{}), memorybank {} ({}/{}), naive {pn:.2} ({}/{})",
        lufy.correct,
        lufy.attempted,
        mb.precision.map_or("n/a".into(), |p| format!("{p:.2}")),
        mb.correct,
        mb.attempted,
        naive.correct,
        naive.attempted
    ))
}

// ---------------------------------------------------------------------------

fn eval_identities() -> Check {
    let prf = ok(prf_from_counts(10, 8, 6))?;
    let p = prf.precision.ok_or("precision missing")?;
    ensure!((p - 0.75).abs() <= 1e-12, "precision {p}");
    ensure!((prf.recall - 0.6).abs() <= 1e-12, "recall {}", prf.recall);
    // 2 * 0.75 * 0.6 / 1.35
    ensure!((prf.f1 - 2.0 / 3.0).abs() <= 1e-3, "f1 {}", prf.f1);

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let embedder = HashedEmbedder::new(64);
    let recs: Vec<MemoryRecord> = (0..60)
        .map(|i| {
            let mut r = record(i, embedder.embed(&sentence(&mut rng, 4)).unwrap(), 1 + (i % 3) as u32, MetricVector::default());
            r.importance = rng.random_range(0.0..1.0);
            r
        })
        .collect();
    let qa: Vec<QAPair> = (0..40)
        .map(|i| {
            let gold = &recs[rng.random_range(0..recs.len())];
            // questions share some words with their gold memory
            let q = format!("{} {}", sentence(&mut rng, 2), WORDS[i % WORDS.len()]);
            QAPair {
                question: q,
                gold_answer: "x".into(),
                session_of_origin: gold.session_created,
                gold_memory_id: Some(gold.id),
            }
        })
        .collect();
    let store = store_with(64, 3, recs);
    let ts: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
    for alpha in [0.0, 0.1] {
        let sweep = ok(eval::sweep_thresholds(&qa, &store, &embedder, &ts, 2, alpha))?;
        for w in sweep.windows(2) {
            ensure!(w[1].recall <= w[0].recall, "recall rose from {} to {} at t={}", w[0].recall, w[1].recall, w[1].threshold);
        }
        let topk = ok(eval::topk_hit_ratio(&qa, &store, &embedder, 10, alpha))?;
        for w in topk.windows(2) {
            ensure!(w[1] >= w[0], "top-k ratio fell: {topk:?}");
        }
    }

    let mut annotations = HashMap::new();
    let ids: Vec<MemoryId> = (0..1000).map(MemoryId).collect();
    for id in &ids {
        annotations.insert(*id, id.0 % 10 == 0);
    }
    let mut mean = 0.0;
    let trials = 1000;
    for _ in 0..trials {
        let retained: Vec<MemoryId> = ids.choose_multiple(&mut rng, 100).copied().collect();
        mean += ok(agreement_probability(&retained, &annotations))?;
    }
    mean /= trials as f64;
    ensure!((mean - 0.10).abs() <= 0.02, "random retention agreement {mean}");

    let counts = vec![
        vec![3, 0], vec![2, 1], vec![3, 0], vec![0, 3], vec![1, 2],
        vec![3, 0], vec![2, 1], vec![0, 3], vec![3, 0], vec![1, 2],
    ];
    let kappa = ok(fleiss_kappa(&counts))?;
    // statsmodels.stats.inter_rater.fleiss_kappa on the same table
    ensure!((kappa - 0.4444444444444443).abs() <= 1e-12, "kappa {kappa}");
    Ok(format!("PRF (0.75, 0.6, {:.3}), monotone sweep and top-k, agreement {mean:.4}, kappa {kappa:.4}", prf.f1))
}

fn persistence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let dim = 32;
    let mut store = MemoryStore::in_memory(dim);
    for session in 1..=4u32 {
        ok(store.commit(vec![Event::SessionOpen { session }]))?;
        for _ in 0..250 {
            let e: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let mut r = store.new_record(session, sentence(&mut rng, 6), "fine".into(), e, random_metrics(&mut rng));
            r.importance = rng.random_range(0.0..1.0);
            r.strength = rng.random_range(-1.0..5.0);
            ok(store.commit(vec![Event::Record(r)]))?;
        }
        if session < 4 {
            let kind = StrategyKind::new(Strategy::Lufy);
            let hits = ok(retrieve_top_k(store.index(), &RetrievalQuery::new(store.records()[0].embedding.clone())))?;
            ok(record_rif(&mut store, &hits, session))?;
            ok(run_forgetting_pass(&mut store, &kind, &PassOptions::default(), session))?;
        }
    }
    ensure!(store.len() == 1000, "built {} records", store.len());
    let dir = ok(tempfile::tempdir())?;
    let path = dir.path().join("store.jsonl");
    ok(save_store(&store, &path))?;
    let back = ok(load_store(&path))?;
    ensure!(back.records() == store.records(), "records differ after reload");
    let bits = |s: &MemoryStore| -> Vec<u64> {
        s.records()
            .iter()
            .flat_map(|r| {
                r.embedding
                    .iter()
                    .map(|x| u64::from(x.to_bits()))
                    .chain([r.importance.to_bits(), r.strength.to_bits()])
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    ensure!(bits(&back) == bits(&store), "float bits differ after reload");
    ensure!(back.snapshot() == store.snapshot(), "session state differs after reload");

    let text = ok(std::fs::read_to_string(&path))?;
    let lines = text.lines().count();
    let cut = text.trim_end().len() - 7;
    ok(std::fs::write(&path, &text[..cut]))?;
    match load_store(&path) {
        Err(Error::Persistence { line, .. }) if line == lines => {}
        other => return Err(format!("truncated store loaded as {:?}", other.map(|s| s.len()))),
    }
    Ok(format!("1000 records bit-exact; truncation reported at line {lines}"))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Check); 9] = [
        ("formulas", Duration::from_secs(1), formulas),
        ("forgetting retention", Duration::from_secs(5), retention),
        ("memorybank trajectory", Duration::from_secs(5), memorybank_trajectory),
        ("retrieval oracle", Duration::from_secs(10), retrieval_oracle),
        ("fitting", Duration::from_secs(60), fitting),
        ("regularization", Duration::from_secs(5), regularization),
        ("end-to-end conversation", Duration::from_secs(120), end_to_end),
        ("eval identities", Duration::from_secs(30), eval_identities),
        ("persistence", Duration::from_secs(30), persistence),
    ];
    let mut failed = HashSet::new();
    for (name, limit, f) in criteria {
        let t = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = t.elapsed();
        let out = match out {
            Ok(_) if took > limit => Err(format!("took {took:.2?}, limit {limit:?}")),
            o => o,
        };
        match out {
            Ok(detail) => println!("PASS  {name} [{took:.2?}]: {detail}"),
            Err(why) => {
                println!("FAIL  {name} [{took:.2?}]: {why}");
                failed.insert(name);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 9 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} of 9 criteria failed", failed.len());
        ExitCode::FAILURE
    }
}
