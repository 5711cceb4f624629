//! Per-turn orchestration over one store.
//!
//! A turn reads the store, calls the providers, and only then commits the
//! counter updates, the new memory and both utterances as one batch. Any
//! provider error before the commit leaves the store untouched.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::forgetting::{prepare_pass, ForgettingReport};
use crate::memory::{clamp_perplexity, MemoryId, MemoryRecord, MetricStatistics, MetricValues, MetricVector};
use crate::retrieval::{retrieve_top_k, rif_updated, RetrievalResult};
use crate::scoring::prompt::{recent, summary_prompt};
use crate::scoring::{generate_response, ExchangeText, Providers, Task};
use crate::session::{append_qa, qa_path, QAPair, SessionState, Speaker, Utterance, QA_PER_SESSION};
use crate::store::{Event, MemoryStore, SUMMARY_MAX_CHARS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub bot_text: String,
    pub retrieved: Vec<RetrievalResult>,
    pub latency_ms: u64,
    pub record_id: MemoryId,
}

/// An answer produced without touching the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub retrieved: Vec<RetrievalResult>,
}

/// Per-term strength contributions, `w_X * regularized X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub regularized: MetricValues,
    pub terms: MetricValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryView {
    #[serde(flatten)]
    pub record: MemoryRecord,
    pub breakdown: Breakdown,
}

pub struct ChatEngine {
    config: EngineConfig,
    providers: Providers,
    store: MemoryStore,
    /// QA pairs for stores without a backing file.
    qa: Vec<QAPair>,
}

impl ChatEngine {
    pub fn new(config: EngineConfig, providers: Providers, store: MemoryStore) -> Result<Self> {
        config.validate()?;
        if let Some(d) = store.dimension() {
            if d != config.embedding_dim {
                return Err(Error::Config(format!(
                    "store dimension {d} does not match embedding_dim {}",
                    config.embedding_dim
                )));
            }
        }
        Ok(Self {
            config,
            providers,
            store,
            qa: Vec::new(),
        })
    }

    /// Build providers and open the configured store.
    pub fn from_config(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let providers = Providers::from_config(&config.providers, config.embedding_dim)?;
        let store = match &config.store_path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
                MemoryStore::open(p, config.embedding_dim)?
            }
            None => MemoryStore::in_memory(config.embedding_dim),
        };
        Self::new(config, providers, store)
    }

    /// In-memory engine with stub providers.
    pub fn stub(config: EngineConfig) -> Result<Self> {
        let providers = Providers::stub(config.embedding_dim);
        let store = MemoryStore::in_memory(config.embedding_dim);
        Self::new(config, providers, store)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &MemoryStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut MemoryStore {
        &mut self.store
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    pub fn session(&self, session: u32) -> Option<SessionState> {
        self.store.session_state(session)
    }

    /// Start the next session. Only one session may be open at a time.
    pub fn open_session(&mut self) -> Result<u32> {
        if let Some(open) = self.store.open_session() {
            return Err(Error::Lifecycle(format!("session {open} is still open")));
        }
        let session = self.store.last_session() + 1;
        self.store.commit(vec![Event::SessionOpen { session }])?;
        Ok(session)
    }

    pub fn handle_turn(&mut self, session: u32, user_text: &str) -> Result<TurnResult> {
        let started = Instant::now();
        if user_text.trim().is_empty() {
            return Err(Error::invalid("user text is empty"));
        }
        self.store.require_open(session)?;
        let state = self
            .store
            .session_state(session)
            .ok_or_else(|| Error::Lifecycle(format!("no session {session}")))?;
        let previous_bot = state.last_bot_text().to_string();
        let next_turn = state.transcript.len() as u32;

        let mut context = state.transcript;
        context.push(Utterance {
            speaker: Speaker::User,
            text: user_text.to_string(),
            turn: next_turn,
        });

        let query_text = join_texts(recent(&context));
        let query = self.providers.embedder.embed(&query_text)?;
        let retrieved = retrieve_top_k(self.store.index(), &self.config.query(query))?;
        let rif = rif_updated(&self.store, &retrieved, session)?;
        let memory = retrieved
            .first()
            .and_then(|r| self.store.get(r.record_id))
            .map(MemoryRecord::render);

        let bot_text = generate_response(
            self.providers.generator.as_ref(),
            &state.summary,
            &context,
            memory.as_deref(),
        )?;

        let exchange = ExchangeText::new(user_text, previous_bot.clone())?;
        let metrics = MetricVector {
            arousal: self.providers.arousal.score_arousal(&exchange)?,
            perplexity: clamp_perplexity(self.providers.perplexity.score_perplexity(&exchange)?)?,
            llm_importance: self.providers.importance.estimate_importance(&exchange)?,
            r1: 0,
            r2: 0,
        };
        let embedding = self.providers.embedder.embed(user_text)?;
        let record = self
            .store
            .new_record(session, user_text.to_string(), previous_bot, embedding, metrics);
        let record_id = record.id;

        let mut events: Vec<Event> = rif.into_iter().map(Event::Record).collect();
        events.push(Event::Record(record));
        events.push(Event::Utterance {
            session,
            speaker: Speaker::User,
            text: user_text.to_string(),
            turn: next_turn,
        });
        events.push(Event::Utterance {
            session,
            speaker: Speaker::Chatbot,
            text: bot_text.clone(),
            turn: next_turn + 1,
        });
        self.store.commit(events)?;

        Ok(TurnResult {
            bot_text,
            retrieved,
            latency_ms: started.elapsed().as_millis() as u64,
            record_id,
        })
    }

    /// Summarize, run the forgetting pass and close `session`.
    pub fn close_session(&mut self, session: u32) -> Result<ForgettingReport> {
        self.store.require_open(session)?;
        let state = self
            .store
            .session_state(session)
            .ok_or_else(|| Error::Lifecycle(format!("no session {session}")))?;
        let summary = self.summarize(&state)?;
        let (report, updates) = prepare_pass(
            &self.store,
            &self.config.strategy_kind(),
            &self.config.pass_options(),
            session,
        )?;
        let mut events: Vec<Event> = updates.into_iter().map(Event::Record).collect();
        events.push(Event::SessionClose {
            session,
            summary,
            report: report.clone(),
        });
        self.store.commit(events)?;
        let qa = self.qa_for(session)?.len();
        if qa != QA_PER_SESSION {
            log::warn!("session {session} closed with {qa} QA pairs, expected {QA_PER_SESSION}");
        }
        Ok(report)
    }

    fn summarize(&self, state: &SessionState) -> Result<String> {
        let g = self.providers.generator.as_ref();
        let mut summary = g.complete(
            Task::Summary,
            &summary_prompt(&state.summary, &state.transcript, SUMMARY_MAX_CHARS),
        )?;
        if summary.chars().count() > SUMMARY_MAX_CHARS {
            summary = g.complete(Task::Summary, &summary_prompt(&summary, &[], SUMMARY_MAX_CHARS))?;
        }
        let n = summary.chars().count();
        if n > SUMMARY_MAX_CHARS {
            log::warn!("summary still {n} characters after re-summarizing; keeping the tail");
            summary = summary.chars().skip(n - SUMMARY_MAX_CHARS).collect();
        }
        Ok(summary.trim().to_string())
    }

    /// Answer `question` as a turn would, without recording anything.
    pub fn answer(&self, question: &str) -> Result<Answer> {
        if question.trim().is_empty() {
            return Err(Error::invalid("question is empty"));
        }
        let query = self.providers.embedder.embed(question)?;
        let retrieved = retrieve_top_k(self.store.index(), &self.config.query(query))?;
        let memory = retrieved
            .first()
            .and_then(|r| self.store.get(r.record_id))
            .map(MemoryRecord::render);
        let context = [Utterance {
            speaker: Speaker::User,
            text: question.to_string(),
            turn: 0,
        }];
        let text = generate_response(
            self.providers.generator.as_ref(),
            self.store.summary(),
            &context,
            memory.as_deref(),
        )?;
        Ok(Answer { text, retrieved })
    }

    fn qa_file(&self) -> Option<PathBuf> {
        self.store.path().map(qa_path)
    }

    /// Record QA pairs written by the user for `session`.
    pub fn add_qa(&mut self, session: u32, pairs: Vec<QAPair>) -> Result<()> {
        if !self.store.sessions().contains_key(&session) {
            return Err(Error::Lifecycle(format!("no session {session}")));
        }
        for p in &pairs {
            if p.question.trim().is_empty() || p.gold_answer.trim().is_empty() {
                return Err(Error::invalid("QA pairs need a question and an answer"));
            }
            if p.session_of_origin != session {
                return Err(Error::invalid(format!(
                    "QA pair from session {} posted to session {session}",
                    p.session_of_origin
                )));
            }
        }
        match self.qa_file() {
            Some(path) => append_qa(&path, &pairs)?,
            None => self.qa.extend(pairs),
        }
        Ok(())
    }

    pub fn qa_pairs(&self) -> Result<Vec<QAPair>> {
        match self.qa_file() {
            Some(path) if path.exists() => crate::session::load_qa(&path),
            Some(_) => Ok(Vec::new()),
            None => Ok(self.qa.clone()),
        }
    }

    fn qa_for(&self, session: u32) -> Result<Vec<QAPair>> {
        Ok(self
            .qa_pairs()?
            .into_iter()
            .filter(|q| q.session_of_origin == session)
            .collect())
    }

    /// Every memory, retained and archived, with strength contributions.
    ///
    /// Regularization uses the configured calibration, or else the whole
    /// store as reference.
    pub fn memories(&self) -> Result<Vec<MemoryView>> {
        let records = self.store.records();
        if records.is_empty() {
            return Ok(Vec::new());
        }
        let own;
        let reference = match &self.config.calibration {
            Some(c) => c,
            None => {
                let batch: Vec<MetricVector> = records.iter().map(|r| r.metrics).collect();
                own = MetricStatistics::from_batch(&batch)?;
                &own
            }
        };
        let w = self.config.effective_weights().metric_weights();
        Ok(records
            .iter()
            .map(|r| {
                let reg = reference.apply(r.metrics.values());
                let x = reg.to_array();
                let terms = [w[0] * x[0], w[1] * x[1], w[2] * x[2], w[3] * x[3], -w[4] * x[4]];
                MemoryView {
                    record: r.clone(),
                    breakdown: Breakdown {
                        regularized: reg,
                        terms: MetricValues::from_array(terms),
                    },
                }
            })
            .collect())
    }

    /// Rewrite the store file compactly.
    pub fn flush(&mut self) -> Result<()> {
        self.store.compact()
    }
}

fn join_texts(utterances: &[Utterance]) -> String {
    utterances
        .iter()
        .map(|u| u.text.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forgetting::Strategy;
    use crate::scoring::Generator;
    use std::sync::Arc;

    #[test]
    fn empty_store_turn_uses_marker() {
        let mut e = ChatEngine::stub(EngineConfig::default()).unwrap();
        let s = e.open_session().unwrap();
        let t = e.handle_turn(s, "hello there").unwrap();
        assert!(t.retrieved.is_empty());
        assert_eq!(t.bot_text, "That sounds interesting. Tell me more!");
        assert_eq!(e.store().len(), 1);
        assert_eq!(e.session(s).unwrap().transcript.len(), 2);
    }

    #[test]
    fn second_session_recalls_fact() {
        let mut e = ChatEngine::stub(EngineConfig::default()).unwrap();
        let s = e.open_session().unwrap();
        e.handle_turn(s, "my hometown is Kyoto").unwrap();
        e.close_session(s).unwrap();
        let s = e.open_session().unwrap();
        let t = e.handle_turn(s, "my hometown is Kyoto").unwrap();
        assert_eq!(t.retrieved.len(), 1);
        assert!(t.bot_text.contains("Kyoto"));
        let rec = e.store().get(t.retrieved[0].record_id).unwrap();
        assert_eq!(rec.metrics.r1, 1);
        assert_eq!(rec.session_last_used, 2);
    }

    #[test]
    fn second_turn_sees_first_exchange() {
        let mut e = ChatEngine::stub(EngineConfig::default()).unwrap();
        let s = e.open_session().unwrap();
        e.handle_turn(s, "first message").unwrap();
        e.handle_turn(s, "second message").unwrap();
        let rec = &e.store().records()[1];
        assert_eq!(rec.bot_text, e.session(s).unwrap().transcript[1].text);
    }

    struct Failing;
    impl Generator for Failing {
        fn complete(&self, _: Task, _: &str) -> Result<String> {
            Err(Error::ProviderUnavailable("offline".into()))
        }
    }

    #[test]
    fn failed_turn_changes_nothing() {
        let mut e = ChatEngine::stub(EngineConfig::default()).unwrap();
        let s = e.open_session().unwrap();
        e.handle_turn(s, "my hometown is Kyoto").unwrap();
        let before: Vec<_> = e.store().records().to_vec();
        let transcript = e.session(s).unwrap().transcript;
        e.providers.generator = Arc::new(Failing);
        assert!(e.handle_turn(s, "my hometown is Kyoto").is_err());
        assert_eq!(e.store().records(), &before[..]);
        assert_eq!(e.session(s).unwrap().transcript, transcript);
        assert!(e.close_session(s).is_err());
        assert_eq!(e.store().open_session(), Some(s));
    }

    #[test]
    fn lifecycle_errors() {
        let mut e = ChatEngine::stub(EngineConfig::for_strategy(Strategy::Naive)).unwrap();
        let s = e.open_session().unwrap();
        assert!(matches!(e.open_session(), Err(Error::Lifecycle(_))));
        e.handle_turn(s, "a").unwrap();
        let r = e.close_session(s).unwrap();
        assert_eq!(r.retained, r.considered);
        assert!(matches!(e.close_session(s), Err(Error::Lifecycle(_))));
        assert!(matches!(e.handle_turn(s, "b"), Err(Error::Lifecycle(_))));
        assert_eq!(e.open_session().unwrap(), 2);
    }

    #[test]
    fn index_matches_report_after_close() {
        let mut e = ChatEngine::stub(EngineConfig::default()).unwrap();
        let s = e.open_session().unwrap();
        for i in 0..12 {
            e.handle_turn(s, &format!("message number {i} about topic {}", i * 7)).unwrap();
        }
        let r = e.close_session(s).unwrap();
        let mut index: Vec<MemoryId> = e.store().index().map(|r| r.id).collect();
        let mut kept = r.retained_ids.clone();
        index.sort();
        kept.sort();
        assert_eq!(index, kept);
        assert_eq!(r.retained, 2);
        assert_eq!(e.memories().unwrap().len(), 12);
    }

    #[test]
    fn qa_pairs_are_validated() {
        let mut e = ChatEngine::stub(EngineConfig::default()).unwrap();
        let s = e.open_session().unwrap();
        let qa = |o| QAPair {
            question: "q?".into(),
            gold_answer: "a".into(),
            session_of_origin: o,
            gold_memory_id: None,
        };
        assert!(e.add_qa(s, vec![qa(2)]).is_err());
        assert!(e.add_qa(7, vec![qa(7)]).is_err());
        e.add_qa(s, vec![qa(1), qa(1), qa(1)]).unwrap();
        assert_eq!(e.qa_pairs().unwrap().len(), 3);
    }
}
