//! Durable memory store.
//!
//! The store is a fold over [`Event`]s. With a backing file, every commit is
//! appended as JSONL and synced before it is applied in memory, and loading
//! replays the same events. Record events are full snapshots, so the last
//! one for an id wins.
//!
//! Line format (`"v": 1`):
//!
//! ```text
//! {"v":1,"type":"meta","dimension":256}
//! {"v":1,"type":"session_open","session":1}
//! {"v":1,"type":"utterance","session":1,"speaker":"user","text":"hi","turn":0}
//! {"v":1,"type":"record","id":0,"user_text":"hi",...}
//! {"v":1,"type":"session_close","session":1,"summary":"...","report":{...}}
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forgetting::ForgettingReport;
use crate::memory::{MemoryId, MemoryRecord, MetricVector};
use crate::session::{SessionState, Speaker, Utterance};

pub const SCHEMA_VERSION: u32 = 1;

/// Upper bound on the rolling summary, in characters.
pub const SUMMARY_MAX_CHARS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Meta {
        dimension: usize,
    },
    Record(#[serde(with = "record_exact")] MemoryRecord),
    SessionOpen {
        session: u32,
    },
    Utterance {
        session: u32,
        speaker: Speaker,
        text: String,
        turn: u32,
    },
    SessionClose {
        session: u32,
        summary: String,
        report: ForgettingReport,
    },
}

#[derive(Serialize, Deserialize)]
struct Line {
    v: u32,
    #[serde(flatten)]
    event: Event,
}

/// Embeddings are written as the f64 image of each f32 so buffered
/// deserialization recovers them bit for bit.
mod record_exact {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wire {
        id: MemoryId,
        user_text: String,
        bot_text: String,
        embedding: Vec<f64>,
        session_created: u32,
        session_last_used: u32,
        metrics: MetricVector,
        strength: f64,
        importance: f64,
        retained: bool,
    }

    pub fn serialize<S: Serializer>(r: &MemoryRecord, s: S) -> std::result::Result<S::Ok, S::Error> {
        Wire {
            id: r.id,
            user_text: r.user_text.clone(),
            bot_text: r.bot_text.clone(),
            embedding: r.embedding.iter().map(|&x| f64::from(x)).collect(),
            session_created: r.session_created,
            session_last_used: r.session_last_used,
            metrics: r.metrics,
            strength: r.strength,
            importance: r.importance,
            retained: r.retained,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<MemoryRecord, D::Error> {
        let w = Wire::deserialize(d)?;
        Ok(MemoryRecord {
            id: w.id,
            user_text: w.user_text,
            bot_text: w.bot_text,
            embedding: w.embedding.into_iter().map(|x| x as f32).collect(),
            session_created: w.session_created,
            session_last_used: w.session_last_used,
            metrics: w.metrics,
            strength: w.strength,
            importance: w.importance,
            retained: w.retained,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionLog {
    pub transcript: Vec<Utterance>,
    /// Summary in force while the session was open.
    pub summary_before: String,
    pub closed: bool,
    pub report: Option<ForgettingReport>,
}

#[derive(Debug)]
struct Log {
    path: PathBuf,
    file: BufWriter<File>,
}

/// All memories of one (user, strategy) pair plus their session history.
#[derive(Debug, Default)]
pub struct MemoryStore {
    dimension: Option<usize>,
    records: Vec<MemoryRecord>,
    by_id: HashMap<MemoryId, usize>,
    next_id: u64,
    sessions: BTreeMap<u32, SessionLog>,
    summary: String,
    log: Option<Log>,
}

impl PartialEq for MemoryStore {
    fn eq(&self, other: &Self) -> bool {
        self.dimension == other.dimension
            && self.records == other.records
            && self.next_id == other.next_id
            && self.sessions == other.sessions
            && self.summary == other.summary
    }
}

impl MemoryStore {
    pub fn in_memory(dimension: usize) -> Self {
        Self {
            dimension: Some(dimension),
            ..Default::default()
        }
    }

    /// Open the store at `path`, creating it if missing.
    pub fn open(path: &Path, dimension: usize) -> Result<Self> {
        let mut store = if path.exists() {
            load_store(path)?
        } else {
            Self::default()
        };
        match store.dimension {
            Some(d) if d != dimension => {
                return Err(Error::Config(format!(
                    "{} holds {d}-dimensional embeddings, configured {dimension}",
                    path.display()
                )))
            }
            Some(_) => store.attach(path)?,
            None => {
                store.attach(path)?;
                store.commit(vec![Event::Meta { dimension }])?;
            }
        }
        Ok(store)
    }

    fn attach(&mut self, path: &Path) -> Result<()> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.log = Some(Log {
            path: path.to_path_buf(),
            file: BufWriter::new(file),
        });
        Ok(())
    }

    pub fn path(&self) -> Option<&Path> {
        self.log.as_ref().map(|l| l.path.as_path())
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Every record, retained or archived, in insertion order.
    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    /// Records visible to retrieval.
    pub fn index(&self) -> impl Iterator<Item = &MemoryRecord> {
        self.records.iter().filter(|r| r.retained)
    }

    pub fn get(&self, id: MemoryId) -> Option<&MemoryRecord> {
        self.by_id.get(&id).map(|&i| &self.records[i])
    }

    pub fn sessions(&self) -> &BTreeMap<u32, SessionLog> {
        &self.sessions
    }

    /// Summary of all closed sessions.
    pub fn summary(&self) -> &str {
        &self.summary
    }

    pub fn open_session(&self) -> Option<u32> {
        self.sessions
            .iter()
            .rev()
            .find(|(_, s)| !s.closed)
            .map(|(&i, _)| i)
    }

    pub fn last_session(&self) -> u32 {
        self.sessions.keys().next_back().copied().unwrap_or(0)
    }

    pub fn session_state(&self, session: u32) -> Option<SessionState> {
        self.sessions.get(&session).map(|s| SessionState {
            session_index: session,
            transcript: s.transcript.clone(),
            summary: s.summary_before.clone(),
            open: !s.closed,
        })
    }

    pub fn reports(&self) -> impl Iterator<Item = &ForgettingReport> {
        self.sessions.values().filter_map(|s| s.report.as_ref())
    }

    /// A fresh record for the next id, not yet committed.
    pub fn new_record(
        &self,
        session: u32,
        user_text: String,
        bot_text: String,
        embedding: Vec<f32>,
        metrics: MetricVector,
    ) -> MemoryRecord {
        MemoryRecord {
            id: MemoryId(self.next_id),
            user_text,
            bot_text,
            embedding,
            session_created: session,
            session_last_used: session,
            metrics: MetricVector {
                r1: 0,
                r2: 0,
                ..metrics
            },
            strength: 0.0,
            // nothing has elapsed yet
            importance: 1.0,
            retained: true,
        }
    }

    /// Append one exchange to an open session.
    pub fn append_exchange(
        &mut self,
        session: u32,
        user_text: impl Into<String>,
        bot_text: impl Into<String>,
        embedding: Vec<f32>,
        metrics: MetricVector,
    ) -> Result<MemoryRecord> {
        self.require_open(session)?;
        let rec = self.new_record(session, user_text.into(), bot_text.into(), embedding, metrics);
        self.commit(vec![Event::Record(rec.clone())])?;
        Ok(rec)
    }

    pub fn require_open(&self, session: u32) -> Result<()> {
        match self.sessions.get(&session) {
            Some(s) if !s.closed => Ok(()),
            Some(_) => Err(Error::Lifecycle(format!("session {session} is closed"))),
            None => Err(Error::Lifecycle(format!("session {session} does not exist"))),
        }
    }

    /// Overwrite an existing record.
    pub fn replace(&mut self, record: MemoryRecord) -> Result<()> {
        self.replace_all(vec![record])
    }

    pub fn replace_all(&mut self, records: Vec<MemoryRecord>) -> Result<()> {
        for r in &records {
            if !self.by_id.contains_key(&r.id) {
                return Err(Error::Consistency(format!("unknown memory {}", r.id)));
            }
        }
        self.commit(records.into_iter().map(Event::Record).collect())
    }

    /// Validate, persist, then apply `events` as one unit.
    pub fn commit(&mut self, events: Vec<Event>) -> Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        self.check(&events)?;
        if let Some(log) = &mut self.log {
            for e in &events {
                serde_json::to_writer(
                    &mut log.file,
                    &Line {
                        v: SCHEMA_VERSION,
                        event: e.clone(),
                    },
                )
                .map_err(std::io::Error::other)?;
                log.file.write_all(b"\n")?;
            }
            log.file.flush()?;
            log.file.get_ref().sync_data()?;
        }
        for e in events {
            self.apply(e)?;
        }
        Ok(())
    }

    fn check(&self, events: &[Event]) -> Result<()> {
        let mut dim = self.dimension;
        for e in events {
            match e {
                Event::Meta { dimension } => {
                    if dim.is_some_and(|d| d != *dimension) {
                        return Err(Error::Consistency("dimension changed".into()));
                    }
                    dim = Some(*dimension);
                }
                Event::Record(r) => {
                    if dim.is_some_and(|d| d != r.embedding.len()) {
                        return Err(Error::Consistency(format!(
                            "memory {} has dimension {}, store uses {}",
                            r.id,
                            r.embedding.len(),
                            dim.unwrap_or(0)
                        )));
                    }
                    if r.session_last_used < r.session_created {
                        return Err(Error::Consistency(format!(
                            "memory {} last used before it was created",
                            r.id
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn apply(&mut self, e: Event) -> Result<()> {
        match e {
            Event::Meta { dimension } => self.dimension = Some(dimension),
            Event::Record(r) => {
                self.next_id = self.next_id.max(r.id.0 + 1);
                match self.by_id.get(&r.id) {
                    Some(&i) => self.records[i] = r,
                    None => {
                        self.by_id.insert(r.id, self.records.len());
                        self.records.push(r);
                    }
                }
            }
            Event::SessionOpen { session } => {
                if session <= self.last_session() {
                    return Err(Error::Lifecycle(format!(
                        "session {session} does not follow {}",
                        self.last_session()
                    )));
                }
                self.sessions.insert(
                    session,
                    SessionLog {
                        summary_before: self.summary.clone(),
                        ..Default::default()
                    },
                );
            }
            Event::Utterance {
                session,
                speaker,
                text,
                turn,
            } => {
                let s = self
                    .sessions
                    .get_mut(&session)
                    .ok_or_else(|| Error::Lifecycle(format!("no session {session}")))?;
                s.transcript.push(Utterance { speaker, text, turn });
            }
            Event::SessionClose {
                session,
                summary,
                report,
            } => {
                let s = self
                    .sessions
                    .get_mut(&session)
                    .ok_or_else(|| Error::Lifecycle(format!("no session {session}")))?;
                s.closed = true;
                s.report = Some(report);
                self.summary = summary;
            }
        }
        Ok(())
    }

    /// Events that rebuild this store from nothing.
    pub fn snapshot(&self) -> Vec<Event> {
        let mut out = Vec::new();
        if let Some(dimension) = self.dimension {
            out.push(Event::Meta { dimension });
        }
        for (&session, log) in &self.sessions {
            out.push(Event::SessionOpen { session });
            for u in &log.transcript {
                out.push(Event::Utterance {
                    session,
                    speaker: u.speaker,
                    text: u.text.clone(),
                    turn: u.turn,
                });
            }
            if let (true, Some(report)) = (log.closed, &log.report) {
                // summary after this session is the next one's starting summary
                let summary = self
                    .sessions
                    .range(session + 1..)
                    .next()
                    .map(|(_, s)| s.summary_before.clone())
                    .unwrap_or_else(|| self.summary.clone());
                out.push(Event::SessionClose {
                    session,
                    summary,
                    report: report.clone(),
                });
            }
        }
        out.extend(self.records.iter().cloned().map(Event::Record));
        out
    }

    /// Rewrite the backing file as a compact snapshot.
    pub fn compact(&mut self) -> Result<()> {
        let Some(path) = self.path().map(Path::to_path_buf) else {
            return Ok(());
        };
        self.log = None;
        save_store(self, &path)?;
        self.attach(&path)
    }
}

/// Load a store from JSONL. An empty file is an empty store.
pub fn load_store(path: &Path) -> Result<MemoryStore> {
    let f = File::open(path)?;
    let mut store = MemoryStore::default();
    let err = |line: usize, reason: String| Error::Persistence {
        path: path.display().to_string(),
        line,
        reason,
    };
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| err(i + 1, e.to_string()))?;
        if parsed.v != SCHEMA_VERSION {
            return Err(err(i + 1, format!("unsupported schema version {}", parsed.v)));
        }
        store.check(std::slice::from_ref(&parsed.event))
            .and_then(|_| store.apply(parsed.event))
            .map_err(|e| err(i + 1, e.to_string()))?;
    }
    Ok(store)
}

/// Write `store` to `path` atomically as a compact snapshot.
pub fn save_store(store: &MemoryStore, path: &Path) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        for event in store.snapshot() {
            serde_json::to_writer(&mut w, &Line {
                v: SCHEMA_VERSION,
                event,
            })
            .map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        w.get_ref().sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
