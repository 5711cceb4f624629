//! Session-level types: transcripts, context windows and QA pairs.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::MemoryId;
use crate::scoring::prompt::{recent, CONTEXT_UTTERANCES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Chatbot,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::User => "User",
            Speaker::Chatbot => "Chatbot",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    /// Position in the session transcript, from 0.
    pub turn: u32,
}

/// Snapshot of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_index: u32,
    pub transcript: Vec<Utterance>,
    /// Summary of everything before this session.
    pub summary: String,
    pub open: bool,
}

impl SessionState {
    /// The last `min(5, len)` utterances.
    pub fn context_window(&self) -> &[Utterance] {
        recent(&self.transcript)
    }

    /// Text of the most recent chatbot utterance, or empty.
    pub fn last_bot_text(&self) -> &str {
        self.transcript
            .iter()
            .rev()
            .find(|u| u.speaker == Speaker::Chatbot)
            .map(|u| u.text.as_str())
            .unwrap_or("")
    }
}

pub const CONTEXT_WINDOW: usize = CONTEXT_UTTERANCES;

/// Number of QA pairs expected per completed session.
pub const QA_PER_SESSION: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub question: String,
    pub gold_answer: String,
    pub session_of_origin: u32,
    /// Memory that carries the answer, when annotated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_memory_id: Option<MemoryId>,
}

/// `store.jsonl` -> `store.qa.jsonl`.
pub fn qa_path(store_path: &Path) -> PathBuf {
    let stem = store_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "store".into());
    store_path.with_file_name(format!("{stem}.qa.jsonl"))
}

pub fn append_qa(path: &Path, pairs: &[QAPair]) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = String::new();
    for p in pairs {
        buf.push_str(&serde_json::to_string(p).map_err(|e| Error::Config(e.to_string()))?);
        buf.push('\n');
    }
    f.write_all(buf.as_bytes())?;
    f.sync_data()?;
    Ok(())
}

/// Read a QA corpus: one JSON object per line, blank lines ignored.
pub fn load_qa(path: &Path) -> Result<Vec<QAPair>> {
    let f = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let qa = serde_json::from_str(&line).map_err(|e| Error::Persistence {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(qa);
    }
    Ok(out)
}
