//! Deterministic offline providers.
//!
//! None of these approximate real models closely. They are pure functions
//! of their input so every pipeline property can be tested without network
//! access.

use crate::error::{Error, Result};
use crate::scoring::prompt::{self, MEMORY_LABEL, PREVIOUS_SUMMARY_LABEL, TRANSCRIPT_LABEL};
use crate::scoring::{
    ArousalScorer, Embedder, ExchangeText, Generator, ImportanceEstimator, PerplexityScorer, Task,
};

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

const EMOTION_WORDS: &[&str] = &[
    "amazing", "angry", "anxious", "awesome", "awful", "breakup", "broke", "cried", "crying",
    "danger", "dead", "died", "disaster", "dream", "excited", "exciting", "fantastic", "fear",
    "furious", "great", "grief", "happy", "hate", "heartbroken", "horrible", "hurt", "incredible",
    "love", "loved", "nervous", "panic", "passed", "proud", "rage", "sad", "scared", "shocked",
    "stressed", "surprised", "terrible", "terrified", "thrilled", "upset", "wedding", "won",
    "wonderful", "worried", "wow",
];

/// Emotion-lexicon hit rate plus a bonus per exclamation mark (up to four).
#[derive(Debug, Clone, Copy, Default)]
pub struct LexiconArousal;

impl LexiconArousal {
    pub const EXCLAMATION_BONUS: f64 = 0.25;
}

impl ArousalScorer for LexiconArousal {
    fn score_arousal(&self, x: &ExchangeText) -> Result<f64> {
        x.validate()?;
        let (mut n, mut hits) = (0usize, 0usize);
        for t in tokens(&x.user_text) {
            n += 1;
            if EMOTION_WORDS.binary_search(&t.as_str()).is_ok() {
                hits += 1;
            }
        }
        let rate = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        let bangs = x.user_text.matches('!').count().min(4) as f64;
        Ok(rate + Self::EXCLAMATION_BONUS * bangs)
    }
}

/// Common English letter bigrams with their relative frequency (percent).
const BIGRAM_TABLE: &[(&[u8; 2], f64)] = &[
    (b"th", 3.56), (b"he", 3.07), (b"in", 2.43), (b"er", 2.05), (b"an", 1.99),
    (b"re", 1.85), (b"on", 1.76), (b"at", 1.49), (b"en", 1.45), (b"nd", 1.35),
    (b"ti", 1.34), (b"es", 1.34), (b"or", 1.28), (b"te", 1.20), (b"of", 1.17),
    (b"ed", 1.17), (b"is", 1.13), (b"it", 1.12), (b"al", 1.09), (b"ar", 1.07),
    (b"st", 1.05), (b"to", 1.04), (b"nt", 1.04), (b"ng", 0.95), (b"se", 0.93),
    (b"ha", 0.93), (b"as", 0.87), (b"ou", 0.87), (b"io", 0.83), (b"le", 0.83),
    (b"ve", 0.83), (b"co", 0.79), (b"me", 0.79), (b"de", 0.76), (b"hi", 0.76),
    (b"ri", 0.73), (b"ro", 0.73), (b"ic", 0.70), (b"ne", 0.69), (b"ea", 0.69),
    (b"ra", 0.69), (b"ce", 0.65),
];

const ALPHABET: usize = 27;

fn symbol(c: char) -> usize {
    match c.to_ascii_lowercase() {
        ch @ 'a'..='z' => ch as usize - 'a' as usize,
        _ => 26,
    }
}

/// Adaptive character-bigram model primed with a bundled frequency table.
///
/// `p(b | a) = (n(a,b) + k * q(b | a)) / (n(a) + k)` where `q` comes from
/// the table and `n` counts bigrams already seen, starting with the
/// chatbot's context. Perplexity is `exp(mean -ln p)` over the user text,
/// so it is always at least 1 and repeated patterns become predictable.
#[derive(Debug, Clone)]
pub struct BigramPerplexity {
    prior: Vec<[f64; ALPHABET]>,
    concentration: f64,
}

impl Default for BigramPerplexity {
    fn default() -> Self {
        Self::new(4.0)
    }
}

impl BigramPerplexity {
    pub fn new(concentration: f64) -> Self {
        let base = 0.1;
        let mut prior = vec![[base; ALPHABET]; ALPHABET];
        for (pair, f) in BIGRAM_TABLE {
            prior[symbol(pair[0] as char)][symbol(pair[1] as char)] += f;
        }
        for row in &mut prior {
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= z);
        }
        Self {
            prior,
            concentration,
        }
    }
}

impl PerplexityScorer for BigramPerplexity {
    fn score_perplexity(&self, x: &ExchangeText) -> Result<f64> {
        x.validate()?;
        let mut counts = vec![[0u32; ALPHABET]; ALPHABET];
        let mut totals = [0u32; ALPHABET];
        let mut observe = |a: usize, b: usize| {
            counts[a][b] += 1;
            totals[a] += 1;
        };
        let ctx: Vec<usize> = x.bot_context.chars().map(symbol).collect();
        for w in ctx.windows(2) {
            observe(w[0], w[1]);
        }
        // the user text starts after a boundary symbol
        let mut prev = 26;
        let (mut nll, mut n) = (0.0, 0usize);
        for c in x.user_text.chars().map(symbol) {
            let k = self.concentration;
            let p = (f64::from(counts[prev][c]) + k * self.prior[prev][c])
                / (f64::from(totals[prev]) + k);
            nll -= p.ln();
            n += 1;
            counts[prev][c] += 1;
            totals[prev] += 1;
            prev = c;
        }
        Ok((nll / n as f64).exp().max(1.0))
    }
}

/// Character length over `full_length`, capped at 1.
#[derive(Debug, Clone, Copy)]
pub struct LengthImportance {
    pub full_length: usize,
}

impl Default for LengthImportance {
    fn default() -> Self {
        Self { full_length: 120 }
    }
}

impl ImportanceEstimator for LengthImportance {
    fn estimate_importance(&self, x: &ExchangeText) -> Result<f64> {
        x.validate()?;
        Ok(length_score(&x.user_text, self.full_length))
    }
}

fn length_score(text: &str, full: usize) -> f64 {
    (text.trim().chars().count() as f64 / full.max(1) as f64).min(1.0)
}

const STOPWORDS: &[&str] = &[
    "a", "about", "am", "an", "and", "are", "as", "at", "be", "but", "by", "did", "do", "does",
    "for", "from", "had", "has", "have", "i", "i'm", "in", "is", "it", "it's", "me", "my", "of",
    "on", "or", "so", "that", "the", "this", "to", "was", "we", "were", "what", "with", "you",
    "your",
];

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hashed bag of words (stopwords dropped), L2-normalized.
///
/// Text with no content words maps to a fixed unit vector.
#[derive(Debug, Clone, Copy)]
pub struct HashedEmbedder {
    dimension: usize,
}

impl HashedEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }
}

impl Embedder for HashedEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let mut v = vec![0f64; self.dimension];
        for t in tokens(text) {
            if STOPWORDS.binary_search(&t.as_str()).is_ok() {
                continue;
            }
            v[(fnv1a(t.as_bytes()) % self.dimension as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            v[(fnv1a(b"") % self.dimension as u64) as usize] = 1.0;
            return Ok(v.into_iter().map(|x| x as f32).collect());
        }
        Ok(v.into_iter().map(|x| (x / norm) as f32).collect())
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

/// Canned generator: responses echo the memory found in the prompt.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoGenerator;

impl EchoGenerator {
    pub const SUMMARY_LIMIT: usize = 1500;
    const WORDS_PER_LINE: usize = 8;
}

impl Generator for EchoGenerator {
    fn complete(&self, task: Task, prompt: &str) -> Result<String> {
        match task {
            Task::Response => {
                let memory = prompt::memory_field(prompt)
                    .ok_or_else(|| Error::Generation(format!("prompt lacks {MEMORY_LABEL:?}")))?;
                if memory == prompt::EMPTY_MEMORY_MARKER {
                    Ok("That sounds interesting. Tell me more!".to_string())
                } else {
                    Ok(format!(
                        "I remember this: {}. How is that going?",
                        memory.replace('\n', " / ")
                    ))
                }
            }
            Task::Importance => {
                let utterance = prompt
                    .rsplit_once(prompt::UTTERANCE_LABEL)
                    .map(|(_, u)| u)
                    .unwrap_or("");
                Ok(format!(
                    "importance: {}",
                    length_score(utterance, LengthImportance::default().full_length)
                ))
            }
            Task::Summary => Ok(summarize(prompt)),
        }
    }
}

/// Previous summary plus the opening words of each new user utterance,
/// keeping only the most recent tail if it grows past the limit.
fn summarize(prompt: &str) -> String {
    let body = prompt
        .split_once(PREVIOUS_SUMMARY_LABEL)
        .map(|(_, b)| b)
        .unwrap_or("");
    let (previous, transcript) = body.split_once(TRANSCRIPT_LABEL).unwrap_or((body, ""));
    let mut parts: Vec<String> = Vec::new();
    if !previous.trim().is_empty() {
        parts.push(previous.trim().to_string());
    }
    for line in transcript.lines() {
        if let Some(text) = line.strip_prefix("User: ") {
            let words: Vec<&str> = text.split_whitespace().take(EchoGenerator::WORDS_PER_LINE).collect();
            if !words.is_empty() {
                parts.push(words.join(" "));
            }
        }
    }
    let mut summary = parts.join("; ");
    if summary.chars().count() > EchoGenerator::SUMMARY_LIMIT {
        let skip = summary.chars().count() - EchoGenerator::SUMMARY_LIMIT;
        let tail: String = summary.chars().skip(skip).collect();
        summary = match tail.split_once(' ') {
            Some((_, rest)) => rest.to_string(),
            None => tail,
        };
    }
    summary
}
