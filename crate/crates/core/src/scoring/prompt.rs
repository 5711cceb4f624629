//! Prompt templates and reply grammars.

use crate::error::{Error, Result};
use crate::scoring::ExchangeText;
use crate::session::Utterance;

/// Number of recent utterances given to the generator.
pub const CONTEXT_UTTERANCES: usize = 5;

/// Placed in the memory slot when retrieval found nothing.
pub const EMPTY_MEMORY_MARKER: &str = "(no relevant memory)";

pub const SUMMARY_LABEL: &str = "- Key Summary of Past Conversations: ";
pub const UTTERANCES_LABEL: &str = "- Recent Utterances: ";
pub const MEMORY_LABEL: &str = "- Memory Relevant to Current Conversation: ";

const RESPONSE_PREAMBLE: &str = "You will be provided with 3 pieces of information:

1. Key Summary: A summary of past conversations .
2. Recent Utterances: The latest exchanges between you and the user.
3. Relevant Memory: The memory most pertinent to the current conversation.

Using these details, you are tasked with generating an effective response.
Ensure that your reply maintains a casual tone to mimic a genuine interaction with a friend.

Here's the information:

";

/// The last `CONTEXT_UTTERANCES` utterances of `context`.
pub fn recent(context: &[Utterance]) -> &[Utterance] {
    &context[context.len().saturating_sub(CONTEXT_UTTERANCES)..]
}

pub fn format_utterances(utterances: &[Utterance]) -> String {
    utterances
        .iter()
        .map(|u| format!("{}: {}", u.speaker, u.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Response prompt with the summary, recent utterances and memory fields.
///
/// The memory field is always last, so everything after [`MEMORY_LABEL`] is
/// the memory text.
pub fn response_prompt(summary: &str, context: &[Utterance], memory: Option<&str>) -> String {
    let memory = memory.unwrap_or(EMPTY_MEMORY_MARKER);
    format!(
        "{RESPONSE_PREAMBLE}{SUMMARY_LABEL}{summary}\n{UTTERANCES_LABEL}{}\n{MEMORY_LABEL}{memory}",
        format_utterances(recent(context))
    )
}

/// Memory text carried by a prompt built with [`response_prompt`].
pub fn memory_field(prompt: &str) -> Option<&str> {
    prompt.rsplit_once(MEMORY_LABEL).map(|(_, m)| m)
}

pub const UTTERANCE_LABEL: &str = "User utterance: ";

pub fn importance_prompt(x: &ExchangeText) -> String {
    format!(
        "Rate how important the user's utterance below is to remember for future \
         conversations with this user, on a scale from 0 (trivial) to 1 (essential).\n\
         Reply with exactly one line of the form `importance: <number between 0 and 1>`.\n\n\
         Chatbot utterance: {}\n{UTTERANCE_LABEL}{}",
        x.bot_context, x.user_text
    )
}

pub const PREVIOUS_SUMMARY_LABEL: &str = "Previous summary:\n";
pub const TRANSCRIPT_LABEL: &str = "\n\nConversation:\n";

pub fn summary_prompt(previous: &str, transcript: &[Utterance], max_chars: usize) -> String {
    format!(
        "Update the summary of past conversations with the user using the new conversation \
         below. Keep the facts about the user and stay under {max_chars} characters.\n\n\
         {PREVIOUS_SUMMARY_LABEL}{previous}{TRANSCRIPT_LABEL}{}",
        format_utterances(transcript)
    )
}

/// Parse `importance: <x>` (case-insensitive) with `x` in `[0, 1]`.
pub fn parse_importance_reply(reply: &str) -> Result<f64> {
    let fail = |reason: &str| Error::Parse {
        raw: reply.to_string(),
        reason: reason.to_string(),
    };
    let lower = reply.to_ascii_lowercase();
    let at = lower
        .find("importance:")
        .ok_or_else(|| fail("expected `importance: <number>`"))?;
    let rest = reply[at + "importance:".len()..].trim_start();
    let end = rest
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == '+' || c == 'e' || c == 'E'))
        .unwrap_or(rest.len());
    let token = rest[..end].trim_end_matches('.');
    let value: f64 = token.parse().map_err(|_| fail("importance is not a number"))?;
    if !(0.0..=1.0).contains(&value) {
        return Err(fail("importance must lie in [0, 1]"));
    }
    Ok(value)
}
