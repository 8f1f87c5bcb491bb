//! Episode protocol: the speaker sees the contexts, sends a message over a
//! discrete channel, and the listener picks a candidate from the message,
//! the questions and the candidates.

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::forge::Problem;
use crate::grad::GradError;
use crate::rules::{Panel, RuleVector};

/// Token 0 ends a message early.
pub const EOS: u32 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub max_len: usize,
    pub vocab_size: usize,
}

impl ChannelConfig {
    pub fn new(max_len: usize, vocab_size: usize) -> Self {
        assert!(max_len >= 1 && vocab_size >= 2, "degenerate channel");
        Self { max_len, vocab_size }
    }

    pub fn standard() -> Self {
        Self::new(4, 15)
    }

    /// Start-of-sequence token. It lies outside the speakable vocabulary and
    /// only appears as decoder input and in the blocked message.
    pub fn sos(&self) -> u32 {
        self.vocab_size as u32
    }

    /// Distinct messages the channel can carry (EOS-terminated prefixes
    /// included), saturating.
    pub fn capacity(&self) -> u128 {
        let content = (self.vocab_size - 1) as u128;
        let mut total: u128 = 0;
        let mut pow: u128 = 1;
        for len in 0..=self.max_len {
            // messages with `len` content tokens, EOS-terminated unless full
            if len > 0 {
                pow = pow.saturating_mul(content);
            }
            total = total.saturating_add(pow);
        }
        total
    }

    /// The constant message delivered in message-blocked episodes.
    pub fn blocked_message(&self) -> Message {
        Message(vec![self.sos(); self.max_len])
    }

    /// Checks a speaker-emitted message.
    pub fn validate(&self, m: &Message) -> Result<(), ChannelViolation> {
        if m.0.is_empty() {
            return Err(ChannelViolation::Empty);
        }
        if m.0.len() > self.max_len {
            return Err(ChannelViolation::TooLong {
                len: m.0.len(),
                max: self.max_len,
            });
        }
        for (i, &t) in m.0.iter().enumerate() {
            if t as usize >= self.vocab_size {
                return Err(ChannelViolation::TokenOutOfRange {
                    position: i,
                    token: t,
                    vocab: self.vocab_size,
                });
            }
            if t == EOS && i + 1 != m.0.len() {
                return Err(ChannelViolation::TokenAfterEos { position: i + 1 });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ChannelViolation {
    #[error("empty message")]
    Empty,
    #[error("message of length {len} exceeds the limit {max}")]
    TooLong { len: usize, max: usize },
    #[error("token {token} at position {position} is outside the vocabulary of {vocab}")]
    TokenOutOfRange {
        position: usize,
        token: u32,
        vocab: usize,
    },
    #[error("token at position {position} follows end-of-sequence")]
    TokenAfterEos { position: usize },
}

/// Token sequence, delivered up to and including EOS.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Message(pub Vec<u32>);

impl Message {
    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    /// Tokens before EOS.
    pub fn content(&self) -> &[u32] {
        match self.0.iter().position(|&t| t == EOS) {
            Some(i) => &self.0[..i],
            None => &self.0,
        }
    }
}

impl std::fmt::Display for Message {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeMode {
    Sampled,
    Greedy,
    MessageBlocked,
}

/// How an agent turns a distribution into a choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decode {
    Sample,
    Greedy,
}

impl EpisodeMode {
    fn decode(self) -> Decode {
        match self {
            EpisodeMode::Sampled => Decode::Sample,
            _ => Decode::Greedy,
        }
    }
}

/// Everything the speaker may see.
#[derive(Clone, Copy, Debug)]
pub struct SpeakerView<'a> {
    pub contexts: &'a [Panel],
}

/// Everything the listener may see besides the message.
#[derive(Clone, Copy, Debug)]
pub struct ListenerView<'a> {
    pub questions: &'a [Panel],
    pub candidates: &'a [Panel],
}

impl<'a> SpeakerView<'a> {
    pub fn of(p: &'a Problem) -> Self {
        Self {
            contexts: &p.contexts,
        }
    }
}

impl<'a> ListenerView<'a> {
    pub fn of(p: &'a Problem) -> Self {
        Self {
            questions: &p.questions,
            candidates: &p.candidates,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GameError {
    #[error("channel violation: {0}")]
    Channel(#[from] ChannelViolation),
    #[error("context rows admit rules {candidates:?} on attribute {attribute}")]
    RuleExtractionAmbiguous {
        attribute: usize,
        candidates: Vec<String>,
    },
    #[error("message {0} cannot be decoded")]
    UndecodableMessage(Message),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("{0}")]
    Agent(String),
}

pub trait Speaker {
    fn speak(
        &self,
        views: &[SpeakerView<'_>],
        decode: Decode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Message>, GameError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ListenerOutput {
    /// Probability per candidate.
    pub scores: Vec<f64>,
    pub prediction: usize,
}

pub trait Listener {
    fn listen(
        &self,
        messages: &[Message],
        views: &[ListenerView<'_>],
        decode: Decode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<ListenerOutput>, GameError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub problem_id: u64,
    pub message: Message,
    pub prediction: usize,
    pub target: usize,
    pub reward: u8,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchResult {
    pub accuracy: f64,
    pub episodes: Vec<EpisodeResult>,
}

/// One episode. In blocked mode the speaker is not consulted.
pub fn run_episode(
    speaker: &dyn Speaker,
    listener: &dyn Listener,
    channel: &ChannelConfig,
    problem: &Problem,
    mode: EpisodeMode,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeResult, GameError> {
    let mut r = run_batch(speaker, listener, channel, std::slice::from_ref(problem), mode, rng)?;
    Ok(r.episodes.remove(0))
}

pub fn run_batch(
    speaker: &dyn Speaker,
    listener: &dyn Listener,
    channel: &ChannelConfig,
    problems: &[Problem],
    mode: EpisodeMode,
    rng: &mut ChaCha8Rng,
) -> Result<BatchResult, GameError> {
    if problems.is_empty() {
        return Ok(BatchResult {
            accuracy: 0.0,
            episodes: Vec::new(),
        });
    }
    let messages = if mode == EpisodeMode::MessageBlocked {
        vec![channel.blocked_message(); problems.len()]
    } else {
        let views: Vec<SpeakerView> = problems.iter().map(SpeakerView::of).collect();
        let ms = speaker.speak(&views, mode.decode(), rng)?;
        for m in &ms {
            channel.validate(m)?;
        }
        ms
    };
    let views: Vec<ListenerView> = problems.iter().map(ListenerView::of).collect();
    let outs = listener.listen(&messages, &views, mode.decode(), rng)?;
    let episodes: Vec<EpisodeResult> = problems
        .iter()
        .zip(messages)
        .zip(outs)
        .map(|((p, message), out)| EpisodeResult {
            problem_id: p.id,
            message,
            prediction: out.prediction,
            target: p.target_index,
            reward: u8::from(out.prediction == p.target_index),
            scores: out.scores,
        })
        .collect();
    let accuracy = episodes.iter().map(|e| e.reward as f64).sum::<f64>() / episodes.len() as f64;
    Ok(BatchResult { accuracy, episodes })
}

/// Line-delimited episode log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub problem_id: u64,
    pub rules: RuleVector,
    pub message: Message,
    pub prediction: usize,
    pub target: usize,
    pub reward: u8,
}

pub fn write_episode_log(
    path: &Path,
    problems: &[Problem],
    episodes: &[EpisodeResult],
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (p, e) in problems.iter().zip(episodes) {
        let rec = EpisodeRecord {
            problem_id: e.problem_id,
            rules: p.rules.clone(),
            message: e.message.clone(),
            prediction: e.prediction,
            target: e.target,
            reward: e.reward,
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
