//! Edge judging: each message edge gets a sign in {-1, 0, 1} saying whether
//! the sender's message hurt, did nothing for, or helped the receiver's output.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::MasGraph;

pub mod llm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Sign {
    Neg,
    Zero,
    Pos,
}

impl Sign {
    pub fn value(self) -> i8 {
        match self {
            Sign::Neg => -1,
            Sign::Zero => 0,
            Sign::Pos => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }

    pub const ALL: [Sign; 3] = [Sign::Neg, Sign::Zero, Sign::Pos];
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        s.value()
    }
}

impl TryFrom<i8> for Sign {
    type Error = String;
    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            -1 => Ok(Sign::Neg),
            0 => Ok(Sign::Zero),
            1 => Ok(Sign::Pos),
            other => Err(format!("sign out of range: {other}")),
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum JudgeError {
    #[error("empty message text")]
    EmptyMessage,
    #[error("reply has no [score] marker")]
    NoScoreMarker,
    #[error("score {0} is not one of -1, 0, 1")]
    OutOfRangeScore(i64),
    #[error("judge endpoint unavailable: {0}")]
    JudgeUnavailable(String),
    #[error("edge {edge} lacks the stance data the synthetic judge needs")]
    MissingStance { edge: usize },
    #[error("invalid judge config: {0}")]
    InvalidConfig(String),
}

const SCORE_PROMPT: &str = "You are a sentiment analyzer. In the following conversation, an advisor has responded to an assistant. Please denote whether the advisor agrees with the assistant, and score it using a grade of 1, -1, or 0. Note that -1 is a disagreement, 1 is an agreement, and 0 is neutral. Please answer with '[score] x', replace x with the grade you give.";

/// The sender's message plays the assistant, the receiver's output the advisor.
pub fn build_score_prompt(sender_message: &str, receiver_output: &str) -> Result<String, JudgeError> {
    if sender_message.trim().is_empty() || receiver_output.trim().is_empty() {
        return Err(JudgeError::EmptyMessage);
    }
    Ok(format!("{SCORE_PROMPT}\n\nAssistant: {sender_message}\n\nAdvisor: {receiver_output}"))
}

pub fn parse_score(reply: &str) -> Result<Sign, JudgeError> {
    const MARKER: &str = "[score]";
    // ASCII lowercasing keeps byte offsets aligned with the original.
    let lower = reply.to_ascii_lowercase();
    let pos = lower.find(MARKER).ok_or(JudgeError::NoScoreMarker)?;
    let rest = reply[pos + MARKER.len()..].trim_start();
    let rest = rest.strip_prefix(':').unwrap_or(rest).trim_start();
    let sign_len = usize::from(rest.starts_with(['-', '+']));
    let digits = rest[sign_len..].bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return Err(JudgeError::NoScoreMarker);
    }
    let token = &rest[..sign_len + digits];
    let v: i64 = token.parse().map_err(|_| JudgeError::OutOfRangeScore(i64::MAX))?;
    match v {
        -1 => Ok(Sign::Neg),
        0 => Ok(Sign::Zero),
        1 => Ok(Sign::Pos),
        other => Err(JudgeError::OutOfRangeScore(other)),
    }
}

/// Stance-level stand-in for the LLM judge. With probability `eta` the
/// nominal sign is swapped for one of the other two, chosen uniformly.
pub fn synthetic_verdict<R: Rng + ?Sized>(
    sender_stance: &str,
    receiver_out_stance: &str,
    receiver_rejected: bool,
    eta: f64,
    rng: &mut R,
) -> Sign {
    let nominal = if receiver_out_stance == sender_stance {
        Sign::Pos
    } else if receiver_rejected {
        Sign::Neg
    } else {
        Sign::Zero
    };
    if eta > 0.0 && rng.random::<f64>() < eta {
        let others: Vec<Sign> = Sign::ALL.into_iter().filter(|s| *s != nominal).collect();
        others[rng.random_range(0..2)]
    } else {
        nominal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JudgeConfig {
    Synthetic {
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    Llm(llm::LlmConfig),
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig::Synthetic { noise: 0.05, seed: 0 }
    }
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<(), JudgeError> {
        match self {
            JudgeConfig::Synthetic { noise, .. } => {
                if !(0.0..=1.0).contains(noise) {
                    return Err(JudgeError::InvalidConfig(format!("noise {noise} outside [0, 1]")));
                }
                Ok(())
            }
            JudgeConfig::Llm(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignedGraph {
    pub graph: MasGraph,
    /// Parallel to `graph.edges`.
    pub signs: Vec<Sign>,
}

impl SignedGraph {
    pub fn new(graph: MasGraph, signs: Vec<Sign>) -> Self {
        assert_eq!(graph.edges.len(), signs.len(), "one sign per edge");
        SignedGraph { graph, signs }
    }
}

/// Per-edge generator: same seed, stream = canonical edge index.
pub fn edge_rng(seed: u64, edge_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(edge_index as u64);
    rng
}

pub fn score_all_edges(graph: &MasGraph, judge: &JudgeConfig) -> Result<SignedGraph, JudgeError> {
    judge.validate()?;
    let signs = match judge {
        JudgeConfig::Synthetic { noise, seed } => {
            let mut signs = Vec::with_capacity(graph.edges.len());
            for (i, e) in graph.edges.iter().enumerate() {
                let ev = &graph.events[e.event];
                let sender = ev.stance.as_deref().ok_or(JudgeError::MissingStance { edge: i })?;
                let receiver = graph
                    .outputs
                    .get(&e.to)
                    .and_then(|o| o.stance.as_deref())
                    .ok_or(JudgeError::MissingStance { edge: i })?;
                let rejected = ev.rejected_by.contains(&e.to.agent);
                signs.push(synthetic_verdict(sender, receiver, rejected, *noise, &mut edge_rng(*seed, i)));
            }
            signs
        }
        JudgeConfig::Llm(cfg) => llm::score_edges(graph, cfg)?,
    };
    Ok(SignedGraph::new(graph.clone(), signs))
}
