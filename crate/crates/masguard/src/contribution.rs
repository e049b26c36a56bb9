//! Contribution scores: seeded at the last round from agreement with the final
//! decision, pulled backwards through the signed edges, averaged per agent,
//! then compared across agents to flag outliers.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{AgentId, MasGraph, TemporalNode, Transcript};
use crate::judge::SignedGraph;

pub type ScoreMap = BTreeMap<TemporalNode, f64>;

#[derive(Debug, Error, PartialEq)]
pub enum ContributionError {
    #[error("final-round node {0} has no final answer or agreement flag")]
    MissingFinalStance(TemporalNode),
    #[error("initial scores do not match the final-round nodes (offending node {0})")]
    UncoveredInit(TemporalNode),
    #[error("detection needs at least 2 scored agents, got {0}")]
    TooFewAgents(usize),
    #[error("graph has no edges")]
    NoEdges,
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentScores {
    pub total: BTreeMap<AgentId, f64>,
    pub participation: BTreeMap<AgentId, u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub epsilon: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig { epsilon: 1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Backprop,
    NoBp,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Backprop => "backprop",
            Method::NoBp => "no_bp",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "backprop" => Ok(Method::Backprop),
            "no_bp" => Ok(Method::NoBp),
            other => Err(format!("unknown method {other:?} (expected backprop or no_bp)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub flagged: Vec<AgentId>,
    /// Mean absolute TotalScore gap to the other agents. Empty for no_bp.
    pub deviations: BTreeMap<AgentId, f64>,
    /// TotalScore per agent for backprop; mean outgoing sign for no_bp.
    pub scores: BTreeMap<AgentId, f64>,
    pub method: Method,
    pub epsilon: Option<f64>,
}

pub fn init_final_scores(graph: &MasGraph, transcript: &Transcript) -> Result<ScoreMap, ContributionError> {
    let last = graph.round_count;
    let decision = transcript.decision();
    let mut init = ScoreMap::new();
    for node in graph.nodes.iter().filter(|n| n.round == last) {
        let agrees = match (transcript.final_answers.get(&node.agent), &decision) {
            (Some(answer), Some(d)) => Some(answer == d),
            _ => transcript
                .events
                .iter()
                .find(|e| e.round == last && e.sender == node.agent && e.agrees_with_final.is_some())
                .and_then(|e| e.agrees_with_final),
        };
        let agrees = agrees.ok_or(ContributionError::MissingFinalStance(*node))?;
        init.insert(*node, if agrees { 1.0 } else { -1.0 });
    }
    Ok(init)
}

/// One backward pass, last round first. A non-final node with no outgoing
/// edge cannot reach the decision and scores 0.
pub fn backpropagate(signed: &SignedGraph, init: &ScoreMap) -> Result<ScoreMap, ContributionError> {
    let g = &signed.graph;
    let last = g.round_count;
    let finals: BTreeSet<TemporalNode> = g.nodes.iter().filter(|n| n.round == last).copied().collect();
    for n in init.keys() {
        if !finals.contains(n) {
            return Err(ContributionError::UncoveredInit(*n));
        }
    }
    for n in &finals {
        if !init.contains_key(n) {
            return Err(ContributionError::UncoveredInit(*n));
        }
    }

    let mut scores = init.clone();
    // Nodes are sorted by round, so walking them in reverse visits every
    // successor before its predecessors.
    for node in g.nodes.iter().rev().filter(|n| n.round < last) {
        let range = g.out_edges(*node);
        let k = range.len();
        let score = if k == 0 {
            0.0
        } else {
            let mut sum = 0.0;
            for i in range {
                sum += signed.signs[i].as_f64() * scores[&g.edges[i].to];
            }
            sum / k as f64
        };
        scores.insert(*node, score);
    }
    Ok(scores)
}

pub fn total_scores(scores: &ScoreMap, graph: &MasGraph) -> AgentScores {
    let mut sums: BTreeMap<AgentId, (f64, u32)> = BTreeMap::new();
    for node in &graph.nodes {
        if let Some(s) = scores.get(node) {
            let e = sums.entry(node.agent).or_insert((0.0, 0));
            e.0 += s;
            e.1 += 1;
        }
    }
    AgentScores {
        total: sums.iter().map(|(a, (s, c))| (*a, s / f64::from(*c))).collect(),
        participation: sums.iter().map(|(a, (_, c))| (*a, *c)).collect(),
    }
}

pub fn deviations(total: &BTreeMap<AgentId, f64>) -> BTreeMap<AgentId, f64> {
    let m = total.len();
    total
        .iter()
        .map(|(a, ta)| {
            let gap: f64 = total.iter().filter(|(b, _)| *b != a).map(|(_, tb)| (ta - tb).abs()).sum();
            (*a, gap / (m - 1) as f64)
        })
        .collect()
}

pub fn detect(scores: &AgentScores, cfg: &DetectionConfig) -> Result<DetectionReport, ContributionError> {
    if cfg.epsilon.is_nan() || cfg.epsilon <= 0.0 {
        return Err(ContributionError::InvalidEpsilon(cfg.epsilon));
    }
    if scores.total.len() < 2 {
        return Err(ContributionError::TooFewAgents(scores.total.len()));
    }
    let deviations = deviations(&scores.total);
    let flagged = deviations.iter().filter(|(_, d)| **d >= cfg.epsilon).map(|(a, _)| *a).collect();
    Ok(DetectionReport {
        flagged,
        deviations,
        scores: scores.total.clone(),
        method: Method::Backprop,
        epsilon: Some(cfg.epsilon),
    })
}

/// Ablation baseline: flag the single agent whose messages receivers judged
/// worst on average, without looking at the final decision.
pub fn detect_no_bp(signed: &SignedGraph) -> Result<DetectionReport, ContributionError> {
    let agents = signed.graph.agents();
    if agents.len() < 2 {
        return Err(ContributionError::TooFewAgents(agents.len()));
    }
    if signed.graph.edges.is_empty() {
        return Err(ContributionError::NoEdges);
    }
    let mut sums: BTreeMap<AgentId, (i64, u32)> = BTreeMap::new();
    for (e, s) in signed.graph.edges.iter().zip(&signed.signs) {
        let entry = sums.entry(e.from.agent).or_insert((0, 0));
        entry.0 += i64::from(s.value());
        entry.1 += 1;
    }
    let raw: BTreeMap<AgentId, f64> = sums.iter().map(|(a, (s, c))| (*a, *s as f64 / f64::from(*c))).collect();
    // Strict comparison keeps the smallest id on ties.
    let mut worst: Option<(AgentId, f64)> = None;
    for (a, r) in &raw {
        if worst.is_none_or(|(_, w)| *r < w) {
            worst = Some((*a, *r));
        }
    }
    Ok(DetectionReport {
        flagged: worst.map(|(a, _)| a).into_iter().collect(),
        deviations: BTreeMap::new(),
        scores: raw,
        method: Method::NoBp,
        epsilon: None,
    })
}
