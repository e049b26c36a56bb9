//! Temporal DAG built from a conversation transcript.
//!
//! Every agent output at round `t` is a node `(agent, t)`. A message sent at
//! round `t` becomes an edge into the receiver's node at `t + 1`, so edges only
//! ever move forward one round and the graph cannot contain a cycle.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl AgentId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An agent at a given round. Ordered by round first, which is also a valid
/// topological order of any graph built here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TemporalNode {
    pub agent: AgentId,
    pub round: u32,
}

impl TemporalNode {
    pub fn new(agent: u32, round: u32) -> Self {
        TemporalNode { agent: AgentId(agent), round }
    }
}

impl Ord for TemporalNode {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.round, self.agent).cmp(&(other.round, other.agent))
    }
}

impl PartialOrd for TemporalNode {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for TemporalNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}@{}", self.agent, self.round)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageEvent {
    pub episode_id: String,
    pub round: u32,
    pub sender: AgentId,
    pub receivers: Vec<AgentId>,
    pub content: String,
    #[serde(default)]
    pub stance: Option<String>,
    #[serde(default)]
    pub agrees_with_final: Option<bool>,
    /// Receivers that explicitly rejected this message. Only the synthetic
    /// judge reads it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected_by: Vec<AgentId>,
}

/// An output that reached nobody, e.g. from a quarantined agent. It still
/// counts as the agent having spoken at that round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnheardOutput {
    pub agent: AgentId,
    pub round: u32,
    #[serde(default)]
    pub stance: Option<String>,
    #[serde(default)]
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub episode_id: String,
    pub agent_count: u32,
    pub round_count: u32,
    pub events: Vec<MessageEvent>,
    pub final_decision: Option<String>,
    pub final_answers: BTreeMap<AgentId, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unheard: Vec<UnheardOutput>,
}

impl Transcript {
    /// The recorded decision, or a majority vote over the final answers with
    /// the lexicographically smallest label winning ties.
    pub fn decision(&self) -> Option<String> {
        if let Some(d) = &self.final_decision {
            return Some(d.clone());
        }
        majority(self.final_answers.values())
    }
}

pub fn majority<'a, I: IntoIterator<Item = &'a String>>(labels: I) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l.as_str()).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    // BTreeMap iterates in label order, so the first hit is the smallest label.
    counts.into_iter().find(|(_, c)| *c == best).map(|(l, _)| l.to_string())
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("transcript has no message events")]
    EmptyTranscript,
    #[error("agent {receiver} receives a round {round} message from agent {sender} but has no output at round {}", round + 1)]
    NonConsecutiveEdge { sender: AgentId, receiver: AgentId, round: u32 },
    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: TemporalNode, to: TemporalNode },
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub from: TemporalNode,
    pub to: TemporalNode,
    /// Index into `MasGraph::events`.
    pub event: usize,
}

/// What an agent said at one round, as far as the transcript records it.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct NodeOutput {
    pub stance: Option<String>,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MasGraph {
    pub agent_count: u32,
    pub round_count: u32,
    /// Sorted by (round, agent).
    pub nodes: Vec<TemporalNode>,
    /// Sorted by (from, to). The position of an edge here is its canonical index.
    pub edges: Vec<Edge>,
    pub events: Vec<MessageEvent>,
    #[serde(serialize_with = "outputs_as_pairs")]
    pub outputs: BTreeMap<TemporalNode, NodeOutput>,
}

fn outputs_as_pairs<S: serde::Serializer>(m: &BTreeMap<TemporalNode, NodeOutput>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(m.iter())
}

impl MasGraph {
    pub fn out_degree(&self, node: TemporalNode) -> usize {
        self.out_edges(node).len()
    }

    /// Indices of the edges leaving `node`, in canonical order.
    pub fn out_edges(&self, node: TemporalNode) -> std::ops::Range<usize> {
        let lo = self.edges.partition_point(|e| e.from < node);
        let hi = self.edges.partition_point(|e| e.from <= node);
        lo..hi
    }

    pub fn agents(&self) -> BTreeSet<AgentId> {
        self.nodes.iter().map(|n| n.agent).collect()
    }

    /// Kahn's algorithm. Fails only if the graph has a cycle, which a graph
    /// from `build_graph` never does.
    pub fn topological_order(&self) -> Option<Vec<TemporalNode>> {
        let mut indeg: BTreeMap<TemporalNode, usize> = self.nodes.iter().map(|n| (*n, 0)).collect();
        for e in &self.edges {
            *indeg.entry(e.to).or_default() += 1;
            indeg.entry(e.from).or_default();
        }
        let mut ready: Vec<TemporalNode> = indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut order = Vec::with_capacity(indeg.len());
        while let Some(n) = ready.pop() {
            order.push(n);
            for e in self.edges.iter().filter(|e| e.from == n) {
                let d = indeg.get_mut(&e.to).expect("edge endpoint registered");
                *d -= 1;
                if *d == 0 {
                    ready.push(e.to);
                }
            }
        }
        (order.len() == indeg.len()).then_some(order)
    }
}

pub fn build_graph(t: &Transcript) -> Result<MasGraph, GraphError> {
    if t.events.is_empty() {
        return Err(GraphError::EmptyTranscript);
    }
    if t.round_count < 1 {
        return Err(GraphError::InvalidTranscript("round_count must be at least 1".into()));
    }
    let n = t.agent_count;
    let big_t = t.round_count;
    let check_agent = |a: AgentId, what: &str| {
        if a.0 >= n {
            Err(GraphError::InvalidTranscript(format!("{what} {a} out of range for {n} agents")))
        } else {
            Ok(())
        }
    };

    let mut outputs: BTreeMap<TemporalNode, NodeOutput> = BTreeMap::new();
    for (i, ev) in t.events.iter().enumerate() {
        check_agent(ev.sender, "sender")?;
        if ev.round < 1 || ev.round > big_t {
            return Err(GraphError::InvalidTranscript(format!("event {i} has round {} outside 1..={big_t}", ev.round)));
        }
        if ev.receivers.is_empty() {
            return Err(GraphError::InvalidTranscript(format!("event {i} has no receivers")));
        }
        for r in &ev.receivers {
            check_agent(*r, "receiver")?;
        }
        outputs
            .entry(TemporalNode { agent: ev.sender, round: ev.round })
            .or_insert_with(|| NodeOutput { stance: ev.stance.clone(), content: ev.content.clone() });
    }
    for u in &t.unheard {
        check_agent(u.agent, "unheard agent")?;
        outputs
            .entry(TemporalNode { agent: u.agent, round: u.round })
            .or_insert_with(|| NodeOutput { stance: u.stance.clone(), content: u.content.clone() });
    }
    for (a, label) in &t.final_answers {
        check_agent(*a, "final answer agent")?;
        let node = TemporalNode { agent: *a, round: big_t };
        let out = outputs.entry(node).or_default();
        if out.stance.is_none() {
            out.stance = Some(label.clone());
        }
        if out.content.is_empty() {
            out.content = label.clone();
        }
    }

    let mut nodes: BTreeSet<TemporalNode> = BTreeSet::new();
    for ev in &t.events {
        nodes.insert(TemporalNode { agent: ev.sender, round: ev.round });
    }
    for a in t.final_answers.keys() {
        nodes.insert(TemporalNode { agent: *a, round: big_t });
    }

    let mut edges = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, ev) in t.events.iter().enumerate() {
        // Round-T events are terminal outputs: there is no round T+1 to reach.
        if ev.round == big_t {
            continue;
        }
        let from = TemporalNode { agent: ev.sender, round: ev.round };
        for r in &ev.receivers {
            let to = TemporalNode { agent: *r, round: ev.round + 1 };
            if !outputs.contains_key(&to) {
                return Err(GraphError::NonConsecutiveEdge { sender: ev.sender, receiver: *r, round: ev.round });
            }
            if !seen.insert((from, to)) {
                return Err(GraphError::DuplicateEdge { from, to });
            }
            nodes.insert(to);
            edges.push(Edge { from, to, event: i });
        }
    }
    edges.sort_by_key(|e| (e.from, e.to));
    outputs.retain(|k, _| nodes.contains(k));

    Ok(MasGraph {
        agent_count: n,
        round_count: big_t,
        nodes: nodes.into_iter().collect(),
        edges,
        events: t.events.clone(),
        outputs,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NonAdvancingEdge { from: TemporalNode, to: TemporalNode },
    RoundSkip { from: TemporalNode, to: TemporalNode },
    DuplicateNode(TemporalNode),
    DanglingEdge { from: TemporalNode, to: TemporalNode },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonAdvancingEdge { from, to } => write!(f, "non-advancing edge {from} -> {to}"),
            Violation::RoundSkip { from, to } => write!(f, "round skip {from} -> {to}"),
            Violation::DuplicateNode(n) => write!(f, "duplicate node {n}"),
            Violation::DanglingEdge { from, to } => write!(f, "edge {from} -> {to} touches an unknown node"),
        }
    }
}

pub fn validate_dag(g: &MasGraph) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    let mut seen = BTreeSet::new();
    for n in &g.nodes {
        if !seen.insert(*n) {
            v.push(Violation::DuplicateNode(*n));
        }
    }
    for e in &g.edges {
        if e.to.round <= e.from.round {
            v.push(Violation::NonAdvancingEdge { from: e.from, to: e.to });
        } else if e.to.round != e.from.round + 1 {
            v.push(Violation::RoundSkip { from: e.from, to: e.to });
        }
        if !seen.contains(&e.from) || !seen.contains(&e.to) {
            v.push(Violation::DanglingEdge { from: e.from, to: e.to });
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

// JSONL: one event per line, then one summary line carrying `final_decision`
// and `final_answers`. `agent_count` and `round_count` are optional there.

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: missing final summary line (final_decision / final_answers)")]
    MissingSummary { line: usize },
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct Summary {
    #[serde(default)]
    episode_id: Option<String>,
    #[serde(default)]
    final_decision: Option<String>,
    final_answers: BTreeMap<AgentId, String>,
    #[serde(default)]
    agent_count: Option<u32>,
    #[serde(default)]
    round_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    unheard: Vec<UnheardOutput>,
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Transcript, TranscriptError> {
    let mut events = Vec::new();
    let mut summary: Option<Summary> = None;
    let mut last = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        last = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if summary.is_some() {
            return Err(TranscriptError::Parse { line: i + 1, msg: "content after the summary line".into() });
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| TranscriptError::Parse { line: i + 1, msg: e.to_string() })?;
        let is_summary = value.get("final_answers").is_some() || value.get("final_decision").is_some();
        if is_summary {
            summary = Some(
                serde_json::from_value(value)
                    .map_err(|e| TranscriptError::Parse { line: i + 1, msg: e.to_string() })?,
            );
        } else {
            let ev: MessageEvent = serde_json::from_value(value)
                .map_err(|e| TranscriptError::Parse { line: i + 1, msg: e.to_string() })?;
            events.push(ev);
        }
    }
    let s = summary.ok_or(TranscriptError::MissingSummary { line: last })?;

    let max_agent = events
        .iter()
        .flat_map(|e| std::iter::once(e.sender).chain(e.receivers.iter().copied()))
        .chain(s.final_answers.keys().copied())
        .map(|a| a.0 + 1)
        .max()
        .unwrap_or(0);
    let max_round = events.iter().map(|e| e.round).max().unwrap_or(0);
    // Without an explicit count, round-T events are recognisable by their
    // agreement flag; otherwise the final answers sit one round past the last message.
    let has_final_events = events.iter().any(|e| e.agrees_with_final.is_some());
    let inferred_rounds = if has_final_events || s.final_answers.is_empty() { max_round } else { max_round + 1 };
    let episode_id = s.episode_id.or_else(|| events.first().map(|e| e.episode_id.clone())).unwrap_or_default();

    Ok(Transcript {
        episode_id,
        agent_count: s.agent_count.unwrap_or(max_agent),
        round_count: s.round_count.unwrap_or(inferred_rounds.max(1)),
        events,
        final_decision: s.final_decision,
        final_answers: s.final_answers,
        unheard: s.unheard,
    })
}

pub fn write_jsonl<W: std::io::Write>(t: &Transcript, mut w: W) -> std::io::Result<()> {
    for ev in &t.events {
        serde_json::to_writer(&mut w, ev)?;
        w.write_all(b"\n")?;
    }
    let s = Summary {
        episode_id: Some(t.episode_id.clone()),
        final_decision: t.final_decision.clone(),
        final_answers: t.final_answers.clone(),
        agent_count: Some(t.agent_count),
        round_count: Some(t.round_count),
        unheard: t.unheard.clone(),
    };
    serde_json::to_writer(&mut w, &s)?;
    w.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ev(round: u32, sender: u32, receivers: &[u32], stance: &str) -> MessageEvent {
        MessageEvent {
            episode_id: "t".into(),
            round,
            sender: AgentId(sender),
            receivers: receivers.iter().map(|r| AgentId(*r)).collect(),
            content: format!("answer {stance}"),
            stance: Some(stance.into()),
            agrees_with_final: None,
            rejected_by: vec![],
        }
    }

    fn transcript(n: u32, rounds: u32, events: Vec<MessageEvent>, finals: &[(u32, &str)]) -> Transcript {
        Transcript {
            episode_id: "t".into(),
            agent_count: n,
            round_count: rounds,
            events,
            final_decision: None,
            final_answers: finals.iter().map(|(a, l)| (AgentId(*a), l.to_string())).collect(),
            unheard: vec![],
        }
    }

    #[test]
    fn two_agent_exchange() {
        let t = transcript(2, 2, vec![ev(1, 0, &[1], "B"), ev(1, 1, &[0], "B")], &[(0, "B"), (1, "B")]);
        let g = build_graph(&t).unwrap();
        assert_eq!(
            g.nodes,
            vec![TemporalNode::new(0, 1), TemporalNode::new(1, 1), TemporalNode::new(0, 2), TemporalNode::new(1, 2)]
        );
        let pairs: Vec<_> = g.edges.iter().map(|e| (e.from, e.to)).collect();
        assert_eq!(
            pairs,
            vec![
                (TemporalNode::new(0, 1), TemporalNode::new(1, 2)),
                (TemporalNode::new(1, 1), TemporalNode::new(0, 2))
            ]
        );
        assert!(validate_dag(&g).is_ok());
    }

    #[test]
    fn hierarchy_five_plus_two() {
        // respondents 0..5, evaluators 5, 6
        let mut events = Vec::new();
        for r in 0..5 {
            events.push(ev(1, r, &[5, 6], "A"));
        }
        for e in 5..7 {
            events.push(ev(2, e, &[0, 1, 2, 3, 4], "A"));
        }
        let finals: Vec<(u32, &str)> = (0..5).map(|a| (a, "A")).collect();
        let g = build_graph(&transcript(7, 3, events, &finals)).unwrap();
        assert_eq!(g.edges.len(), 20);
        assert_eq!(g.nodes.len(), 12);
        assert!(g.nodes.iter().all(|n| !(n.agent.0 >= 5 && n.round != 2)));
    }

    #[test]
    fn receiver_without_next_output_is_rejected() {
        // agent 1 receives at round 1 but says nothing at round 2 of a 3-round run
        let t = transcript(2, 3, vec![ev(1, 0, &[1], "A"), ev(2, 0, &[1], "A")], &[(1, "A")]);
        assert_eq!(
            build_graph(&t).unwrap_err(),
            GraphError::NonConsecutiveEdge { sender: AgentId(0), receiver: AgentId(1), round: 1 }
        );
    }

    #[test]
    fn duplicate_and_empty() {
        let t = transcript(2, 2, vec![ev(1, 0, &[1], "A"), ev(1, 0, &[1], "A")], &[(1, "A")]);
        assert!(matches!(build_graph(&t), Err(GraphError::DuplicateEdge { .. })));
        assert_eq!(build_graph(&transcript(2, 2, vec![], &[])), Err(GraphError::EmptyTranscript));
    }

    #[test]
    fn validate_flags_bad_edges() {
        let a1 = TemporalNode::new(0, 1);
        let b3 = TemporalNode::new(1, 3);
        let g = MasGraph {
            agent_count: 2,
            round_count: 3,
            nodes: vec![a1, b3],
            edges: vec![Edge { from: a1, to: a1, event: 0 }, Edge { from: a1, to: b3, event: 0 }],
            events: vec![],
            outputs: BTreeMap::new(),
        };
        let v = validate_dag(&g).unwrap_err();
        assert_eq!(v[0].to_string(), "non-advancing edge A0@1 -> A0@1");
        assert_eq!(v[1].to_string(), "round skip A0@1 -> A1@3");
    }

    #[test]
    fn majority_tie_breaks_low() {
        let l: Vec<String> = ["C", "B", "C", "B", "A"].iter().map(|s| s.to_string()).collect();
        assert_eq!(majority(&l).as_deref(), Some("B"));
    }

    #[test]
    fn jsonl_round_trip() {
        let mut t = transcript(2, 2, vec![ev(1, 0, &[1], "B"), ev(1, 1, &[0], "C")], &[(0, "B"), (1, "B")]);
        t.events[1].rejected_by = vec![AgentId(0)];
        t.final_decision = Some("B".into());
        let mut buf = Vec::new();
        write_jsonl(&t, &mut buf).unwrap();
        let back = read_jsonl(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn jsonl_infers_counts_and_reports_missing_summary() {
        let text = r#"{"episode_id":"e","round":1,"sender":0,"receivers":[1],"content":"B","stance":"B","agrees_with_final":null}
{"final_decision":"B","final_answers":{"1":"B"}}
"#;
        let t = read_jsonl(text.as_bytes()).unwrap();
        assert_eq!((t.agent_count, t.round_count), (2, 2));

        let text = r#"{"episode_id":"e","round":1,"sender":0,"receivers":[1],"content":"B","stance":"B","agrees_with_final":null}"#;
        match read_jsonl(text.as_bytes()) {
            Err(TranscriptError::MissingSummary { line }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
