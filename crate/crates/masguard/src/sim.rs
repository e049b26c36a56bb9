//! Stance-level simulator for multi-agent discussions.
//!
//! Agents hold an answer label. Each round a receiver is either swayed
//! (probability `persuasion`), adopting the weighted plurality of its own
//! stance and everything it heard, or discerning, in which case it drops
//! stances it recognises as wrong and only moves if it gives up its own.
//! Recognition of a wrong label is sticky for the rest of the episode.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{majority, AgentId, MessageEvent, Transcript, UnheardOutput};
use crate::repair::{apply_quarantine, PlannedMessage, QuarantineState};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Flat,
    Hierarchy,
}

impl TopologyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TopologyKind::Flat => "flat",
            TopologyKind::Hierarchy => "hierarchy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    #[serde(default = "default_respondents")]
    pub respondents: u32,
    #[serde(default = "default_evaluators")]
    pub evaluators: u32,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
}

fn default_respondents() -> u32 {
    5
}
fn default_evaluators() -> u32 {
    2
}
fn default_rounds() -> u32 {
    3
}

impl TopologySpec {
    pub fn flat(agents: u32) -> Self {
        TopologySpec { kind: TopologyKind::Flat, respondents: agents, evaluators: 0, rounds: 3 }
    }

    pub fn hierarchy(respondents: u32, evaluators: u32) -> Self {
        TopologySpec { kind: TopologyKind::Hierarchy, respondents, evaluators, rounds: 3 }
    }

    pub fn agent_count(&self) -> u32 {
        match self.kind {
            TopologyKind::Flat => self.respondents,
            TopologyKind::Hierarchy => self.respondents + self.evaluators,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.respondents < 2 {
            return Err(SimError::InvalidSchedule("need at least 2 respondents".into()));
        }
        match self.kind {
            TopologyKind::Flat if self.rounds < 2 => {
                Err(SimError::InvalidSchedule("flat discussion needs at least 2 rounds".into()))
            }
            TopologyKind::Hierarchy if self.evaluators < 1 => {
                Err(SimError::InvalidSchedule("hierarchy needs at least 1 evaluator".into()))
            }
            TopologyKind::Hierarchy if self.rounds != 3 => {
                Err(SimError::InvalidSchedule("hierarchy runs exactly 3 rounds".into()))
            }
            _ => Ok(()),
        }
    }

    /// Message schedule before quarantine, plus the agents that give a final answer.
    ///
    /// Flat: every round but the last is an all-to-all broadcast; the last
    /// round is final answers. Hierarchy: respondents -> evaluators,
    /// evaluators -> respondents, respondents answer. Respondents are agents
    /// `0..respondents`, evaluators follow.
    pub fn plan(&self) -> (Vec<PlannedMessage>, Vec<AgentId>) {
        let r: Vec<AgentId> = (0..self.respondents).map(AgentId).collect();
        match self.kind {
            TopologyKind::Flat => {
                let mut plan = Vec::new();
                for t in 1..self.rounds {
                    for s in &r {
                        plan.push(PlannedMessage {
                            round: t,
                            sender: *s,
                            receivers: r.iter().filter(|x| *x != s).copied().collect(),
                        });
                    }
                }
                (plan, r)
            }
            TopologyKind::Hierarchy => {
                let e: Vec<AgentId> = (self.respondents..self.agent_count()).map(AgentId).collect();
                let mut plan: Vec<PlannedMessage> =
                    r.iter().map(|s| PlannedMessage { round: 1, sender: *s, receivers: e.clone() }).collect();
                plan.extend(e.iter().map(|s| PlannedMessage { round: 2, sender: *s, receivers: r.clone() }));
                (plan, r)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    None,
    Harmful,
    Suboptimal,
    Reframing,
    Trigger,
    Modification,
}

impl AttackKind {
    pub const ALL: [AttackKind; 6] = [
        AttackKind::None,
        AttackKind::Harmful,
        AttackKind::Suboptimal,
        AttackKind::Reframing,
        AttackKind::Trigger,
        AttackKind::Modification,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Harmful => "harmful",
            AttackKind::Suboptimal => "suboptimal",
            AttackKind::Reframing => "reframing",
            AttackKind::Trigger => "trigger",
            AttackKind::Modification => "modification",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown attack kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub attacker: Option<AgentId>,
}

impl AttackSpec {
    pub fn none() -> Self {
        AttackSpec { kind: AttackKind::None, attacker: None }
    }

    pub fn new(kind: AttackKind, attacker: u32) -> Self {
        if kind == AttackKind::None {
            Self::none()
        } else {
            AttackSpec { kind, attacker: Some(AgentId(attacker)) }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorParams {
    /// Probability a benign agent starts with the correct label.
    pub competence: f64,
    /// Probability a receiver is swayed by what it hears in a round.
    pub persuasion: f64,
    /// Probability of recognising a wrong label, and of voicing disagreement.
    pub rejection_skill: f64,
    /// Weight of a harmful attacker's message when `persuasion` is 1;
    /// interpolates linearly down to 1 at `persuasion` 0.
    pub harmful_boost: f64,
    /// Multiplier on `rejection_skill` against a modification attacker.
    pub modification_factor: f64,
    pub answer_space: Vec<String>,
    pub correct: String,
    pub suboptimal: String,
    pub wrong: String,
    /// Label a reframing attacker pushes; must lie outside `answer_space`.
    pub reframe_label: String,
    pub refusal_label: String,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        BehaviorParams {
            competence: 0.8,
            persuasion: 0.5,
            rejection_skill: 0.7,
            harmful_boost: 5.0,
            modification_factor: 0.5,
            answer_space: ["A", "B", "C", "D"].map(String::from).to_vec(),
            correct: "A".into(),
            suboptimal: "B".into(),
            wrong: "C".into(),
            reframe_label: "R".into(),
            refusal_label: "REFUSE".into(),
        }
    }
}

impl BehaviorParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSchedule(m));
        for (name, v) in [
            ("competence", self.competence),
            ("persuasion", self.persuasion),
            ("rejection_skill", self.rejection_skill),
            ("modification_factor", self.modification_factor),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if self.harmful_boost.is_nan() || self.harmful_boost < 1.0 {
            return bad(format!("harmful_boost = {} below 1", self.harmful_boost));
        }
        let space: BTreeSet<&String> = self.answer_space.iter().collect();
        if space.len() < 3 || space.len() != self.answer_space.len() {
            return bad("answer_space needs at least 3 distinct labels".into());
        }
        for (name, l) in [("correct", &self.correct), ("suboptimal", &self.suboptimal), ("wrong", &self.wrong)] {
            if !space.contains(l) {
                return bad(format!("{name} label {l:?} not in answer_space"));
            }
        }
        if self.correct == self.suboptimal || self.correct == self.wrong {
            return bad("suboptimal and wrong labels must differ from the correct one".into());
        }
        for (name, l) in [("reframe_label", &self.reframe_label), ("refusal_label", &self.refusal_label)] {
            if space.contains(l) {
                return bad(format!("{name} {l:?} must lie outside answer_space"));
            }
        }
        if self.reframe_label == self.refusal_label {
            return bad("reframe_label and refusal_label must differ".into());
        }
        Ok(())
    }

    fn attack_label(&self, kind: AttackKind) -> Option<&str> {
        match kind {
            AttackKind::None => None,
            AttackKind::Harmful | AttackKind::Modification => Some(&self.wrong),
            AttackKind::Suboptimal => Some(&self.suboptimal),
            AttackKind::Reframing => Some(&self.reframe_label),
            AttackKind::Trigger => Some(&self.refusal_label),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub transcript: Transcript,
    pub attacker: Option<AgentId>,
    pub decision: String,
    pub final_correct: bool,
}

fn benign_text(label: &str) -> String {
    format!("I believe the answer is {label}.")
}

const REFUSAL_TEXT: &str = "I'm sorry, but I can't help with this request.";

fn attack_text(kind: AttackKind, label: &str, copied: Option<&str>) -> String {
    match kind {
        AttackKind::Harmful => format!(
            "Working through it step by step, the answer is {label}. Each of the other options breaks down under careful analysis."
        ),
        AttackKind::Suboptimal => benign_text(label),
        AttackKind::Reframing => {
            format!("The question is really asking about something else, read that way the answer is {label}.")
        }
        AttackKind::Trigger => "This request could be unsafe, I can't take part in answering it.".into(),
        AttackKind::Modification => match copied {
            Some(text) => replace_last_label(text, label),
            None => benign_text(label),
        },
        AttackKind::None => benign_text(label),
    }
}

/// Swap the label in a copied benign message, keeping the rest of the text.
fn replace_last_label(text: &str, label: &str) -> String {
    match text.rfind(" is ") {
        Some(pos) => {
            let tail = &text[pos + 4..];
            let end = tail.find('.').unwrap_or(tail.len());
            format!("{} is {}{}", &text[..pos], label, &tail[end..])
        }
        None => benign_text(label),
    }
}

fn plurality(pool: &BTreeMap<String, f64>, own: &str) -> String {
    let best = pool.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let tops: Vec<&String> = pool.iter().filter(|(_, w)| (**w - best).abs() < 1e-12).map(|(l, _)| l).collect();
    if tops.iter().any(|l| l.as_str() == own) {
        own.to_string()
    } else {
        tops[0].clone()
    }
}

#[derive(Clone)]
struct Said {
    stance: String,
    content: String,
}

/// Runs one discussion. `count_quarantined_votes` lets quarantined agents'
/// final answers count toward the decision; when every finalist is
/// quarantined their votes count regardless.
pub fn run_episode<R: Rng + ?Sized>(
    episode_id: &str,
    topology: &TopologySpec,
    attack: &AttackSpec,
    behavior: &BehaviorParams,
    quarantine: &QuarantineState,
    count_quarantined_votes: bool,
    rng: &mut R,
) -> Result<Episode, SimError> {
    topology.validate()?;
    behavior.validate()?;
    let n = topology.agent_count();
    let attacker = match (attack.kind, attack.attacker) {
        (AttackKind::None, _) => None,
        (_, Some(a)) if a.0 < n => Some(a),
        (_, Some(a)) => return Err(SimError::InvalidSchedule(format!("attacker {a} out of range for {n} agents"))),
        (_, None) => return Err(SimError::InvalidSchedule("attack without an attacker".into())),
    };
    let alabel = behavior.attack_label(attack.kind).map(str::to_string);
    let p = behavior.competence;
    let w = behavior.persuasion;
    let q = behavior.rejection_skill;
    let refuse = behavior.refusal_label.as_str();
    let correct = behavior.correct.as_str();
    let wrong_labels: Vec<&String> = behavior.answer_space.iter().filter(|l| *l != correct).collect();

    let mut held: Vec<String> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < p {
                correct.to_string()
            } else {
                wrong_labels[rng.random_range(0..wrong_labels.len())].clone()
            }
        })
        .collect();
    if let (Some(a), Some(l)) = (attacker, &alabel) {
        held[a.index()] = l.clone();
    }
    let is_attacker = |a: AgentId| attacker == Some(a);
    let strength = |a: AgentId| {
        if is_attacker(a) && attack.kind == AttackKind::Harmful {
            1.0 + w * (behavior.harmful_boost - 1.0)
        } else {
            1.0
        }
    };
    let recognise_p = |a: AgentId| {
        if is_attacker(a) && attack.kind == AttackKind::Modification {
            q * behavior.modification_factor
        } else {
            q
        }
    };

    let (plan, finalists) = topology.plan();
    let repaired = apply_quarantine(&plan, quarantine);
    let last = topology.rounds;
    let mut said: BTreeMap<(u32, AgentId), Said> = BTreeMap::new();
    let mut known: Vec<BTreeSet<String>> = vec![BTreeSet::new(); n as usize];
    let mut last_heard: Vec<Option<String>> = vec![None; n as usize];
    let mut events: Vec<MessageEvent> = Vec::new();
    let mut unheard: Vec<UnheardOutput> = Vec::new();

    for t in 1..last {
        let mut inbox: BTreeMap<AgentId, Vec<(AgentId, String, usize)>> = BTreeMap::new();
        for m in repaired.messages.iter().filter(|m| m.round == t) {
            let s = m.sender;
            let out = said
                .entry((t, s))
                .or_insert_with(|| {
                    let stance = held[s.index()].clone();
                    let content = if is_attacker(s) {
                        attack_text(attack.kind, &stance, last_heard[s.index()].as_deref())
                    } else {
                        benign_text(&stance)
                    };
                    Said { stance, content }
                })
                .clone();
            for r in &m.receivers {
                inbox.entry(*r).or_default().push((s, out.stance.clone(), events.len()));
            }
            events.push(MessageEvent {
                episode_id: episode_id.to_string(),
                round: t,
                sender: s,
                receivers: m.receivers.clone(),
                content: out.content,
                stance: Some(out.stance),
                agrees_with_final: None,
                rejected_by: Vec::new(),
            });
        }

        for (v, msgs) in &inbox {
            let vi = v.index();
            if let Some(&(_, _, ev)) = msgs.iter().rev().find(|(u, _, _)| !is_attacker(*u)) {
                last_heard[vi] = Some(events[ev].content.clone());
            }
            if is_attacker(*v) {
                let l = alabel.clone().expect("attacker has a label");
                for (_, s, ev) in msgs {
                    if *s != l {
                        events[*ev].rejected_by.push(*v);
                    }
                }
                let content = attack_text(attack.kind, &l, last_heard[vi].as_deref());
                said.insert((t + 1, *v), Said { stance: l, content });
                continue;
            }

            let swayed = rng.random::<f64>() < w;
            let mut recognised = Vec::with_capacity(msgs.len());
            for (u, s, _) in msgs {
                let r = if s == correct {
                    false
                } else if known[vi].contains(s) {
                    true
                } else {
                    let hit = rng.random::<f64>() < recognise_p(*u);
                    if hit {
                        known[vi].insert(s.clone());
                    }
                    hit
                };
                recognised.push(r);
            }

            let mut h = held[vi].clone();
            if swayed {
                let mut pool = BTreeMap::from([(h.clone(), 1.0)]);
                for (u, s, _) in msgs.iter().filter(|(_, s, _)| s != refuse) {
                    *pool.entry(s.clone()).or_insert(0.0) += strength(*u);
                }
                h = plurality(&pool, &h);
            } else {
                let abandon = h != correct && (known[vi].contains(&h) || rng.random::<f64>() < q);
                if abandon {
                    known[vi].insert(h.clone());
                    let mut pool = BTreeMap::new();
                    for ((_, s, _), rec) in msgs.iter().zip(&recognised) {
                        if !rec && s != refuse {
                            *pool.entry(s.clone()).or_insert(0.0) += 1.0;
                        }
                    }
                    if pool.is_empty() {
                        // Nothing trusted to switch to: answer again, avoiding
                        // labels already known to be wrong.
                        let fresh: Vec<&String> =
                            wrong_labels.iter().copied().filter(|l| !known[vi].contains(*l)).collect();
                        h = if fresh.is_empty() || rng.random::<f64>() < p {
                            correct.to_string()
                        } else {
                            fresh[rng.random_range(0..fresh.len())].clone()
                        };
                    } else {
                        h = plurality(&pool, &h);
                    }
                }
            }
            held[vi] = h.clone();

            let refusing = swayed && msgs.iter().any(|(_, s, _)| s == refuse);
            let out = if refusing { refuse.to_string() } else { h };
            for ((u, s, ev), rec) in msgs.iter().zip(&recognised) {
                if *s != out && (*rec || rng.random::<f64>() < recognise_p(*u)) {
                    events[*ev].rejected_by.push(*v);
                }
            }
            let content = if refusing { REFUSAL_TEXT.to_string() } else { benign_text(&out) };
            said.insert((t + 1, *v), Said { stance: out, content });
        }

        // Outputs nobody will hear: the agent spoke at t+1 but its messages are cut.
        if t + 1 < last {
            for v in inbox.keys() {
                let sends = repaired.messages.iter().any(|m| m.round == t + 1 && m.sender == *v);
                if !sends {
                    let s = &said[&(t + 1, *v)];
                    unheard.push(UnheardOutput {
                        agent: *v,
                        round: t + 1,
                        stance: Some(s.stance.clone()),
                        content: s.content.clone(),
                    });
                }
            }
        }
    }

    let final_answers: BTreeMap<AgentId, String> = finalists
        .iter()
        .map(|a| {
            let label = said.get(&(last, *a)).map(|s| s.stance.clone()).unwrap_or_else(|| held[a.index()].clone());
            (*a, label)
        })
        .collect();
    let mut votes: Vec<&String> = final_answers
        .iter()
        .filter(|(a, _)| count_quarantined_votes || !quarantine.is_quarantined(**a))
        .map(|(_, l)| l)
        .collect();
    if votes.is_empty() {
        votes = final_answers.values().collect();
    }
    let decision = majority(votes).expect("at least one finalist");
    let final_correct = decision == correct;

    Ok(Episode {
        transcript: Transcript {
            episode_id: episode_id.to_string(),
            agent_count: n,
            round_count: last,
            events,
            final_decision: Some(decision.clone()),
            final_answers,
            unheard,
        },
        attacker,
        decision,
        final_correct,
    })
}
