//! Quarantine: flagged agents lose their outbound messages for a number of
//! episodes that doubles (by default) with every repeat offence.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph::AgentId;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QuarantineState {
    /// Agent -> episodes of quarantine left (always >= 1).
    pub quarantined: BTreeMap<AgentId, u32>,
    pub strike_count: BTreeMap<AgentId, u32>,
}

impl QuarantineState {
    pub fn is_quarantined(&self, a: AgentId) -> bool {
        self.quarantined.contains_key(&a)
    }

    pub fn suppressed(&self) -> BTreeSet<AgentId> {
        self.quarantined.keys().copied().collect()
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("state serializes");
        text.push('\n');
        std::fs::write(path, text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairPolicy {
    pub base: u32,
    pub backoff: u32,
}

impl Default for RepairPolicy {
    fn default() -> Self {
        RepairPolicy { base: 3, backoff: 2 }
    }
}

impl RepairPolicy {
    pub fn duration(&self, strikes: u32) -> u32 {
        self.base.saturating_mul(self.backoff.saturating_pow(strikes)).max(1)
    }
}

/// One scheduled message: `sender` talks to `receivers` at `round`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedMessage {
    pub round: u32,
    pub sender: AgentId,
    pub receivers: Vec<AgentId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairedPlan {
    pub messages: Vec<PlannedMessage>,
    pub suppressed: BTreeSet<AgentId>,
}

/// Drops every message sent by a quarantined agent. What they receive is untouched.
pub fn apply_quarantine(plan: &[PlannedMessage], state: &QuarantineState) -> RepairedPlan {
    let suppressed = state.suppressed();
    RepairedPlan { messages: plan.iter().filter(|m| !suppressed.contains(&m.sender)).cloned().collect(), suppressed }
}

/// Ages existing quarantines by one episode, then admits newly flagged agents.
/// An agent flagged while still quarantined just keeps serving its time.
pub fn defense_step(state: &QuarantineState, flagged: &[AgentId], policy: RepairPolicy) -> QuarantineState {
    let mut next = state.clone();
    next.quarantined =
        state.quarantined.iter().filter(|(_, left)| **left > 1).map(|(a, left)| (*a, left - 1)).collect();
    for a in flagged {
        if state.quarantined.contains_key(a) {
            continue;
        }
        let strikes = next.strike_count.entry(*a).or_insert(0);
        next.quarantined.insert(*a, policy.duration(*strikes));
        *strikes += 1;
    }
    next
}
