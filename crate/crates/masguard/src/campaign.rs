//! Campaigns: a sequence of simulated episodes with detection and quarantine
//! carried from one episode to the next.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contribution::{ContributionError, DetectionConfig, DetectionReport, Method};
use crate::graph::{AgentId, Transcript};
use crate::judge::JudgeConfig;
use crate::pipeline::{analyze, AnalyzeError};
use crate::repair::{defense_step, QuarantineState, RepairPolicy};
use crate::sim::{run_episode, AttackKind, AttackSpec, BehaviorParams, SimError, TopologyKind, TopologySpec};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// SplitMix64 finaliser.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(master ^ splitmix64(index))`: seeds the behaviour RNG of one episode.
pub fn episode_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Seed of the synthetic judge for an episode, derived from its episode seed.
pub fn judge_seed(episode_seed: u64) -> u64 {
    splitmix64(episode_seed ^ 0x6A75_6467_6500_0000)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSchedule {
    /// Cycled over episodes.
    pub kinds: Vec<AttackKind>,
    #[serde(default)]
    pub attacker: u32,
    /// Move the attacker one agent along every episode.
    #[serde(default)]
    pub rotate: bool,
}

impl AttackSchedule {
    pub fn at(&self, episode: u32, agent_count: u32) -> AttackSpec {
        let kind = self.kinds[episode as usize % self.kinds.len()];
        let attacker = if self.rotate {
            ((u64::from(self.attacker) + u64::from(episode)) % u64::from(agent_count)) as u32
        } else {
            self.attacker
        };
        AttackSpec::new(kind, attacker)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSettings {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub method: Method,
}

fn default_epsilon() -> f64 {
    1.5
}

impl Default for DetectionSettings {
    fn default() -> Self {
        DetectionSettings { epsilon: 1.5, method: Method::Backprop }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSpec {
    pub episodes: u32,
    pub master_seed: u64,
    /// Carry quarantine state between episodes. Off makes episodes independent.
    #[serde(default = "yes")]
    pub carryover: bool,
    #[serde(default)]
    pub count_quarantined_votes: bool,
    /// Cycled over episodes.
    pub topologies: Vec<TopologySpec>,
    pub attack: AttackSchedule,
    #[serde(default)]
    pub behavior: BehaviorParams,
    /// For the synthetic judge the seed is replaced per episode by `judge_seed`.
    #[serde(default)]
    pub judge: JudgeConfig,
    #[serde(default)]
    pub detection: DetectionSettings,
    #[serde(default)]
    pub repair: RepairPolicy,
}

fn yes() -> bool {
    true
}

pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

impl CampaignSpec {
    pub fn from_toml(text: &str) -> Result<Self, CampaignError> {
        let spec: CampaignSpec = toml::from_str(text).map_err(|e| CampaignError::ConfigInvalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn bundled_default() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("bundled config is valid")
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: String| Err(CampaignError::ConfigInvalid(m));
        if self.topologies.is_empty() {
            return bad("topologies: at least one entry required".into());
        }
        for (i, t) in self.topologies.iter().enumerate() {
            t.validate().map_err(|e| CampaignError::ConfigInvalid(format!("topologies[{i}]: {e}")))?;
        }
        if self.attack.kinds.is_empty() {
            return bad("attack.kinds: at least one entry required".into());
        }
        if !self.attack.rotate {
            for (i, t) in self.topologies.iter().enumerate() {
                if self.attack.attacker >= t.agent_count() {
                    return bad(format!(
                        "attack.attacker: {} out of range for topologies[{i}] with {} agents",
                        self.attack.attacker,
                        t.agent_count()
                    ));
                }
            }
        }
        self.behavior.validate().map_err(|e| CampaignError::ConfigInvalid(format!("behavior: {e}")))?;
        self.judge.validate().map_err(|e| CampaignError::ConfigInvalid(format!("judge: {e}")))?;
        if self.detection.epsilon.is_nan() || self.detection.epsilon <= 0.0 {
            return bad(format!("detection.epsilon: must be positive, got {}", self.detection.epsilon));
        }
        if self.repair.base < 1 || self.repair.backoff < 1 {
            return bad("repair: base and backoff must be at least 1".into());
        }
        Ok(())
    }

    fn judge_for(&self, seed: u64) -> JudgeConfig {
        match &self.judge {
            JudgeConfig::Synthetic { noise, .. } => JudgeConfig::Synthetic { noise: *noise, seed },
            other => other.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("episode {episode}: {source}")]
    Sim { episode: u32, source: SimError },
    #[error("episode {episode}: {source}")]
    Analyze { episode: u32, source: AnalyzeError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u32,
    pub seed: u64,
    pub judge_seed: u64,
    pub topology: TopologyKind,
    pub agent_count: u32,
    pub attack: AttackKind,
    pub attacker: Option<AgentId>,
    /// The attacker was free to send this episode.
    pub attacker_active: bool,
    pub quarantined: Vec<AgentId>,
    pub final_decision: String,
    pub final_correct: bool,
    pub flagged: Vec<AgentId>,
    pub detection: Option<DetectionReport>,
    /// Why detection did not run, when it did not.
    pub detection_skipped: Option<String>,
    pub quarantine_after: QuarantineState,
    #[serde(skip)]
    pub transcript: Option<Transcript>,
}

/// The per-episode facts metrics are computed from; also one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub episode: u32,
    pub topology: String,
    pub attack: AttackKind,
    #[serde(with = "opt_agent")]
    pub attacker: Option<AgentId>,
    #[serde(with = "agent_list")]
    pub flagged: Vec<AgentId>,
    pub final_correct: bool,
    pub method: Method,
    pub attacker_active: bool,
}

impl EpisodeRecord {
    pub fn outcome(&self, method: Method) -> Outcome {
        Outcome {
            episode: self.episode,
            topology: self.topology.as_str().to_string(),
            attack: self.attack,
            attacker: self.attacker,
            flagged: self.flagged.clone(),
            final_correct: self.final_correct,
            method,
            attacker_active: self.attacker_active,
        }
    }
}

mod opt_agent {
    use super::AgentId;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<AgentId>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(a) => s.serialize_str(&a.0.to_string()),
            None => s.serialize_str(""),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<AgentId>, D::Error> {
        let text = String::deserialize(d)?;
        if text.is_empty() {
            return Ok(None);
        }
        text.parse().map(|v| Some(AgentId(v))).map_err(serde::de::Error::custom)
    }
}

mod agent_list {
    use super::AgentId;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[AgentId], s: S) -> Result<S::Ok, S::Error> {
        let text: Vec<String> = v.iter().map(|a| a.0.to_string()).collect();
        s.serialize_str(&text.join(";"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<AgentId>, D::Error> {
        let text = String::deserialize(d)?;
        text.split(';')
            .filter(|x| !x.is_empty())
            .map(|x| x.parse().map(AgentId).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub episodes: usize,
    pub attacked_episodes: usize,
    /// Attacked episodes where the attacker was not already quarantined.
    pub active_attacked_episodes: usize,
    pub blocked_attacks: usize,
    /// Exact match (flagged == {attacker}) over active attacked episodes.
    pub monitor_accuracy: Option<f64>,
    /// Attacker among the flagged, over active attacked episodes.
    pub monitor_accuracy_lenient: Option<f64>,
    /// Unattacked episodes with any flag.
    pub false_positive_rate: Option<f64>,
    pub answer_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(flatten)]
    pub overall: Summary,
    pub per_attack: BTreeMap<String, Summary>,
    pub per_topology: BTreeMap<String, Summary>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn summarize<'a, I: IntoIterator<Item = &'a Outcome>>(outcomes: I) -> Summary {
    let (mut episodes, mut attacked, mut active, mut exact, mut lenient) = (0, 0, 0, 0, 0);
    let (mut clean, mut false_pos, mut correct) = (0, 0, 0);
    for o in outcomes {
        episodes += 1;
        correct += usize::from(o.final_correct);
        match o.attacker.filter(|_| o.attack != AttackKind::None) {
            Some(a) => {
                attacked += 1;
                if o.attacker_active {
                    active += 1;
                    exact += usize::from(o.flagged == [a]);
                    lenient += usize::from(o.flagged.contains(&a));
                }
            }
            None => {
                clean += 1;
                false_pos += usize::from(!o.flagged.is_empty());
            }
        }
    }
    Summary {
        episodes,
        attacked_episodes: attacked,
        active_attacked_episodes: active,
        blocked_attacks: attacked - active,
        monitor_accuracy: ratio(exact, active),
        monitor_accuracy_lenient: ratio(lenient, active),
        false_positive_rate: ratio(false_pos, clean),
        answer_accuracy: ratio(correct, episodes),
    }
}

pub fn compute_metrics(outcomes: &[Outcome]) -> Metrics {
    let mut per_attack: BTreeMap<String, Vec<&Outcome>> = BTreeMap::new();
    let mut per_topology: BTreeMap<String, Vec<&Outcome>> = BTreeMap::new();
    for o in outcomes {
        per_attack.entry(o.attack.as_str().to_string()).or_default().push(o);
        per_topology.entry(o.topology.clone()).or_default().push(o);
    }
    Metrics {
        overall: summarize(outcomes),
        per_attack: per_attack.into_iter().map(|(k, v)| (k, summarize(v))).collect(),
        per_topology: per_topology.into_iter().map(|(k, v)| (k, summarize(v))).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub tool_version: String,
    pub config: CampaignSpec,
    pub initial_quarantine: QuarantineState,
    pub final_quarantine: QuarantineState,
    pub metrics: Metrics,
    pub episodes: Vec<EpisodeRecord>,
}

impl CampaignReport {
    pub fn outcomes(&self) -> Vec<Outcome> {
        self.episodes.iter().map(|e| e.outcome(self.config.detection.method)).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for o in self.outcomes() {
            out.serialize(o)?;
        }
        out.flush()?;
        Ok(())
    }
}

struct Simulated {
    record: EpisodeRecord,
}

fn simulate_one(spec: &CampaignSpec, idx: u32, state: &QuarantineState) -> Result<Simulated, CampaignError> {
    let seed = episode_seed(spec.master_seed, u64::from(idx));
    let jseed = judge_seed(seed);
    let topology = &spec.topologies[idx as usize % spec.topologies.len()];
    let attack = spec.attack.at(idx, topology.agent_count());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ep = run_episode(
        &format!("episode-{idx:05}"),
        topology,
        &attack,
        &spec.behavior,
        state,
        spec.count_quarantined_votes,
        &mut rng,
    )
    .map_err(|source| CampaignError::Sim { episode: idx, source })?;

    let (detection, skipped) = if ep.transcript.events.is_empty() {
        (None, Some("no messages were sent".to_string()))
    } else {
        let detection = DetectionConfig { epsilon: spec.detection.epsilon };
        match analyze(&ep.transcript, &spec.judge_for(jseed), &detection, spec.detection.method) {
            Ok(a) => (Some(a.report), None),
            Err(AnalyzeError::Contribution(e @ (ContributionError::TooFewAgents(_) | ContributionError::NoEdges))) => {
                (None, Some(e.to_string()))
            }
            Err(source) => return Err(CampaignError::Analyze { episode: idx, source }),
        }
    };
    let flagged = detection.as_ref().map(|d| d.flagged.clone()).unwrap_or_default();
    Ok(Simulated {
        record: EpisodeRecord {
            episode: idx,
            seed,
            judge_seed: jseed,
            topology: topology.kind,
            agent_count: topology.agent_count(),
            attack: attack.kind,
            attacker: ep.attacker,
            attacker_active: ep.attacker.is_some_and(|a| !state.is_quarantined(a)),
            quarantined: state.suppressed().into_iter().collect(),
            final_decision: ep.decision,
            final_correct: ep.final_correct,
            flagged,
            detection,
            detection_skipped: skipped,
            quarantine_after: state.clone(),
            transcript: Some(ep.transcript),
        },
    })
}

/// Runs every episode in order. With carryover the quarantine produced by one
/// episode's detection applies to the next; without it each episode starts
/// from `initial` and episodes run in parallel.
pub fn run_campaign(spec: &CampaignSpec, initial: &QuarantineState) -> Result<CampaignReport, CampaignError> {
    spec.validate()?;
    let mut records = Vec::with_capacity(spec.episodes as usize);
    let mut state = initial.clone();
    if spec.carryover {
        for idx in 0..spec.episodes {
            let mut sim = simulate_one(spec, idx, &state)?;
            state = defense_step(&state, &sim.record.flagged, spec.repair);
            sim.record.quarantine_after = state.clone();
            records.push(sim.record);
        }
    } else {
        let done: Result<Vec<Simulated>, CampaignError> =
            (0..spec.episodes).into_par_iter().map(|idx| simulate_one(spec, idx, initial)).collect();
        for mut sim in done? {
            sim.record.quarantine_after = defense_step(initial, &sim.record.flagged, spec.repair);
            records.push(sim.record);
        }
        state = initial.clone();
    }
    let outcomes: Vec<Outcome> = records.iter().map(|r| r.outcome(spec.detection.method)).collect();
    Ok(CampaignReport {
        tool_version: TOOL_VERSION.to_string(),
        config: spec.clone(),
        initial_quarantine: initial.clone(),
        final_quarantine: state,
        metrics: compute_metrics(&outcomes),
        episodes: records,
    })
}
