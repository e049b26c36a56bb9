#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use masguard::graph::{Edge, MasGraph, NodeOutput};
use masguard::judge::JudgeError;
use masguard::{Sign, SignedGraph, TemporalNode};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;

/// Random layered DAG: every agent may or may not speak at each round, each
/// node links to a random subset of next-round nodes (possibly none).
pub fn random_signed_dag<R: Rng>(rng: &mut R, agents: u32, rounds: u32) -> SignedGraph {
    let mut layers: Vec<Vec<TemporalNode>> = Vec::new();
    for t in 1..=rounds {
        let mut layer: Vec<TemporalNode> =
            (0..agents).filter(|_| rng.random::<f64>() < 0.75).map(|a| TemporalNode::new(a, t)).collect();
        if layer.is_empty() {
            layer.push(TemporalNode::new(rng.random_range(0..agents), t));
        }
        layers.push(layer);
    }
    let mut edges = Vec::new();
    let mut signs = Vec::new();
    for w in layers.windows(2) {
        for from in &w[0] {
            for to in &w[1] {
                if rng.random::<f64>() < 0.6 {
                    edges.push(Edge { from: *from, to: *to, event: 0 });
                    signs.push(Sign::ALL[rng.random_range(0..3)]);
                }
            }
        }
    }
    let nodes: Vec<TemporalNode> = layers.into_iter().flatten().collect();
    SignedGraph::new(
        MasGraph {
            agent_count: agents,
            round_count: rounds,
            outputs: nodes.iter().map(|n| (*n, NodeOutput::default())).collect(),
            nodes,
            edges,
            events: vec![],
        },
        signs,
    )
}

pub fn random_init<R: Rng>(rng: &mut R, g: &SignedGraph) -> BTreeMap<TemporalNode, f64> {
    g.graph
        .nodes
        .iter()
        .filter(|n| n.round == g.graph.round_count)
        .map(|n| (*n, if rng.random::<bool>() { 1.0 } else { -1.0 }))
        .collect()
}

/// Direct recursive evaluation of the recurrence in exact arithmetic,
/// scanning the raw edge list rather than using any graph index.
pub struct Oracle<'a> {
    g: &'a SignedGraph,
    init: &'a BTreeMap<TemporalNode, f64>,
    memo: HashMap<TemporalNode, BigRational>,
}

impl<'a> Oracle<'a> {
    pub fn new(g: &'a SignedGraph, init: &'a BTreeMap<TemporalNode, f64>) -> Self {
        Oracle { g, init, memo: HashMap::new() }
    }

    pub fn score(&mut self, node: TemporalNode) -> BigRational {
        if let Some(v) = self.memo.get(&node) {
            return v.clone();
        }
        let v = if node.round == self.g.graph.round_count {
            BigRational::from_float(self.init[&node]).expect("finite init")
        } else {
            let succ: Vec<(TemporalNode, i8)> = self
                .g
                .graph
                .edges
                .iter()
                .zip(&self.g.signs)
                .filter(|(e, _)| e.from == node)
                .map(|(e, s)| (e.to, s.value()))
                .collect();
            if succ.is_empty() {
                BigRational::zero()
            } else {
                let k = succ.len();
                let mut sum = BigRational::zero();
                for (to, s) in succ {
                    sum += self.score(to) * BigRational::from_integer(i64::from(s).into());
                }
                sum / BigRational::from_integer((k as i64).into())
            }
        };
        self.memo.insert(node, v.clone());
        v
    }

    pub fn score_f64(&mut self, node: TemporalNode) -> f64 {
        self.score(node).to_f64().expect("representable")
    }
}

/// Judge replies with hand-assigned readings.
pub fn parse_fixtures() -> Vec<(&'static str, Result<Sign, JudgeError>)> {
    use JudgeError::{NoScoreMarker, OutOfRangeScore};
    use Sign::{Neg, Pos, Zero};
    vec![
        ("[score] 1", Ok(Pos)),
        ("[score] -1", Ok(Neg)),
        ("[score] 0", Ok(Zero)),
        ("   [score]   1  \n", Ok(Pos)),
        ("\n\nThe advisor rejects the claim.\n[score] -1\n", Ok(Neg)),
        ("[SCORE] 1", Ok(Pos)),
        ("[Score]: 0", Ok(Zero)),
        ("[sCoRe]:-1", Ok(Neg)),
        ("The advisor agrees. [score] +1", Ok(Pos)),
        ("[score] 1. The advisor adopts the same answer.", Ok(Pos)),
        ("[score] 0 and on reflection [score] 1", Ok(Zero)),
        ("score: 1", Err(NoScoreMarker)),
        ("I would say it's a 1", Err(NoScoreMarker)),
        ("", Err(NoScoreMarker)),
        ("[score]", Err(NoScoreMarker)),
        ("[score] positive", Err(NoScoreMarker)),
        ("[ score ] 1", Err(NoScoreMarker)),
        ("[score] 2", Err(OutOfRangeScore(2))),
        ("[score] -3", Err(OutOfRangeScore(-3))),
        ("[score]: 10", Err(OutOfRangeScore(10))),
    ]
}
