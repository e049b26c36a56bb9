mod common;

use std::collections::BTreeMap;

use masguard::contribution::{backpropagate, detect, total_scores, AgentScores, DetectionConfig};
use masguard::graph::{build_graph, AgentId, MessageEvent, Transcript};
use masguard::judge::score_all_edges;
use masguard::{JudgeConfig, TemporalNode};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_init, random_signed_dag, Oracle};

#[test]
fn backprop_matches_exact_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0DAC);
    for case in 0..300 {
        let agents = 2 + case % 7;
        let rounds = 2 + (case / 7) % 5;
        let g = random_signed_dag(&mut rng, agents, rounds);
        let init = random_init(&mut rng, &g);
        let got = backpropagate(&g, &init).unwrap();
        let mut oracle = Oracle::new(&g, &init);
        for n in &g.graph.nodes {
            assert!((got[n] - oracle.score_f64(*n)).abs() < 1e-12, "case {case} node {n}");
        }
    }
}

#[test]
fn hand_traced_two_agent_case() {
    // A1 -> B2 (+1), B1 -> A2 (-1); init A2 = +1, B2 = -1
    let ev = |s: u32, r: u32, stance: &str, rejected: bool| MessageEvent {
        episode_id: "x".into(),
        round: 1,
        sender: AgentId(s),
        receivers: vec![AgentId(r)],
        content: stance.into(),
        stance: Some(stance.into()),
        agrees_with_final: None,
        rejected_by: if rejected { vec![AgentId(r)] } else { vec![] },
    };
    let t = Transcript {
        episode_id: "x".into(),
        agent_count: 2,
        round_count: 2,
        events: vec![ev(0, 1, "D", false), ev(1, 0, "D", true)],
        final_decision: Some("B".into()),
        final_answers: [(AgentId(0), "B".to_string()), (AgentId(1), "D".to_string())].into(),
        unheard: vec![],
    };
    let g = build_graph(&t).unwrap();
    let signed = score_all_edges(&g, &JudgeConfig::Synthetic { noise: 0.0, seed: 0 }).unwrap();
    let init = masguard::contribution::init_final_scores(&g, &t).unwrap();
    let s = backpropagate(&signed, &init).unwrap();
    let want = [((0, 1), -1.0), ((1, 1), -1.0), ((0, 2), 1.0), ((1, 2), -1.0)];
    for ((a, r), v) in want {
        assert_eq!(s[&TemporalNode::new(a, r)], v);
    }
}

#[test]
fn init_from_final_answers() {
    let t = Transcript {
        episode_id: "x".into(),
        agent_count: 3,
        round_count: 2,
        events: (0..3)
            .map(|s| MessageEvent {
                episode_id: "x".into(),
                round: 1,
                sender: AgentId(s),
                receivers: (0..3).filter(|r| *r != s).map(AgentId).collect(),
                content: "m".into(),
                stance: Some("B".into()),
                agrees_with_final: None,
                rejected_by: vec![],
            })
            .collect(),
        final_decision: Some("B".into()),
        final_answers: [(0, "B"), (1, "B"), (2, "D")].iter().map(|(a, l)| (AgentId(*a), l.to_string())).collect(),
        unheard: vec![],
    };
    let g = build_graph(&t).unwrap();
    let init = masguard::contribution::init_final_scores(&g, &t).unwrap();
    let vals: Vec<f64> = init.values().copied().collect();
    assert_eq!(vals, vec![1.0, 1.0, -1.0]);

    let mut missing = t.clone();
    missing.final_answers.remove(&AgentId(2));
    assert!(build_graph(&missing).is_err());
    // a terminal round-2 message gives agent 2 a final node but no answer
    missing.events.push(MessageEvent {
        episode_id: "x".into(),
        round: 2,
        sender: AgentId(2),
        receivers: vec![AgentId(0)],
        content: "done".into(),
        stance: None,
        agrees_with_final: None,
        rejected_by: vec![],
    });
    let g = build_graph(&missing).unwrap();
    assert!(matches!(
        masguard::contribution::init_final_scores(&g, &missing),
        Err(masguard::contribution::ContributionError::MissingFinalStance(_))
    ));
}

fn arb_case() -> impl Strategy<Value = (u64, u32, u32)> {
    (any::<u64>(), 2u32..=8, 2u32..=6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn scores_stay_in_unit_interval((seed, agents, rounds) in arb_case(), scale in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_signed_dag(&mut rng, agents, rounds);
        let init: BTreeMap<_, _> = random_init(&mut rng, &g).into_iter().map(|(k, v)| (k, v * scale)).collect();
        let s = backpropagate(&g, &init).unwrap();
        prop_assert!(s.values().all(|v| v.abs() <= 1.0 + 1e-15));
        let t = total_scores(&s, &g.graph);
        prop_assert!(t.total.values().all(|v| v.abs() <= 1.0 + 1e-15));
    }

    #[test]
    fn linear_in_initial_scores((seed, agents, rounds) in arb_case(), c in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_signed_dag(&mut rng, agents, rounds);
        let init = random_init(&mut rng, &g);
        let base = backpropagate(&g, &init).unwrap();
        let scaled_init: BTreeMap<_, _> = init.iter().map(|(k, v)| (*k, v * c)).collect();
        let neg_init: BTreeMap<_, _> = init.iter().map(|(k, v)| (*k, -v)).collect();
        let scaled = backpropagate(&g, &scaled_init).unwrap();
        let neg = backpropagate(&g, &neg_init).unwrap();
        for (n, v) in &base {
            prop_assert!((scaled[n] - c * v).abs() < 1e-12);
            prop_assert_eq!(neg[n], -v);
        }
    }

    #[test]
    fn independent_of_edge_listing_order((seed, agents, rounds) in arb_case()) {
        // The oracle scans edges in whatever order they are stored; shuffle
        // them and compare with the production pass on the canonical graph.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_signed_dag(&mut rng, agents, rounds);
        let init = random_init(&mut rng, &g);
        let got = backpropagate(&g, &init).unwrap();
        let mut shuffled = g.clone();
        let mut pairs: Vec<_> = shuffled.graph.edges.drain(..).zip(shuffled.signs.drain(..)).collect();
        use rand::seq::SliceRandom;
        pairs.shuffle(&mut rng);
        for (e, s) in pairs {
            shuffled.graph.edges.push(e);
            shuffled.signs.push(s);
        }
        let mut oracle = Oracle::new(&shuffled, &init);
        for n in &g.graph.nodes {
            prop_assert!((got[n] - oracle.score_f64(*n)).abs() < 1e-12);
        }
    }

    #[test]
    fn detection_is_label_equivariant(totals in prop::collection::vec(-1.0f64..=1.0, 2..9), rot in 0usize..8, eps in 0.1f64..2.0) {
        let n = totals.len();
        let mk = |perm: &dyn Fn(usize) -> usize| AgentScores {
            total: (0..n).map(|i| (AgentId(perm(i) as u32), totals[i])).collect(),
            participation: (0..n).map(|i| (AgentId(perm(i) as u32), 1)).collect(),
        };
        let cfg = DetectionConfig { epsilon: eps };
        let a = detect(&mk(&|i| i), &cfg).unwrap();
        let b = detect(&mk(&|i| (i + rot) % n), &cfg).unwrap();
        let mapped: std::collections::BTreeSet<_> = a.flagged.iter().map(|x| AgentId(((x.0 as usize + rot) % n) as u32)).collect();
        let got: std::collections::BTreeSet<_> = b.flagged.iter().copied().collect();
        prop_assert_eq!(mapped, got);
        for (agent, d) in &b.deviations {
            prop_assert_eq!(b.flagged.contains(agent), *d >= eps);
        }
    }
}
