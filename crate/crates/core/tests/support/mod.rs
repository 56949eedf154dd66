//! Test-only oracles and generators shared by the core integration tests
//! and the CLI acceptance suite.

#![allow(dead_code)]

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reembody_core::dialogue::DialogueConfig;
use reembody_core::handoff::{execute_handoff, request_handoff};
use reembody_core::routes::{Edge, Node, RouteError, RouteGraph};
use reembody_core::{DeviceKind, DeviceProfile, DialoguePhase, LatencyModel, NodeId, SessionState, Utterance, VoiceConfig};
use serde_json::Value;

// ---- planner oracle -------------------------------------------------------------

/// Every simple path from `start`, keeping per destination the cheapest and
/// then lexicographically smallest. Exponential; fine for small graphs.
pub fn brute_force_all(g: &RouteGraph, start: &NodeId) -> Vec<(NodeId, f64, Vec<NodeId>)> {
    let mut best: std::collections::BTreeMap<NodeId, (f64, Vec<NodeId>)> = Default::default();
    let mut path = vec![start.clone()];
    walk(g, &mut path, 0.0, &mut best);
    best.into_iter().map(|(k, (c, p))| (k, c, p)).collect()
}

fn walk(
    g: &RouteGraph,
    path: &mut Vec<NodeId>,
    cost: f64,
    best: &mut std::collections::BTreeMap<NodeId, (f64, Vec<NodeId>)>,
) {
    let here = path.last().unwrap().clone();
    let better = match best.get(&here) {
        None => true,
        Some((c, p)) => match cost.total_cmp(c) {
            Ordering::Less => true,
            Ordering::Equal => path.as_slice() < p.as_slice(),
            Ordering::Greater => false,
        },
    };
    if better {
        best.insert(here.clone(), (cost, path.clone()));
    }
    let mut next: Vec<NodeId> = g.out_edges(&here).map(|e| e.to.clone()).collect();
    next.sort();
    next.dedup();
    for to in next {
        if path.contains(&to) {
            continue;
        }
        // Parallel edges: only the cheapest can matter.
        let c = g
            .out_edges(&here)
            .filter(|e| e.to == to)
            .map(|e| e.cost_m)
            .fold(f64::INFINITY, f64::min);
        path.push(to);
        walk(g, path, cost + c, best);
        path.pop();
    }
}

pub fn brute_force(g: &RouteGraph, start: &NodeId, dest: &NodeId) -> Option<Vec<NodeId>> {
    brute_force_all(g, start)
        .into_iter()
        .find(|(d, _, _)| d == dest)
        .map(|(_, _, p)| p)
}

/// All (start, dest) disagreements between the planner and the oracle.
pub fn planner_mismatches(g: &RouteGraph) -> Vec<String> {
    let ids: Vec<NodeId> = g.nodes().map(|n| n.id.clone()).collect();
    let mut out = Vec::new();
    for s in &ids {
        let oracle = brute_force_all(g, s);
        for d in &ids {
            let expected = oracle.iter().find(|(x, _, _)| x == d).map(|(_, _, p)| p.clone());
            match (g.plan_route(s, d), expected) {
                (Ok(plan), Some(p)) if plan.checkpoints == p => {}
                (Err(RouteError::NoRoute { .. }), None) => {}
                (got, want) => out.push(format!("{s}->{d}: planner {:?}, oracle {want:?}", got.map(|p| p.checkpoints))),
            }
        }
    }
    out
}

fn node(i: usize) -> Node {
    Node {
        id: NodeId::new(format!("n{i}")),
        label: format!("node {i}"),
        marker: None,
        position: (i as f64, 0.0),
    }
}

/// Random directed graph with small integer-ish costs so that cost ties,
/// and therefore the lexicographic tie-break, come up often.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, density: f64) -> RouteGraph {
    let nodes: Vec<Node> = (0..n).map(node).collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a == b || !rng.gen_bool(density) {
                continue;
            }
            let copies = if rng.gen_bool(0.1) { 2 } else { 1 };
            for _ in 0..copies {
                edges.push(Edge {
                    from: nodes[a].id.clone(),
                    to: nodes[b].id.clone(),
                    cost_m: rng.gen_range(1..=8) as f64 * 0.5,
                    heading_deg: rng.gen_range(0..360) as f64,
                });
            }
        }
    }
    RouteGraph::from_parts(nodes, edges, Vec::new()).expect("generated graph is valid")
}

fn line(n: usize, cost: f64) -> Vec<Edge> {
    (0..n.saturating_sub(1))
        .map(|i| Edge {
            from: NodeId::new(format!("n{i}")),
            to: NodeId::new(format!("n{}", i + 1)),
            cost_m: cost,
            heading_deg: 0.0,
        })
        .collect()
}

/// Hand-built edge cases plus random graphs of every size from 1 to 10.
pub fn oracle_test_set() -> Vec<RouteGraph> {
    let mut set = Vec::new();
    set.push(RouteGraph::from_parts(vec![node(0)], vec![], vec![]).unwrap());
    set.push(RouteGraph::from_parts((0..10).map(node).collect(), vec![], vec![]).unwrap());
    set.push(RouteGraph::from_parts((0..10).map(node).collect(), line(10, 1.0), vec![]).unwrap());
    // Diamond with equal branches: tie must go to n1.
    let e = |a: usize, b: usize, c: f64| Edge {
        from: NodeId::new(format!("n{a}")),
        to: NodeId::new(format!("n{b}")),
        cost_m: c,
        heading_deg: 0.0,
    };
    set.push(
        RouteGraph::from_parts(
            (0..4).map(node).collect(),
            vec![e(0, 2, 1.0), e(0, 1, 1.0), e(2, 3, 1.0), e(1, 3, 1.0)],
            vec![],
        )
        .unwrap(),
    );
    // Longer path in hops is cheaper.
    set.push(
        RouteGraph::from_parts(
            (0..4).map(node).collect(),
            vec![e(0, 3, 3.5), e(0, 1, 1.0), e(1, 2, 1.0), e(2, 3, 1.0)],
            vec![],
        )
        .unwrap(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    for n in 1..=10 {
        for density in [0.15, 0.3, 0.5] {
            for _ in 0..4 {
                set.push(random_graph(&mut rng, n, density));
            }
        }
    }
    set
}

/// 200 seeded random graphs with at most 8 nodes.
pub fn seeded_random_graphs() -> Vec<RouteGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    (0..200)
        .map(|_| {
            let n = rng.gen_range(1..=8);
            let density = rng.gen_range(0.1..0.7);
            random_graph(&mut rng, n, density)
        })
        .collect()
}

// ---- session fuzzing --------------------------------------------------------------

pub fn robot() -> DeviceProfile {
    DeviceProfile::stationary("robot1", LatencyModel::ZERO).at("booth")
}

pub fn watch() -> DeviceProfile {
    DeviceProfile::wearable("watch1", LatencyModel::ZERO)
}

/// A random but invariant-respecting session whose phase allows a hand-off.
pub fn fuzz_session(seed: u64, g: &RouteGraph) -> SessionState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<NodeId> = g.nodes().map(|n| n.id.clone()).collect();
    let pick = |rng: &mut ChaCha8Rng| ids[rng.gen_range(0..ids.len())].clone();
    let voice = VoiceConfig::new(format!("voice_{}", rng.gen_range(0..5)), rng.gen_range(0.5..2.0)).unwrap();
    let mut s = SessionState::new_session(format!("s{seed}"), &robot(), voice).unwrap();
    s.known_location = rng.gen_bool(0.7).then(|| pick(&mut rng));
    s.destination = rng.gen_bool(0.6).then(|| pick(&mut rng));
    s.phase = if s.known_location.is_none() {
        DialoguePhase::ElicitingLocation
    } else {
        DialoguePhase::ElicitingDestination
    };
    if rng.gen_bool(0.6) {
        // Guiding needs a plan with at least one leg.
        for _ in 0..20 {
            let (a, b) = (pick(&mut rng), pick(&mut rng));
            if let Ok(plan) = g.plan_route(&a, &b) {
                if !plan.legs.is_empty() {
                    s.step_index = rng.gen_range(0..plan.legs.len());
                    s.known_location = Some(plan.checkpoints[s.step_index].clone());
                    s.destination = Some(b);
                    s.route_plan = Some(plan);
                    s.phase = DialoguePhase::Guiding;
                    break;
                }
            }
        }
    }
    let mut t = 0;
    for i in 0..rng.gen_range(0..12) {
        t += rng.gen_range(0..5_000);
        let text: String = (0..rng.gen_range(1..8)).map(|_| ["where", "cafe", "hi", "next", "the", "ok"][rng.gen_range(0..6)]).collect::<Vec<_>>().join(" ");
        let u = if i % 2 == 0 {
            Utterance::user(text, "robot1", t)
        } else {
            Utterance::assistant(text, "robot1", t)
        };
        s.push_turn(u).unwrap();
    }
    s.check_invariants().expect("fuzzed session is valid");
    s
}

/// Description of how the canonical forms around one hand-off differ
/// beyond the allowed fields, or `None` when the invariant holds.
pub fn transfer_violation(seed: u64, g: &RouteGraph) -> Option<String> {
    let cfg = DialogueConfig::shipped();
    let before = fuzz_session(seed, g);
    let devices = vec![robot(), watch()];
    let req = match request_handoff(&before, DeviceKind::Wearable, &devices, cfg, g) {
        Ok(r) => r,
        Err(e) => return Some(format!("request rejected: {}", e.error)),
    };
    let target = req.target?;
    let at = before.last_timestamp().unwrap_or(0) + 3_960;
    let after = match execute_handoff(&req.session, &target, at, cfg) {
        Ok(x) => x.session,
        Err(e) => return Some(format!("execute failed: {e}")),
    };
    let mut a: Value = serde_json::from_str(&before.to_canonical()).unwrap();
    let mut b: Value = serde_json::from_str(&after.to_canonical()).unwrap();
    let ta = a["transcript"].as_array().unwrap().clone();
    let tb = b["transcript"].as_array().unwrap().clone();
    if tb.len() != ta.len() + 1 || tb[..ta.len()] != ta[..] {
        return Some("transcript is not before + one turn".into());
    }
    let greeting = &tb[ta.len()];
    if greeting["speaker"] != "assistant" || greeting["device_id"] != "watch1" {
        return Some(format!("unexpected appended turn {greeting}"));
    }
    if b["active_device"] != "watch1" {
        return Some("active device not moved".into());
    }
    for v in [&mut a, &mut b] {
        let o = v.as_object_mut().unwrap();
        o.remove("active_device");
        o.remove("transcript");
    }
    (a != b).then(|| format!("fields differ:\n{a}\n{b}"))
}
